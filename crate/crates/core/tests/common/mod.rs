#![allow(dead_code)]

use std::path::PathBuf;

use hmt_core::QaPair;
use serde::Deserialize;

/// Core tasks in table order, with their fixture slugs.
pub const CORE: [(&str, &str); 6] = [
    ("bio", "bio"),
    ("travel plan", "travel_plan"),
    ("dialogue", "dialogue"),
    ("poem", "poem"),
    ("event summary", "event_summary"),
    ("story", "story"),
];

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn read_fixture(rel: &str) -> String {
    let path = fixtures().join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[derive(Debug, Deserialize)]
pub struct Sample {
    pub task: String,
    pub qa_pairs: Vec<QaPair>,
    pub output_batches: Vec<String>,
}

impl Sample {
    pub fn load(slug: &str) -> Self {
        serde_json::from_str(&read_fixture(&format!("samples/{slug}.json"))).unwrap()
    }

    pub fn questions(&self) -> Vec<String> {
        self.qa_pairs.iter().map(|p| p.question.clone()).collect()
    }

    pub fn answers(&self) -> Vec<(usize, String)> {
        self.qa_pairs.iter().map(|p| p.answer.clone()).enumerate().collect()
    }

    pub fn final_output(&self) -> String {
        self.output_batches.join("\n\n")
    }
}

/// Similarity threshold used when replaying a task's sample. The bio sample
/// holds distinct questions whose token sets overlap by up to 0.875.
pub fn replay_threshold(slug: &str) -> f64 {
    if slug == "bio" {
        0.9
    } else {
        0.8
    }
}
