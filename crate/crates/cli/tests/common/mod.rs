#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Core tasks with their fixture slugs.
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

pub fn replay(slug: &str) -> PathBuf {
    fixtures().join(format!("replay/{slug}.json"))
}

#[derive(Debug, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Deserialize)]
pub struct Sample {
    pub task: String,
    pub qa_pairs: Vec<QaPair>,
    pub output_batches: Vec<String>,
}

impl Sample {
    pub fn load(slug: &str) -> Self {
        let path = fixtures().join(format!("samples/{slug}.json"));
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    pub fn final_output(&self) -> String {
        self.output_batches.join("\n\n")
    }

    /// One answer per line, as typed at the prompt.
    pub fn stdin(&self) -> String {
        self.qa_pairs.iter().map(|p| format!("{}\n", p.answer)).collect()
    }
}

/// Writes a fixture holding only the Stage-3 replies of `slug`'s replay.
pub fn output_fixture(slug: &str, dir: &Path) -> PathBuf {
    let replies: Vec<String> = serde_json::from_str(&std::fs::read_to_string(replay(slug)).unwrap()).unwrap();
    let n = Sample::load(slug).output_batches.len();
    let path = dir.join(format!("{slug}.output.json"));
    std::fs::write(&path, serde_json::to_string(&replies[replies.len() - n..]).unwrap()).unwrap();
    path
}

pub fn threshold(slug: &str) -> &'static str {
    if slug == "bio" {
        "0.9"
    } else {
        "0.8"
    }
}
