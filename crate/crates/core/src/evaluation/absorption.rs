//! Heuristic check of which answers made it into an output. Advisory only:
//! reports are computed from human annotations, never from this.

use std::collections::{BTreeSet, HashSet};

use crate::pipeline::normalize;
use crate::prompt::QaPair;

const CONTENT_SHARE: f64 = 0.6;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "he", "her", "his", "i",
    "in", "is", "it", "its", "me", "my", "no", "not", "of", "on", "or", "our", "she", "so", "that", "the", "their",
    "them", "they", "this", "to", "was", "we", "were", "with", "you", "your",
];

fn tokens(text: &str) -> Vec<String> {
    normalize(text).split_whitespace().map(String::from).collect()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}

/// Indices of pairs whose answer does not appear in `output`.
pub fn auto_absorption_check(qa_pairs: &[QaPair], output: &str) -> BTreeSet<usize> {
    let out = tokens(output);
    let vocabulary: HashSet<&str> = out.iter().map(String::as_str).collect();
    qa_pairs
        .iter()
        .enumerate()
        .filter(|(_, pair)| {
            let answer = tokens(&pair.answer);
            if contains_run(&out, &answer) {
                return false;
            }
            let content: Vec<&String> = answer.iter().filter(|t| !STOPWORDS.contains(&t.as_str())).collect();
            if content.is_empty() {
                return true;
            }
            let found = content.iter().filter(|t| vocabulary.contains(t.as_str())).count();
            (found as f64) < CONTENT_SHARE * content.len() as f64
        })
        .map(|(i, _)| i)
        .collect()
}
