//! Near-duplicate detection for generated questions.

use std::collections::BTreeSet;

/// Lowercases, drops everything but letters, digits and whitespace, and
/// collapses runs of whitespace.
pub fn normalize(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// Jaccard index of the normalized token sets. Two empty sets score 1.
pub fn jaccard(a: &str, b: &str) -> f64 {
    set_jaccard(&token_set(a), &token_set(b))
}

fn set_jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let shared = a.intersection(b).count();
    let union = a.len() + b.len() - shared;
    if union == 0 {
        return 1.0;
    }
    shared as f64 / union as f64
}

/// True iff `candidate` normalizes to an accepted question or shares at
/// least `threshold` of its token set with one.
pub fn is_repetitive(candidate: &str, accepted: &[String], threshold: f64) -> bool {
    let norm = normalize(candidate);
    let tokens = token_set(candidate);
    accepted.iter().any(|q| {
        let other = normalize(q);
        other == norm || set_jaccard(&tokens, &token_set(&other)) >= threshold
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_duplicate() {
        assert!(is_repetitive(
            "What is your favorite color?",
            &["What is your favorite color?".into()],
            0.8
        ));
    }

    #[test]
    fn distinct_poem_questions() {
        assert_eq!(jaccard("What is the mood?", "What is the occasion?"), 0.6);
        assert!(!is_repetitive(
            "What is the mood?",
            &["What is the occasion?".into()],
            0.8
        ));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  what is the MOOD ?"), "what is the mood");
        assert!(is_repetitive("what is the MOOD ?", &["What is the mood?".into()], 0.8));
        assert_eq!(
            normalize("What do you do when you’re bored?"),
            "what do you do when youre bored"
        );
    }

    #[test]
    fn empty_accepted_never_repetitive() {
        assert!(!is_repetitive("What?", &[], 0.1));
    }

    proptest! {
        #[test]
        fn jaccard_is_symmetric_and_bounded(a in "[a-d ?]{0,20}", b in "[a-d ?]{0,20}") {
            let j = jaccard(&a, &b);
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert_eq!(j, jaccard(&b, &a));
        }

        #[test]
        fn self_is_always_repetitive(q in "[a-zA-Z ?]{1,30}", t in 0.01f64..=1.0) {
            prop_assert!(is_repetitive(&q, std::slice::from_ref(&q), t));
        }
    }
}
