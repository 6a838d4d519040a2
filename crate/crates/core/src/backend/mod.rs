//! Completion backends.
//!
//! Every backend speaks the same [`CompletionBackend`] contract: one prompt
//! in, one completion out, with stop sequences applied and the finish reason
//! reported. Two implementations ship: [`ScriptedBackend`] replays canned
//! replies for tests and offline demos, [`HttpBackend`] talks to an
//! OpenAI-compatible completions service.

mod http;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptText;

pub use http::{http_backend, HttpBackend, HttpBackendConfig, API_KEY_ENV};
pub use scripted::{prompt_hash, scripted_backend, MatchMode, ScriptedBackend, ScriptedReply};

pub const MAX_STOP_SEQUENCES: usize = 4;

/// Decoding parameters. Defaults follow the original davinci-002 setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 512,
            top_p: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            stop_sequences: Vec::new(),
        }
    }
}

impl GenerationConfig {
    pub fn with_stops<I, S>(mut self, stops: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stop_sequences = stops.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidRequest(m));
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} outside (0, 1]", self.top_p));
        }
        if !self.frequency_penalty.is_finite() || !self.presence_penalty.is_finite() {
            return bad("penalties must be finite".into());
        }
        if self.stop_sequences.len() > MAX_STOP_SEQUENCES {
            return bad(format!("at most {MAX_STOP_SEQUENCES} stop sequences"));
        }
        if self.stop_sequences.iter().any(String::is_empty) {
            return bad("empty stop sequence".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionMode {
    #[default]
    Completion,
    Chat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: PromptText,
    pub config: GenerationConfig,
    pub mode: CompletionMode,
}

impl CompletionRequest {
    pub fn new(prompt: PromptText, config: GenerationConfig, mode: CompletionMode) -> Self {
        Self { prompt, config, mode }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        self.config.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    StopSequence,
    Length,
    End,
}

/// Raw completion. `matched_stop` is set iff `finish_reason` is `StopSequence`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    pub matched_stop: Option<String>,
}

impl CompletionResult {
    pub fn ended(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::End,
            matched_stop: None,
        }
    }

    pub fn stopped(text: impl Into<String>, stop: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::StopSequence,
            matched_stop: Some(stop.into()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("server rejected request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("scripted fixture exhausted")]
    FixtureExhausted,
    #[error("scripted fixture is empty")]
    EmptyFixture,
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError>;
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        (**self).complete(request)
    }
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for &T {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        (**self).complete(request)
    }
}

/// Validates `request` and dispatches it to `backend`.
pub fn complete(
    backend: &dyn CompletionBackend,
    request: &CompletionRequest,
) -> Result<CompletionResult, BackendError> {
    request.validate()?;
    backend.complete(request)
}

/// Truncates `text` at the earliest occurrence of any stop sequence, dropping
/// the stop itself. Ties at the same offset go to the longest stop, then the
/// lexicographically smallest, so the result does not depend on list order.
pub fn apply_stops<'t>(text: &'t str, stops: &[String]) -> (&'t str, Option<String>) {
    let best = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()).map(|at| (at, s)))
        .min_by(|(a, s), (b, t)| a.cmp(b).then(t.len().cmp(&s.len())).then(s.cmp(t)));
    match best {
        Some((at, stop)) => (&text[..at], Some(stop.clone())),
        None => (text, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults() {
        let c = GenerationConfig::default();
        assert_eq!(c.temperature, 0.7);
        assert_eq!(c.max_tokens, 512);
        assert_eq!(c.top_p, 1.0);
        assert_eq!(c.frequency_penalty, 0.0);
        assert_eq!(c.presence_penalty, 0.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn range_checks() {
        let c = GenerationConfig {
            temperature: -1.0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(BackendError::InvalidRequest(_))));
        let c = GenerationConfig {
            top_p: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = GenerationConfig::default().with_stops(["a", "b", "c", "d", "e"]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn stop_truncation() {
        let stops = vec!["?".to_string()];
        assert_eq!(apply_stops("A? B", &stops), ("A", Some("?".into())));
        let stops = vec!["Answer:".to_string()];
        assert_eq!(
            apply_stops("What is the occasion?\nAnswer: ...", &stops),
            ("What is the occasion?\n", Some("Answer:".into()))
        );
        assert_eq!(apply_stops("no stops here", &stops), ("no stops here", None));
    }

    #[test]
    fn tie_prefers_longest() {
        let a = vec!["A".to_string(), "Answer:".to_string()];
        let b = vec!["Answer:".to_string(), "A".to_string()];
        assert_eq!(apply_stops("x Answer: y", &a), apply_stops("x Answer: y", &b));
        assert_eq!(apply_stops("x Answer: y", &a).1.as_deref(), Some("Answer:"));
    }

    proptest! {
        #[test]
        fn stops_never_survive(text in "[a-c?\n ]{0,40}", stops in proptest::collection::vec("[a-c?\n]{1,3}", 0..4)) {
            let (out, matched) = apply_stops(&text, &stops);
            for s in &stops {
                prop_assert!(!out.contains(s.as_str()));
            }
            prop_assert_eq!(matched.is_some(), stops.iter().any(|s| text.contains(s.as_str())));
            // idempotent
            let (again, _) = apply_stops(out, &stops);
            prop_assert_eq!(again, out);
            // order independent
            let mut rev = stops.clone();
            rev.reverse();
            prop_assert_eq!(apply_stops(&text, &rev), (out, matched));
        }
    }
}
