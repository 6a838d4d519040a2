//! Deterministic backend replaying canned replies.
//!
//! Fixture files are JSON arrays. Each entry is either a bare string or an
//! object `{"reply": "...", "prompt_hash": "<sha256 hex>"}`. A fixture where
//! every entry carries a `prompt_hash` replays by prompt; anything else
//! replays in order.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{apply_stops, BackendError, CompletionBackend, CompletionRequest, CompletionResult, FinishReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Sequence,
    PromptHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Keyed {
        reply: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt_hash: Option<String>,
    },
}

impl ScriptedReply {
    pub fn reply(&self) -> &str {
        match self {
            ScriptedReply::Text(t) => t,
            ScriptedReply::Keyed { reply, .. } => reply,
        }
    }

    pub fn prompt_hash(&self) -> Option<&str> {
        match self {
            ScriptedReply::Text(_) => None,
            ScriptedReply::Keyed { prompt_hash, .. } => prompt_hash.as_deref(),
        }
    }

    pub fn keyed(prompt: &str, reply: impl Into<String>) -> Self {
        ScriptedReply::Keyed {
            reply: reply.into(),
            prompt_hash: Some(prompt_hash(prompt)),
        }
    }
}

impl From<&str> for ScriptedReply {
    fn from(s: &str) -> Self {
        ScriptedReply::Text(s.to_string())
    }
}

impl From<String> for ScriptedReply {
    fn from(s: String) -> Self {
        ScriptedReply::Text(s)
    }
}

/// Stable key for prompt-hash fixtures: lowercase hex SHA-256 of the prompt text.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug)]
pub struct ScriptedBackend {
    mode: MatchMode,
    replies: Vec<ScriptedReply>,
    by_hash: HashMap<String, usize>,
    cursor: Mutex<usize>,
}

pub fn scripted_backend(fixture: Vec<ScriptedReply>, matching: MatchMode) -> Result<ScriptedBackend, BackendError> {
    ScriptedBackend::new(fixture, matching)
}

impl ScriptedBackend {
    pub fn new(fixture: Vec<ScriptedReply>, mode: MatchMode) -> Result<Self, BackendError> {
        if fixture.is_empty() {
            return Err(BackendError::EmptyFixture);
        }
        let mut by_hash = HashMap::new();
        if mode == MatchMode::PromptHash {
            for (i, entry) in fixture.iter().enumerate() {
                let hash = entry
                    .prompt_hash()
                    .ok_or_else(|| BackendError::InvalidFixture(format!("entry {i} has no prompt_hash")))?;
                if by_hash.insert(hash.to_string(), i).is_some() {
                    return Err(BackendError::InvalidFixture(format!("duplicate prompt_hash {hash}")));
                }
            }
        }
        Ok(Self {
            mode,
            replies: fixture,
            by_hash,
            cursor: Mutex::new(0),
        })
    }

    /// Sequence-mode backend from plain strings.
    pub fn sequence<I, S>(replies: I) -> Result<Self, BackendError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            replies.into_iter().map(|r| ScriptedReply::Text(r.into())).collect(),
            MatchMode::Sequence,
        )
    }

    /// Parses a fixture document, picking prompt-hash mode when every entry is keyed.
    pub fn from_json(document: &str) -> Result<Self, BackendError> {
        let fixture: Vec<ScriptedReply> =
            serde_json::from_str(document).map_err(|e| BackendError::InvalidFixture(e.to_string()))?;
        let mode = if !fixture.is_empty() && fixture.iter().all(|r| r.prompt_hash().is_some()) {
            MatchMode::PromptHash
        } else {
            MatchMode::Sequence
        };
        Self::new(fixture, mode)
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidFixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    /// Number of sequence-mode replies not yet consumed.
    pub fn remaining(&self) -> usize {
        match self.mode {
            MatchMode::Sequence => self.replies.len() - *self.cursor.lock().unwrap(),
            MatchMode::PromptHash => self.replies.len(),
        }
    }

    fn next_reply(&self, request: &CompletionRequest) -> Result<&str, BackendError> {
        match self.mode {
            MatchMode::Sequence => {
                let mut cursor = self.cursor.lock().unwrap();
                let reply = self.replies.get(*cursor).ok_or(BackendError::FixtureExhausted)?;
                *cursor += 1;
                Ok(reply.reply())
            }
            MatchMode::PromptHash => self
                .by_hash
                .get(&prompt_hash(request.prompt.as_str()))
                .map(|&i| self.replies[i].reply())
                .ok_or(BackendError::FixtureExhausted),
        }
    }
}

/// Byte offset where the `(limit + 1)`-th whitespace-separated token starts.
fn token_cut(text: &str, limit: usize) -> Option<usize> {
    let mut tokens = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            tokens += 1;
            if tokens > limit {
                return Some(i);
            }
        }
    }
    None
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        request.validate()?;
        let canned = self.next_reply(request)?;
        let (text, matched) = apply_stops(canned, &request.config.stop_sequences);
        if let Some(cut) = token_cut(text, request.config.max_tokens as usize) {
            return Ok(CompletionResult {
                text: text[..cut].trim_end().to_string(),
                finish_reason: FinishReason::Length,
                matched_stop: None,
            });
        }
        Ok(match matched {
            Some(stop) => CompletionResult::stopped(text, stop),
            None => CompletionResult::ended(text),
        })
    }
}
