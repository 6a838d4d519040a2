//! Session state and its event log.

use std::ops::Range;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::backend::GenerationConfig;
use crate::clock::Clock;
use crate::prompt::{QaPair, Voice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    GeneratingQuestions,
    AwaitingAnswers,
    GeneratingOutput,
    Complete,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::GeneratingQuestions => "generating_questions",
            Stage::AwaitingAnswers => "awaiting_answers",
            Stage::GeneratingOutput => "generating_output",
            Stage::Complete => "complete",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Stage::GeneratingQuestions,
            Stage::AwaitingAnswers,
            Stage::GeneratingOutput,
            Stage::Complete,
        ]
        .into_iter()
        .find(|stage| stage.as_str() == s.replace('-', "_"))
        .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NonQuestion,
    Repetitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStop {
    MaxQuestions,
    ConsecutiveRejects,
    RejectBudget,
    BackendExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        task: String,
        voice: Voice,
    },
    QuestionAccepted {
        index: usize,
        question: String,
    },
    QuestionRejected {
        reason: RejectReason,
        candidate: String,
        /// Number of escalation overrides in force for the call.
        escalation: usize,
    },
    QuestionLoopEnded {
        reason: LoopStop,
        calls: usize,
    },
    AnswerFilled {
        index: usize,
    },
    BatchCompleted {
        batch: usize,
        start: usize,
        end: usize,
    },
    StageChanged {
        from: Stage,
        to: Stage,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub at: DateTime<Utc>,
    pub event: SessionEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: Uuid,
    pub task_name: String,
    pub voice: Voice,
    pub stage: Stage,
    pub questions: Vec<String>,
    pub answers: Vec<Option<String>>,
    pub batches: Vec<Range<usize>>,
    pub outputs: Vec<String>,
    pub final_output: Option<String>,
    pub config_used: GenerationConfig,
    pub event_log: Vec<LogEntry>,
}

impl Session {
    pub fn new(task_name: &str, voice: Voice, config: GenerationConfig, clock: &dyn Clock) -> Self {
        let mut session = Self {
            id: Uuid::new_v4(),
            task_name: task_name.to_string(),
            voice,
            stage: Stage::GeneratingQuestions,
            questions: Vec::new(),
            answers: Vec::new(),
            batches: Vec::new(),
            outputs: Vec::new(),
            final_output: None,
            config_used: config,
            event_log: Vec::new(),
        };
        session.record(
            clock,
            SessionEvent::Created {
                task: task_name.to_string(),
                voice,
            },
        );
        session
    }

    pub fn record(&mut self, clock: &dyn Clock, event: SessionEvent) {
        let at = clock.tick(self.event_log.last().map(|e| e.at));
        self.event_log.push(LogEntry { at, event });
    }

    /// Moves to `to`, logging the change. Callers only ever advance.
    pub(crate) fn advance(&mut self, clock: &dyn Clock, to: Stage) {
        debug_assert!(to > self.stage, "stage {} -> {to}", self.stage);
        let from = self.stage;
        self.stage = to;
        self.record(clock, SessionEvent::StageChanged { from, to });
    }

    pub fn all_answered(&self) -> bool {
        self.answers
            .iter()
            .all(|a| a.as_deref().is_some_and(|a| !a.trim().is_empty()))
    }

    /// Answered pairs, in question order. `None` if any answer is missing.
    pub fn qa_pairs(&self) -> Option<Vec<QaPair>> {
        self.questions
            .iter()
            .zip(&self.answers)
            .map(|(q, a)| a.as_ref().map(|a| QaPair::new(q.clone(), a.clone())))
            .collect()
    }

    /// Checks the structural invariants every persisted session must satisfy.
    pub fn validate(&self) -> Result<(), String> {
        if self.answers.len() != self.questions.len() {
            return Err(format!(
                "{} answers for {} questions",
                self.answers.len(),
                self.questions.len()
            ));
        }
        if self.stage >= Stage::AwaitingAnswers && self.questions.is_empty() {
            return Err(format!("stage {} with no questions", self.stage));
        }
        if self.stage >= Stage::GeneratingOutput && !self.all_answered() {
            return Err(format!("stage {} with unanswered questions", self.stage));
        }
        match (&self.final_output, self.stage) {
            (Some(out), Stage::Complete) => {
                if *out != self.outputs.join(super::OUTPUT_SEPARATOR) {
                    return Err("final output does not match batch outputs".into());
                }
                if self.outputs.len() != self.batches.len() {
                    return Err("one output per batch required".into());
                }
            }
            (None, Stage::Complete) => return Err("complete session without final output".into()),
            (Some(_), stage) => return Err(format!("final output present at stage {stage}")),
            (None, _) => {}
        }
        let mut next = 0;
        for range in &self.batches {
            if range.start != next || range.end <= range.start {
                return Err("batches must be contiguous and non-empty".into());
            }
            next = range.end;
        }
        if !self.batches.is_empty() && next != self.questions.len() {
            return Err("batches do not cover every question".into());
        }
        Ok(())
    }
}
