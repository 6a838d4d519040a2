//! The three-stage protocol: the model asks questions, the user answers
//! them, the model writes the output from the answered pairs.

mod session;
mod similarity;

use std::num::NonZeroUsize;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    BackendError, CompletionBackend, CompletionMode, CompletionRequest, CompletionResult, GenerationConfig,
};
use crate::catalog::{TaskSpec, QUESTION_CUE};
use crate::clock::{Clock, SystemClock};
use crate::prompt::{
    build_transcript, render_output_prompt, render_question_prompt_with, PromptError, QuestionHints, Voice,
    ANSWER_LABEL,
};

pub use session::{LogEntry, LoopStop, RejectReason, Session, SessionEvent, Stage};
pub use similarity::{is_repetitive, jaccard, normalize, token_set};

/// Separator between batch outputs in the final output.
pub const OUTPUT_SEPARATOR: &str = "\n\n";

/// Server-side stop for Stage-1 calls. The model's ephemeral answer comes
/// back with the question and is cut client-side.
pub const STAGE1_STOP: &str = "\nQuestion:";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("the model produced no usable questions")]
    NoQuestionsProduced,
    #[error("not a question: {0:?}")]
    NonQuestion(String),
    #[error("session is at stage {actual}, expected {expected}")]
    WrongStage { expected: Stage, actual: Stage },
    #[error("answer index {index} out of range for {len} questions")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("answer {0} is blank")]
    BlankAnswer(usize),
    #[error("backend returned an empty completion for batch {0}")]
    EmptyCompletion(usize),
    #[error("session belongs to task `{session}`, not `{task}`")]
    TaskMismatch { session: String, task: String },
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One escalation step applied after a rejected completion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigOverride {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    /// Extra line appended to the Stage-1 preamble.
    pub instruction: Option<String>,
    /// Show the task's first bank question as an example.
    pub example_question: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionLoopLimits {
    pub max_questions: usize,
    pub similarity_threshold: f64,
    pub max_consecutive_rejects: usize,
    pub escalation_schedule: Vec<ConfigOverride>,
}

impl Default for QuestionLoopLimits {
    fn default() -> Self {
        Self {
            max_questions: 32,
            similarity_threshold: 0.8,
            max_consecutive_rejects: 3,
            escalation_schedule: vec![
                ConfigOverride {
                    temperature: Some(0.9),
                    ..Default::default()
                },
                ConfigOverride {
                    example_question: true,
                    ..Default::default()
                },
            ],
        }
    }
}

impl QuestionLoopLimits {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidLimits(m.into()));
        if self.max_questions == 0 {
            return bad("max_questions must be at least 1");
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return bad("similarity_threshold must be in (0, 1]");
        }
        if self.max_consecutive_rejects == 0 {
            return bad("max_consecutive_rejects must be at least 1");
        }
        Ok(())
    }

    /// Most backend calls a question loop can make.
    pub fn call_bound(&self) -> usize {
        self.max_questions + self.reject_budget()
    }

    fn reject_budget(&self) -> usize {
        self.max_consecutive_rejects * (1 + self.escalation_schedule.len())
    }
}

pub fn mode_for(voice: Voice) -> CompletionMode {
    match voice {
        Voice::FirstPerson => CompletionMode::Completion,
        Voice::SecondPerson => CompletionMode::Chat,
    }
}

pub fn stage1_config() -> GenerationConfig {
    GenerationConfig::default().with_stops([STAGE1_STOP])
}

pub fn stage3_config() -> GenerationConfig {
    GenerationConfig::default()
}

/// Splits a Stage-1 completion into the question and the model's ephemeral answer.
fn split_completion(result: &CompletionResult) -> (String, Option<String>) {
    let text = result.text.trim_start();
    let text = text.strip_prefix(QUESTION_CUE).unwrap_or(text);
    let cut = [text.find(ANSWER_LABEL), text.find('\n')].into_iter().flatten().min();
    let (question, rest) = match cut {
        Some(at) => text.split_at(at),
        None => (text, ""),
    };
    let mut question = question.trim().to_string();
    if result.matched_stop.as_deref() == Some("?") && !question.is_empty() {
        question.push('?');
    }
    let answer = rest.find(ANSWER_LABEL).and_then(|at| {
        let after = &rest[at + ANSWER_LABEL.len()..];
        let line = after.split('\n').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| line.to_string())
    });
    (question, answer)
}

/// Cleans a Stage-1 completion down to the question it asks.
pub fn extract_question(result: &CompletionResult) -> Result<String, PipelineError> {
    let (question, _) = split_completion(result);
    if question.ends_with('?') && question.len() > 1 {
        Ok(question)
    } else {
        Err(PipelineError::NonQuestion(question))
    }
}

/// Stage 1 on the wall clock.
pub fn generate_questions(
    backend: &dyn CompletionBackend,
    task: &TaskSpec,
    limits: &QuestionLoopLimits,
    voice: Voice,
) -> Result<Session, PipelineError> {
    generate_questions_with(backend, task, limits, voice, &SystemClock)
}

pub fn generate_questions_with(
    backend: &dyn CompletionBackend,
    task: &TaskSpec,
    limits: &QuestionLoopLimits,
    voice: Voice,
    clock: &dyn Clock,
) -> Result<Session, PipelineError> {
    let session = Session::new(&task.name, voice, stage1_config(), clock);
    generate_questions_for(backend, task, limits, &session, clock)
}

/// Runs Stage 1 on a session created earlier, leaving the input untouched on error.
pub fn generate_questions_for(
    backend: &dyn CompletionBackend,
    task: &TaskSpec,
    limits: &QuestionLoopLimits,
    session: &Session,
    clock: &dyn Clock,
) -> Result<Session, PipelineError> {
    limits.validate()?;
    if session.stage != Stage::GeneratingQuestions {
        return Err(PipelineError::WrongStage {
            expected: Stage::GeneratingQuestions,
            actual: session.stage,
        });
    }
    if session.task_name != task.name {
        return Err(PipelineError::TaskMismatch {
            session: session.task_name.clone(),
            task: task.name.clone(),
        });
    }
    let voice = session.voice;
    let base = stage1_config();
    let mode = mode_for(voice);
    let mut session = session.clone();
    session.config_used = base.clone();
    let mut ephemeral: Vec<Option<String>> = vec![None; session.questions.len()];
    let (mut streak, mut rejects, mut calls) = (0usize, 0usize, 0usize);

    let stop = loop {
        if session.questions.len() >= limits.max_questions {
            break LoopStop::MaxQuestions;
        }
        if streak >= limits.max_consecutive_rejects {
            break LoopStop::ConsecutiveRejects;
        }
        if rejects >= limits.reject_budget() {
            break LoopStop::RejectBudget;
        }

        let escalation = streak.min(limits.escalation_schedule.len());
        let mut config = base.clone();
        let mut hints = QuestionHints::default();
        for step in &limits.escalation_schedule[..escalation] {
            if let Some(t) = step.temperature {
                config.temperature = t;
            }
            if let Some(m) = step.max_tokens {
                config.max_tokens = m;
            }
            if step.instruction.is_some() {
                hints.instruction.clone_from(&step.instruction);
            }
            if step.example_question {
                hints.example_question = task.question_bank.first().cloned();
            }
        }

        let transcript = build_transcript(&session.questions, &ephemeral)?;
        let prompt = render_question_prompt_with(task, &transcript, voice, &hints)?;
        calls += 1;
        let result = match backend.complete(&CompletionRequest::new(prompt, config, mode)) {
            Ok(r) => r,
            Err(BackendError::FixtureExhausted) => break LoopStop::BackendExhausted,
            Err(e) => return Err(e.into()),
        };

        let (_, answer) = split_completion(&result);
        let verdict = match extract_question(&result) {
            Err(PipelineError::NonQuestion(text)) => Err((RejectReason::NonQuestion, text)),
            Err(e) => return Err(e),
            Ok(q) if is_repetitive(&q, &session.questions, limits.similarity_threshold) => {
                Err((RejectReason::Repetitive, q))
            }
            Ok(q) => Ok(q),
        };
        match verdict {
            Ok(question) => {
                streak = 0;
                let index = session.questions.len();
                session.questions.push(question.clone());
                session.answers.push(None);
                ephemeral.push(answer);
                session.record(clock, SessionEvent::QuestionAccepted { index, question });
            }
            Err((reason, candidate)) => {
                streak += 1;
                rejects += 1;
                session.record(
                    clock,
                    SessionEvent::QuestionRejected {
                        reason,
                        candidate,
                        escalation,
                    },
                );
            }
        }
    };

    session.record(clock, SessionEvent::QuestionLoopEnded { reason: stop, calls });
    if session.questions.is_empty() {
        return Err(PipelineError::NoQuestionsProduced);
    }
    session.advance(clock, Stage::AwaitingAnswers);
    Ok(session)
}

/// Stage 2 on the wall clock.
pub fn fill_answers(session: &Session, answers: &[(usize, String)]) -> Result<Session, PipelineError> {
    fill_answers_with(session, answers, &SystemClock)
}

/// Records user answers. All answers are checked before any is applied.
pub fn fill_answers_with(
    session: &Session,
    answers: &[(usize, String)],
    clock: &dyn Clock,
) -> Result<Session, PipelineError> {
    if session.stage != Stage::AwaitingAnswers {
        return Err(PipelineError::WrongStage {
            expected: Stage::AwaitingAnswers,
            actual: session.stage,
        });
    }
    let len = session.questions.len();
    for (index, text) in answers {
        if *index >= len {
            return Err(PipelineError::IndexOutOfRange { index: *index, len });
        }
        if text.trim().is_empty() {
            return Err(PipelineError::BlankAnswer(*index));
        }
    }
    let mut next = session.clone();
    for (index, text) in answers {
        next.answers[*index] = Some(text.trim().to_string());
        next.record(clock, SessionEvent::AnswerFilled { index: *index });
    }
    if next.all_answered() {
        next.advance(clock, Stage::GeneratingOutput);
    }
    Ok(next)
}

/// Splits `pair_count` pairs into contiguous batches of at most `batch_size`,
/// or a single batch when the pairs depend on each other.
pub fn partition_batches(pair_count: usize, batch_size: NonZeroUsize, dependent: bool) -> Vec<Range<usize>> {
    if pair_count == 0 {
        return Vec::new();
    }
    if dependent {
        return std::iter::once(0..pair_count).collect();
    }
    let size = batch_size.get();
    (0..pair_count)
        .step_by(size)
        .map(|start| start..(start + size).min(pair_count))
        .collect()
}

/// Stage 3 on the wall clock.
pub fn generate_output(
    backend: &dyn CompletionBackend,
    session: &Session,
    task: &TaskSpec,
    batch_size: NonZeroUsize,
) -> Result<Session, PipelineError> {
    generate_output_with(backend, session, task, batch_size, &SystemClock)
}

/// Renders and completes one Stage-3 prompt per batch. On error the input
/// session is left as it was.
pub fn generate_output_with(
    backend: &dyn CompletionBackend,
    session: &Session,
    task: &TaskSpec,
    batch_size: NonZeroUsize,
    clock: &dyn Clock,
) -> Result<Session, PipelineError> {
    if session.stage != Stage::GeneratingOutput {
        return Err(PipelineError::WrongStage {
            expected: Stage::GeneratingOutput,
            actual: session.stage,
        });
    }
    if session.task_name != task.name {
        return Err(PipelineError::TaskMismatch {
            session: session.task_name.clone(),
            task: task.name.clone(),
        });
    }
    let pairs = session.qa_pairs().ok_or(PipelineError::WrongStage {
        expected: Stage::GeneratingOutput,
        actual: Stage::AwaitingAnswers,
    })?;
    let config = stage3_config();
    let mut next = session.clone();
    next.config_used = config.clone();
    next.batches = partition_batches(pairs.len(), batch_size, task.dependent_qa);
    next.outputs.clear();
    for (batch, range) in next.batches.clone().into_iter().enumerate() {
        let prompt = render_output_prompt(task, &pairs[range.clone()], session.voice)?;
        let result = backend.complete(&CompletionRequest::new(prompt, config.clone(), mode_for(session.voice)))?;
        let text = result.text.trim();
        if text.is_empty() {
            return Err(PipelineError::EmptyCompletion(batch));
        }
        let text = match &task.output_cue {
            Some(cue) if !text.starts_with(cue.as_str()) => format!("{cue} {text}"),
            _ => text.to_string(),
        };
        next.outputs.push(text);
        next.record(
            clock,
            SessionEvent::BatchCompleted {
                batch,
                start: range.start,
                end: range.end,
            },
        );
    }
    next.final_output = Some(next.outputs.join(OUTPUT_SEPARATOR));
    next.advance(clock, Stage::Complete);
    Ok(next)
}
