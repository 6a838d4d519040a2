//! Stage-1 and Stage-3 prompt rendering.
//!
//! Layout is fixed: single `\n` between lines, one blank line between the
//! task preamble and the question/answer transcript, none elsewhere. A
//! Stage-1 prompt always ends on `Question:`; a Stage-3 prompt ends on the
//! task directive (or on its output cue when the task has one).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{TaskSpec, QUESTION_CUE};

pub const ANSWER_LABEL: &str = "Answer:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Voice {
    #[default]
    FirstPerson,
    /// Reframed prompts for conversational (chat) backends.
    SecondPerson,
}

impl std::str::FromStr for Voice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first" | "first_person" | "first-person" => Ok(Voice::FirstPerson),
            "second" | "second_person" | "second-person" => Ok(Voice::SecondPerson),
            other => Err(format!("unknown voice `{other}` (expected first or second)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Stage1,
    Stage3,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub kind: PromptKind,
}

impl PromptText {
    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl std::fmt::Display for PromptText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("task `{0}` has no second-person prompt")]
    VoiceUnavailable(String),
    #[error("no question/answer pairs to render")]
    EmptyPairs,
    #[error("answer {0} is blank")]
    EmptyAnswers(usize),
    #[error("{questions} questions but {answers} answers")]
    LengthMismatch { questions: usize, answers: usize },
    #[error("transcript line {0} breaks the Question/Answer alternation")]
    MalformedTranscript(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

impl QaPair {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            answer: answer.into(),
        }
    }
}

/// Extra guidance folded into the Stage-1 preamble when the question loop
/// escalates after rejected completions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuestionHints {
    pub instruction: Option<String>,
    pub example_question: Option<String>,
}

impl QuestionHints {
    pub fn is_empty(&self) -> bool {
        self.instruction.is_none() && self.example_question.is_none()
    }
}

fn preamble(task: &TaskSpec, voice: Voice) -> Result<&str, PromptError> {
    let prompt = task
        .stage1_prompt(voice)
        .ok_or_else(|| PromptError::VoiceUnavailable(task.name.clone()))?;
    // Catalog validation guarantees the trailing "\nQuestion:" line.
    Ok(prompt
        .strip_suffix(QUESTION_CUE)
        .unwrap_or(prompt)
        .trim_end_matches('\n'))
}

fn single_line(text: &str) -> String {
    text.trim().lines().map(str::trim_end).collect::<Vec<_>>().join(" ")
}

fn check_transcript(transcript: &str) -> Result<(), PromptError> {
    if transcript.is_empty() {
        return Ok(());
    }
    for (i, line) in transcript.split('\n').enumerate() {
        let label = if i % 2 == 0 { QUESTION_CUE } else { ANSWER_LABEL };
        if !line.starts_with(label) {
            return Err(PromptError::MalformedTranscript(i + 1));
        }
    }
    Ok(())
}

/// Stage-1 prompt: preamble, the running transcript, then a `Question:` cue.
pub fn render_question_prompt(task: &TaskSpec, transcript: &str, voice: Voice) -> Result<PromptText, PromptError> {
    render_question_prompt_with(task, transcript, voice, &QuestionHints::default())
}

pub fn render_question_prompt_with(
    task: &TaskSpec,
    transcript: &str,
    voice: Voice,
    hints: &QuestionHints,
) -> Result<PromptText, PromptError> {
    check_transcript(transcript)?;
    let mut text = preamble(task, voice)?.to_string();
    if let Some(instruction) = &hints.instruction {
        text.push('\n');
        text.push_str(&single_line(instruction));
    }
    if let Some(example) = &hints.example_question {
        text.push_str("\nExample question: ");
        text.push_str(&single_line(example));
    }
    if !transcript.is_empty() {
        text.push_str("\n\n");
        text.push_str(transcript);
    }
    text.push('\n');
    text.push_str(QUESTION_CUE);
    Ok(PromptText {
        text,
        kind: PromptKind::Stage1,
    })
}

/// Stage-3 prompt: preamble, every pair in order, then the task directive.
///
/// Answers are trimmed and internal line breaks folded to spaces so each pair
/// occupies exactly two lines.
pub fn render_output_prompt(task: &TaskSpec, qa_pairs: &[QaPair], voice: Voice) -> Result<PromptText, PromptError> {
    if qa_pairs.is_empty() {
        return Err(PromptError::EmptyPairs);
    }
    if let Some(i) = qa_pairs.iter().position(|p| p.answer.trim().is_empty()) {
        return Err(PromptError::EmptyAnswers(i));
    }
    let mut text = preamble(task, voice)?.to_string();
    text.push_str("\n\n");
    for (i, pair) in qa_pairs.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        text.push_str(&format!(
            "{QUESTION_CUE} {}\n{ANSWER_LABEL} {}",
            single_line(&pair.question),
            single_line(&pair.answer)
        ));
    }
    text.push('\n');
    text.push_str(&task.stage3_directive);
    if let Some(instruction) = &task.output_instruction {
        text.push(' ');
        text.push_str(instruction);
    }
    if let Some(cue) = &task.output_cue {
        text.push('\n');
        text.push_str(cue);
    }
    Ok(PromptText {
        text,
        kind: PromptKind::Stage3,
    })
}

/// Stage-1 chaining transcript. Questions whose ephemeral answer is absent
/// get a bare `Answer:` line.
pub fn build_transcript(questions: &[String], ephemeral_answers: &[Option<String>]) -> Result<String, PromptError> {
    if questions.len() != ephemeral_answers.len() {
        return Err(PromptError::LengthMismatch {
            questions: questions.len(),
            answers: ephemeral_answers.len(),
        });
    }
    let lines: Vec<String> = questions
        .iter()
        .zip(ephemeral_answers)
        .map(|(q, a)| {
            let q = single_line(q);
            match a.as_deref().map(single_line).filter(|a| !a.is_empty()) {
                Some(a) => format!("{QUESTION_CUE} {q}\n{ANSWER_LABEL} {a}"),
                None => format!("{QUESTION_CUE} {q}\n{ANSWER_LABEL}"),
            }
        })
        .collect();
    Ok(lines.join("\n"))
}
