//! Task catalog.
//!
//! A task carries everything the prompt templates need: the Stage-1
//! question-generation prompt in both voices, the Stage-3 directive, the
//! batching policy and the frozen question bank. The built-in catalog holds
//! the six core tasks plus 57 additional tasks and is compiled into the
//! binary from `data/catalog.toml`.

mod format;

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::Voice;

pub use format::{load_tasks, serialize_catalog, DEFAULT_BATCH_SIZE};

/// The label every Stage-1 prompt ends on.
pub const QUESTION_CUE: &str = "Question:";

const BUILTIN_CATALOG: &str = include_str!("../../data/catalog.toml");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("invalid catalog: {0}")]
    Validation(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
}

/// One task definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Whether this is one of the six tasks the metric tables average over.
    pub core: bool,
    /// Fills `$task-executer$`.
    pub executer_phrase: String,
    /// Fills `$do the task.$`.
    pub do_task_phrase: String,
    /// Fills `$task-specific-output$`.
    pub output_phrase: String,
    /// Fills `$task-specific-instruction$`; appended to the Stage-3 directive.
    pub output_instruction: Option<String>,
    pub stage1_prompt_first_person: String,
    pub stage1_prompt_second_person: Option<String>,
    pub stage3_directive: String,
    /// Line placed after the directive to prime the output (dialogue: `Person 1:`).
    pub output_cue: Option<String>,
    /// QA pairs must be fed in one batch because the output weaves them together.
    pub dependent_qa: bool,
    pub default_batch_size: NonZeroUsize,
    pub question_bank: Vec<String>,
}

impl TaskSpec {
    /// Stored Stage-1 prompt for `voice`, if the task has one.
    pub fn stage1_prompt(&self, voice: Voice) -> Option<&str> {
        match voice {
            Voice::FirstPerson => Some(&self.stage1_prompt_first_person),
            Voice::SecondPerson => self.stage1_prompt_second_person.as_deref(),
        }
    }

    /// Stage-3 directive used when a task file gives none.
    pub fn generic_directive(output_phrase: &str) -> String {
        format!("Write a {output_phrase} using the questions and answers above.")
    }

    pub(crate) fn validate(&self) -> Result<(), CatalogError> {
        let fail = |msg: String| Err(CatalogError::Validation(msg));
        if self.name.trim().is_empty() {
            return fail("task with empty name".into());
        }
        if self.executer_phrase.trim().is_empty() {
            return fail(format!("task `{}`: empty executer_phrase", self.name));
        }
        if self.stage3_directive.trim().is_empty() {
            return fail(format!("task `{}`: empty stage3_directive", self.name));
        }
        if !ends_with_question_line(&self.stage1_prompt_first_person) {
            return fail(format!(
                "task `{}`: stage1_prompt_first_person must end with a `{QUESTION_CUE}` line",
                self.name
            ));
        }
        if let Some(second) = &self.stage1_prompt_second_person {
            if !ends_with_question_line(second) {
                return fail(format!(
                    "task `{}`: stage1_prompt_second_person must end with a `{QUESTION_CUE}` line",
                    self.name
                ));
            }
        }
        if self.question_bank.iter().any(|q| q.trim().is_empty()) {
            return fail(format!("task `{}`: blank question in bank", self.name));
        }
        Ok(())
    }
}

fn ends_with_question_line(prompt: &str) -> bool {
    let Some(preamble) = prompt.strip_suffix(QUESTION_CUE) else {
        return false;
    };
    preamble.ends_with('\n') && !preamble.trim().is_empty()
}

/// Name-keyed, immutable collection of tasks. Iteration follows file order.
#[derive(Debug, Clone)]
pub struct TaskCatalog {
    source_version: String,
    tasks: Vec<TaskSpec>,
    index: HashMap<String, usize>,
}

impl PartialEq for TaskCatalog {
    fn eq(&self, other: &Self) -> bool {
        self.source_version == other.source_version && self.tasks == other.tasks
    }
}

impl TaskCatalog {
    pub fn new(source_version: impl Into<String>, tasks: Vec<TaskSpec>) -> Result<Self, CatalogError> {
        let mut index = HashMap::with_capacity(tasks.len());
        for (i, task) in tasks.iter().enumerate() {
            task.validate()?;
            if index.insert(task.name.clone(), i).is_some() {
                return Err(CatalogError::Validation(format!("duplicate task name `{}`", task.name)));
            }
        }
        Ok(Self {
            source_version: source_version.into(),
            tasks,
            index,
        })
    }

    pub fn source_version(&self) -> &str {
        &self.source_version
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter()
    }

    pub fn core_tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().filter(|t| t.core)
    }

    pub fn get(&self, name: &str) -> Option<&TaskSpec> {
        self.index.get(name).map(|&i| &self.tasks[i])
    }

    /// Looks a task up by exact name.
    pub fn get_task(&self, name: &str) -> Result<&TaskSpec, CatalogError> {
        self.get(name)
            .ok_or_else(|| CatalogError::UnknownTask(name.to_string()))
    }

    /// Like [`get_task`](Self::get_task) but also accepts `-` or `_` in place of spaces.
    pub fn resolve(&self, name: &str) -> Result<&TaskSpec, CatalogError> {
        self.get(name)
            .or_else(|| self.get(&name.replace(['-', '_'], " ")))
            .ok_or_else(|| CatalogError::UnknownTask(name.to_string()))
    }
}

/// Free-function form of [`TaskCatalog::get_task`].
pub fn get_task<'a>(catalog: &'a TaskCatalog, name: &str) -> Result<&'a TaskSpec, CatalogError> {
    catalog.get_task(name)
}

/// The compiled-in catalog.
pub fn builtin_catalog() -> TaskCatalog {
    builtin().clone()
}

/// Shared reference to the compiled-in catalog.
pub fn builtin() -> &'static TaskCatalog {
    static CATALOG: OnceLock<TaskCatalog> = OnceLock::new();
    CATALOG.get_or_init(|| load_tasks(BUILTIN_CATALOG).expect("bundled catalog is valid"))
}
