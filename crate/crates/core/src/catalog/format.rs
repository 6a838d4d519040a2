//! TOML catalog documents.
//!
//! ```toml
//! source_version = "hmt-catalog/1"
//!
//! [[tasks]]
//! name = "poem"
//! core = true                      # default false
//! executer_phrase = "poet"
//! do_task_phrase = "write a poem"
//! output_phrase = "poem"
//! output_instruction = "..."       # optional
//! stage1_prompt_first_person = "I am a famous poet. ...\nQuestion:"
//! stage1_prompt_second_person = "You are a famous poet. ...\nQuestion:"   # optional
//! stage3_directive = "Write a poem using the question and answers above."  # optional
//! output_cue = "Person 1:"         # optional
//! dependent_qa = true              # default false
//! default_batch_size = 8           # default 8
//! question_bank = ["What is the occasion?"]   # default []
//! ```

use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};

use super::{CatalogError, TaskCatalog, TaskSpec};

pub const DEFAULT_BATCH_SIZE: usize = 8;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDocument {
    source_version: String,
    #[serde(default)]
    tasks: Vec<TaskRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRecord {
    name: String,
    #[serde(default)]
    core: bool,
    executer_phrase: String,
    do_task_phrase: String,
    output_phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_instruction: Option<String>,
    stage1_prompt_first_person: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage1_prompt_second_person: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage3_directive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_cue: Option<String>,
    #[serde(default)]
    dependent_qa: bool,
    #[serde(default = "default_batch_size")]
    default_batch_size: usize,
    #[serde(default)]
    question_bank: Vec<String>,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

impl TryFrom<TaskRecord> for TaskSpec {
    type Error = CatalogError;

    fn try_from(r: TaskRecord) -> Result<Self, Self::Error> {
        let default_batch_size = NonZeroUsize::new(r.default_batch_size).ok_or_else(|| {
            CatalogError::Validation(format!("task `{}`: default_batch_size must be positive", r.name))
        })?;
        let stage3_directive = r
            .stage3_directive
            .unwrap_or_else(|| TaskSpec::generic_directive(&r.output_phrase));
        Ok(TaskSpec {
            name: r.name,
            core: r.core,
            executer_phrase: r.executer_phrase,
            do_task_phrase: r.do_task_phrase,
            output_phrase: r.output_phrase,
            output_instruction: r.output_instruction,
            stage1_prompt_first_person: r.stage1_prompt_first_person,
            stage1_prompt_second_person: r.stage1_prompt_second_person,
            stage3_directive,
            output_cue: r.output_cue,
            dependent_qa: r.dependent_qa,
            default_batch_size,
            question_bank: r.question_bank,
        })
    }
}

impl From<&TaskSpec> for TaskRecord {
    fn from(t: &TaskSpec) -> Self {
        TaskRecord {
            name: t.name.clone(),
            core: t.core,
            executer_phrase: t.executer_phrase.clone(),
            do_task_phrase: t.do_task_phrase.clone(),
            output_phrase: t.output_phrase.clone(),
            output_instruction: t.output_instruction.clone(),
            stage1_prompt_first_person: t.stage1_prompt_first_person.clone(),
            stage1_prompt_second_person: t.stage1_prompt_second_person.clone(),
            stage3_directive: Some(t.stage3_directive.clone()),
            output_cue: t.output_cue.clone(),
            dependent_qa: t.dependent_qa,
            default_batch_size: t.default_batch_size.get(),
            question_bank: t.question_bank.clone(),
        }
    }
}

/// Parses and validates a catalog document.
pub fn load_tasks(document: &str) -> Result<TaskCatalog, CatalogError> {
    if document.trim().is_empty() {
        return Err(CatalogError::Parse("empty document".into()));
    }
    let doc: CatalogDocument = toml::from_str(document).map_err(|e| CatalogError::Parse(e.message().to_string()))?;
    let tasks = doc
        .tasks
        .into_iter()
        .map(TaskSpec::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    TaskCatalog::new(doc.source_version, tasks)
}

/// Renders a catalog back into the document format accepted by [`load_tasks`].
pub fn serialize_catalog(catalog: &TaskCatalog) -> String {
    let doc = CatalogDocument {
        source_version: catalog.source_version().to_string(),
        tasks: catalog.iter().map(TaskRecord::from).collect(),
    };
    toml::to_string(&doc).expect("catalog documents always serialize")
}
