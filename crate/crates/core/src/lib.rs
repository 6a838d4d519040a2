//! Help-Me-Think: a language model asks task-specific questions, a person
//! answers them, and the model writes a customized output from the answers.
//!
//! The crate holds the task catalog, prompt rendering, completion backends,
//! the three-stage pipeline, annotation scoring and the session store.

pub mod backend;
pub mod catalog;
pub mod clock;
pub mod evaluation;
pub mod pipeline;
pub mod prompt;
pub mod store;

pub use backend::{
    apply_stops, complete, http_backend, scripted_backend, BackendError, CompletionBackend, CompletionMode,
    CompletionRequest, CompletionResult, FinishReason, GenerationConfig, HttpBackend, HttpBackendConfig, MatchMode,
    ScriptedBackend, ScriptedReply, API_KEY_ENV,
};
pub use catalog::{
    builtin, builtin_catalog, get_task, load_tasks, serialize_catalog, CatalogError, TaskCatalog, TaskSpec,
};
pub use clock::{Clock, StepClock, SystemClock};
pub use evaluation::{
    aggregate_report, auto_absorption_check, majority_label, parse_annotations, render_json, render_table,
    score_sample_ka, task_score, tolerance_for, validate_record, AnnotationRecord, Aspect, EvalError, KaRegime,
    MetricReport, NaHandling, Percentage, Regime, Vote,
};
pub use pipeline::{
    extract_question, fill_answers, fill_answers_with, generate_output, generate_output_with, generate_questions,
    generate_questions_for, generate_questions_with, is_repetitive, partition_batches, stage1_config, stage3_config,
    ConfigOverride, LogEntry, PipelineError, QuestionLoopLimits, Session, SessionEvent, Stage,
};
pub use prompt::{
    build_transcript, render_output_prompt, render_question_prompt, PromptError, PromptKind, PromptText, QaPair, Voice,
};
pub use store::{FileStore, SessionFilter, SessionSummary, StoreError, StoredSession};
