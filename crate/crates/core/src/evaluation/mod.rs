//! Annotation aggregation.
//!
//! Every (task, sample, aspect) is judged by three annotators. Votes are
//! reduced to one label per sample by majority, and labels to a per-task
//! percentage. Knowledge absorption arrives as a count of missing pairs per
//! annotator and is turned into a vote under the tolerant or strict regime.

mod absorption;
mod annotations;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::catalog::{TaskCatalog, TaskSpec};

pub use absorption::auto_absorption_check;
pub use annotations::{parse_annotations, to_jsonl};
pub use report::{render_json, render_table};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("majority vote needs exactly 3 votes, got {0}")]
    WrongArity(usize),
    #[error("task `{0}` has an empty question bank")]
    EmptyBank(String),
    #[error("{task}/{sample}/{aspect}: expected 3 annotators, found {found}")]
    IncompleteTriple {
        task: String,
        sample: String,
        aspect: Aspect,
        found: usize,
    },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("{task}/{sample}: knowledge_absorption record from `{annotator}` has no missing_count")]
    MissingCountAbsent {
        task: String,
        sample: String,
        annotator: String,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    QValidity,
    QRelevance,
    Validity,
    KnowledgeAbsorption,
    Relevance,
    Robustness,
    Coherence,
}

impl Aspect {
    pub const ALL: [Aspect; 7] = [
        Aspect::QValidity,
        Aspect::QRelevance,
        Aspect::Validity,
        Aspect::KnowledgeAbsorption,
        Aspect::Relevance,
        Aspect::Robustness,
        Aspect::Coherence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::QValidity => "q_validity",
            Aspect::QRelevance => "q_relevance",
            Aspect::Validity => "validity",
            Aspect::KnowledgeAbsorption => "knowledge_absorption",
            Aspect::Relevance => "relevance",
            Aspect::Robustness => "robustness",
            Aspect::Coherence => "coherence",
        }
    }

    /// Whether annotators may answer "not applicable".
    pub fn allows_na(self) -> bool {
        matches!(self, Aspect::Robustness | Aspect::Coherence)
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aspect::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown aspect `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Yes,
    No,
    #[serde(alias = "na", alias = "NA")]
    NotApplicable,
}

impl FromStr for Vote {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "yes" | "y" => Ok(Vote::Yes),
            "no" | "n" => Ok(Vote::No),
            "na" | "n/a" | "not_applicable" | "not applicable" => Ok(Vote::NotApplicable),
            _ => Err(format!("unknown vote `{s}`")),
        }
    }
}

/// One annotator's judgment of one sample on one aspect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(rename = "task", alias = "task_name")]
    pub task_name: String,
    pub sample_id: String,
    pub aspect: Aspect,
    pub annotator_id: String,
    /// Absent for knowledge absorption, which is judged by `missing_count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote: Option<Vote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_count: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KaRegime {
    #[default]
    Tolerant,
    Strict,
}

impl FromStr for KaRegime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tolerant" => Ok(KaRegime::Tolerant),
            "strict" => Ok(KaRegime::Strict),
            _ => Err(format!("unknown regime `{s}` (expected tolerant or strict)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaHandling {
    #[default]
    NaExcluded,
    NaAsNo,
}

impl FromStr for NaHandling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exclude" | "excluded" | "na_excluded" => Ok(NaHandling::NaExcluded),
            "as-no" | "as_no" | "na_as_no" => Ok(NaHandling::NaAsNo),
            _ => Err(format!("unknown NA handling `{s}` (expected exclude or as-no)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Regime {
    pub ka: KaRegime,
    pub na: NaHandling,
}

impl Regime {
    pub fn new(ka: KaRegime, na: NaHandling) -> Self {
        Self { ka, na }
    }
}

/// Exact percentage, or undefined when every sample was excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Percentage {
    Defined(Ratio<u64>),
    Undefined,
}

impl Percentage {
    pub fn from_counts(yes: u64, total: u64) -> Self {
        if total == 0 {
            Percentage::Undefined
        } else {
            Percentage::Defined(Ratio::new(100 * yes, total))
        }
    }

    pub fn ratio(self) -> Option<Ratio<u64>> {
        match self {
            Percentage::Defined(r) => Some(r),
            Percentage::Undefined => None,
        }
    }

    pub fn value(self) -> Option<f64> {
        self.ratio().map(|r| *r.numer() as f64 / *r.denom() as f64)
    }

    /// Hundredths, rounded half up.
    pub fn hundredths(self) -> Option<u64> {
        self.ratio().map(|r| (200 * r.numer() + r.denom()) / (2 * r.denom()))
    }
}

impl fmt::Display for Percentage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hundredths() {
            Some(h) => write!(f, "{}.{:02}", h / 100, h % 100),
            None => f.write_str("—"),
        }
    }
}

impl Serialize for Percentage {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.value().serialize(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub regime: Regime,
    /// Task names in catalog order.
    pub tasks: Vec<String>,
    pub per_task: BTreeMap<String, BTreeMap<Aspect, Percentage>>,
    pub averages: BTreeMap<Aspect, Percentage>,
}

impl MetricReport {
    pub fn get(&self, task: &str, aspect: Aspect) -> Option<Percentage> {
        self.per_task.get(task)?.get(&aspect).copied()
    }

    pub fn average(&self, aspect: Aspect) -> Option<Percentage> {
        self.averages.get(&aspect).copied()
    }
}

/// Majority of exactly three votes.
pub fn majority_label(votes: &[Vote], na: NaHandling) -> Result<Vote, EvalError> {
    if votes.len() != 3 {
        return Err(EvalError::WrongArity(votes.len()));
    }
    let count = |v: Vote| votes.iter().filter(|&&x| x == v).count();
    let (yes, no, nas) = (count(Vote::Yes), count(Vote::No), count(Vote::NotApplicable));
    Ok(match na {
        NaHandling::NaAsNo => {
            if yes >= 2 {
                Vote::Yes
            } else {
                Vote::No
            }
        }
        NaHandling::NaExcluded => {
            if nas >= 2 {
                Vote::NotApplicable
            } else if yes > no {
                Vote::Yes
            } else {
                // Covers the yes/no/NA split.
                Vote::No
            }
        }
    })
}

/// Missing pairs allowed under the tolerant regime.
pub fn tolerance_for(task: &TaskSpec) -> Result<u32, EvalError> {
    match task.question_bank.len() {
        0 => Err(EvalError::EmptyBank(task.name.clone())),
        1..=4 => Ok(1),
        _ => Ok(2),
    }
}

pub fn score_sample_ka(missing_count: u32, tolerance: u32) -> bool {
    missing_count <= tolerance
}

pub fn task_score(labels: &[Vote], na: NaHandling) -> Percentage {
    let yes = labels.iter().filter(|&&l| l == Vote::Yes).count() as u64;
    let total = match na {
        NaHandling::NaAsNo => labels.len(),
        NaHandling::NaExcluded => labels.iter().filter(|&&l| l != Vote::NotApplicable).count(),
    } as u64;
    Percentage::from_counts(yes, total)
}

/// Unweighted mean; undefined if any input is.
pub fn mean(values: &[Percentage]) -> Percentage {
    if values.is_empty() {
        return Percentage::Undefined;
    }
    let mut sum = Ratio::from_integer(0u64);
    for v in values {
        match v.ratio() {
            Some(r) => sum += r,
            None => return Percentage::Undefined,
        }
    }
    Percentage::Defined(sum / values.len() as u64)
}

/// Checks a single record against the catalog.
pub fn validate_record(record: &AnnotationRecord, catalog: &TaskCatalog) -> Result<(), EvalError> {
    let task = catalog
        .get(&record.task_name)
        .ok_or_else(|| EvalError::UnknownTask(record.task_name.clone()))?;
    let at = || {
        format!(
            "{}/{}/{}/{}",
            record.task_name, record.sample_id, record.aspect, record.annotator_id
        )
    };
    if record.sample_id.trim().is_empty() || record.annotator_id.trim().is_empty() {
        return Err(EvalError::InvalidRecord(format!("{}: blank identifier", at())));
    }
    if record.aspect == Aspect::KnowledgeAbsorption {
        let missing = record.missing_count.ok_or_else(|| EvalError::MissingCountAbsent {
            task: record.task_name.clone(),
            sample: record.sample_id.clone(),
            annotator: record.annotator_id.clone(),
        })?;
        if missing as usize > task.question_bank.len() {
            return Err(EvalError::InvalidRecord(format!(
                "{}: missing_count {missing} exceeds {} questions",
                at(),
                task.question_bank.len()
            )));
        }
        if record.vote == Some(Vote::NotApplicable) {
            return Err(EvalError::InvalidRecord(format!(
                "{}: not_applicable not allowed",
                at()
            )));
        }
        return Ok(());
    }
    match record.vote {
        None => Err(EvalError::InvalidRecord(format!("{}: vote required", at()))),
        Some(Vote::NotApplicable) if !record.aspect.allows_na() => Err(EvalError::InvalidRecord(format!(
            "{}: not_applicable not allowed",
            at()
        ))),
        Some(_) if record.missing_count.is_some() => Err(EvalError::InvalidRecord(format!(
            "{}: missing_count only applies to knowledge_absorption",
            at()
        ))),
        Some(_) => Ok(()),
    }
}

type SampleKey<'a> = (&'a str, &'a str, Aspect);

/// Reduces records to per-task and averaged percentages.
pub fn aggregate_report(
    records: &[AnnotationRecord],
    catalog: &TaskCatalog,
    regime: Regime,
) -> Result<MetricReport, EvalError> {
    let mut groups: BTreeMap<SampleKey, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        validate_record(r, catalog)?;
        groups
            .entry((r.task_name.as_str(), r.sample_id.as_str(), r.aspect))
            .or_default()
            .push(r);
    }

    let mut labels: BTreeMap<(&str, Aspect), Vec<Vote>> = BTreeMap::new();
    for ((task_name, sample, aspect), group) in &groups {
        let annotators: BTreeSet<&str> = group.iter().map(|r| r.annotator_id.as_str()).collect();
        if group.len() != 3 || annotators.len() != 3 {
            return Err(EvalError::IncompleteTriple {
                task: task_name.to_string(),
                sample: sample.to_string(),
                aspect: *aspect,
                found: annotators.len(),
            });
        }
        let votes = if *aspect == Aspect::KnowledgeAbsorption {
            let task = catalog.get_task(task_name).expect("validated above");
            let tolerance = match regime.ka {
                KaRegime::Tolerant => tolerance_for(task)?,
                KaRegime::Strict => 0,
            };
            group
                .iter()
                .map(|r| {
                    let missing = r.missing_count.expect("validated above");
                    if score_sample_ka(missing, tolerance) {
                        Vote::Yes
                    } else {
                        Vote::No
                    }
                })
                .collect::<Vec<_>>()
        } else {
            group.iter().map(|r| r.vote.expect("validated above")).collect()
        };
        labels
            .entry((*task_name, *aspect))
            .or_default()
            .push(majority_label(&votes, regime.na)?);
    }

    let mut per_task: BTreeMap<String, BTreeMap<Aspect, Percentage>> = BTreeMap::new();
    for ((task, aspect), l) in &labels {
        per_task
            .entry(task.to_string())
            .or_default()
            .insert(*aspect, task_score(l, regime.na));
    }

    let mut averages = BTreeMap::new();
    for aspect in Aspect::ALL {
        let values: Vec<Percentage> = catalog
            .core_tasks()
            .filter_map(|t| per_task.get(&t.name)?.get(&aspect).copied())
            .collect();
        if !values.is_empty() {
            averages.insert(aspect, mean(&values));
        }
    }

    let tasks = catalog
        .iter()
        .filter(|t| per_task.contains_key(&t.name))
        .map(|t| t.name.clone())
        .collect();
    Ok(MetricReport {
        regime,
        tasks,
        per_task,
        averages,
    })
}
