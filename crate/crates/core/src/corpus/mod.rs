//! Benchmark construction from PII-annotated samples.
//!
//! Each training-partition sentence becomes one template per annotated slot.
//! The member record is the sentence as trained on; the nonmember record is
//! the same sentence with that one slot replaced by another value of the same
//! type, drawn from the trained, untrained or mixed candidate pool.

mod benchmark;
mod ingest;
mod pools;
mod validate;

pub use benchmark::{build_benchmark, emit_training_corpus, BenchmarkBuild, PoolExhausted};
pub use ingest::{ingest, ingest_reader, parse_line};
pub use pools::{assign_partition, build_pools, CandidatePool, Pools, SplitAssignment};
pub use validate::{validate_benchmark, CheckResult, ValidationReport};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line_no}: malformed input: {detail}")]
    MalformedLine { line_no: usize, detail: String },
    #[error(
        "sample {sample}: span {label}@({start},{end}) out of bounds for text of length {len}"
    )]
    SpanOutOfBounds {
        sample: String,
        label: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("sample {sample}: span {label}@({start},{end}) slices {found:?}, annotated value is {value:?}")]
    SpanValueMismatch {
        sample: String,
        label: String,
        start: usize,
        end: usize,
        found: String,
        value: String,
    },
    #[error("sample {sample}: overlapping spans ({a_start},{a_end}) and ({b_start},{b_end})")]
    OverlappingSpans {
        sample: String,
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("holdout fraction must lie in (0, 1), got {0}")]
    InvalidHoldoutFraction(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One annotated PII slot. Offsets are character indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub entity_type: String,
    pub char_start: usize,
    pub char_end: usize,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    TrainSet,
    HoldoutSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSample {
    pub sample_id: String,
    pub text: String,
    /// Sorted by `char_start`, pairwise non-overlapping.
    pub spans: Vec<EntitySpan>,
    /// `None` until [`assign_partition`] runs.
    pub partition: Option<Partition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Trained,
    Untrained,
    Mix,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Trained, Subset::Untrained, Subset::Mix];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Trained => "trained",
            Subset::Untrained => "untrained",
            Subset::Mix => "mix",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Member,
    Nonmember,
}

impl Label {
    pub fn is_member(self) -> bool {
        self == Label::Member
    }
}

/// One benchmark instance: a fully instantiated sentence, the candidate value
/// at its slot, and whether that sentence was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub record_id: String,
    pub template_id: String,
    pub subset: Subset,
    pub entity_type: String,
    pub text: String,
    pub candidate_value: String,
    pub candidate_char_start: usize,
    pub candidate_char_end: usize,
    pub label: Label,
    pub n_entities: usize,
}

pub fn template_id(sample_id: &str, slot: usize) -> String {
    format!("{sample_id}:{slot}")
}

pub fn record_id(template_id: &str, subset: Subset, label: Label) -> String {
    let tag = match label {
        Label::Member => "m",
        Label::Nonmember => "n",
    };
    format!("{template_id}:{subset}:{tag}")
}
