//! Membership scorers. Every score follows "higher means more likely member".
//!
//! Baselines work on the whole sentence: mean logprob ([`score_lowest_loss`]),
//! logprob per compressed byte ([`score_zlib`]), mean of the least likely
//! tokens ([`score_min_k`]) and the conditional/unconditional likelihood
//! ratio under a non-member prefix ([`score_recall`]). The reference-set
//! methods compare the candidate's fit in its template against N surface
//! matched alternatives of the same type, optionally scoring only the
//! continuation after the slot.

mod refset;
mod runner;
mod scores;

pub use refset::{
    build_refset, casing_class, CasingClass, Cue, PoolIndex, RefSet, RefSetUnderfull, SurfaceCues,
};
pub use runner::{run_attacks, AttackRun, SkipEntry};
pub use scores::{
    log_sum_exp, score_lowest_loss, score_lowest_loss_suffix, score_min_k, score_recall,
    score_reference_set, score_reference_set_suffix, score_zlib, suffix_slice, zlib_len,
};

use crate::align::{AlignError, OverlapPolicy};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AttackError {
    #[error("no token with a defined logprob")]
    NoScoredTokens,
    #[error("unconditioned log-likelihood is zero")]
    ZeroDenominator,
    #[error("plain and prefixed scores cover different texts")]
    MismatchedTarget,
    #[error("reference set is empty")]
    EmptyRefs,
    #[error("suffix window is empty")]
    EmptyWindow,
    #[error("reference set underfull: found {found} of {needed}")]
    RefSetUnderfull { found: usize, needed: usize },
    #[error("no candidate pool for entity type {0}")]
    UnknownType(String),
    #[error("no recall prefix configured")]
    NoRecallPrefix,
    #[error("non-finite score")]
    NonFinite,
    #[error("alignment: {0}")]
    Align(#[from] AlignError),
    #[error("provider: {0}")]
    Provider(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    LowestLoss,
    Zlib,
    MinK,
    Recall,
    LowestLossSuffix,
    ReferenceSet,
    ReferenceSetSuffix,
}

impl MethodId {
    pub const ALL: [MethodId; 7] = [
        MethodId::LowestLoss,
        MethodId::Zlib,
        MethodId::MinK,
        MethodId::Recall,
        MethodId::LowestLossSuffix,
        MethodId::ReferenceSet,
        MethodId::ReferenceSetSuffix,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::LowestLoss => "lowest_loss",
            MethodId::Zlib => "zlib",
            MethodId::MinK => "min_k",
            MethodId::Recall => "recall",
            MethodId::LowestLossSuffix => "lowest_loss_suffix",
            MethodId::ReferenceSet => "reference_set",
            MethodId::ReferenceSetSuffix => "reference_set_suffix",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Display name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            MethodId::LowestLoss => "Lowest loss",
            MethodId::Zlib => "Zlib",
            MethodId::MinK => "Min-k% prob",
            MethodId::Recall => "Recall",
            MethodId::LowestLossSuffix => "Lowest loss (suffix)",
            MethodId::ReferenceSet => "Reference-set",
            MethodId::ReferenceSetSuffix => "Reference-set (suffix)",
        }
    }

    pub fn uses_refset(self) -> bool {
        matches!(self, MethodId::ReferenceSet | MethodId::ReferenceSetSuffix)
    }

    /// Parse `all` or a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<MethodId>, String> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        let mut out: Vec<MethodId> = s
            .split(',')
            .map(|p| Self::parse(p.trim()).ok_or_else(|| format!("unknown method {p:?}")))
            .collect::<Result<_, _>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Continuation window after the candidate: every remaining token, or at
/// most `n` of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SuffixWindow {
    #[default]
    All,
    Tokens(usize),
}

impl fmt::Display for SuffixWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SuffixWindow::All => f.write_str("all"),
            SuffixWindow::Tokens(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for SuffixWindow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(SuffixWindow::All);
        }
        s.parse()
            .map(SuffixWindow::Tokens)
            .map_err(|_| format!("suffix window must be \"all\" or a token count, got {s:?}"))
    }
}

impl Serialize for SuffixWindow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SuffixWindow::All => s.serialize_str("all"),
            SuffixWindow::Tokens(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SuffixWindow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(SuffixWindow::Tokens(n as usize)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlrVariant {
    /// Candidate logprob minus the log of the mean reference probability.
    #[default]
    Ratio,
    /// z-score of the candidate against the reference logprobs.
    Standardized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub methods: Vec<MethodId>,
    pub min_k_fraction: f64,
    pub suffix_window: SuffixWindow,
    pub suffix_includes_candidate: bool,
    pub refset_size: usize,
    pub llr_variant: LlrVariant,
    pub zlib_level: u32,
    /// Non-member context prepended for the recall attack.
    pub recall_prefix: Option<String>,
    /// Flip the recall ratio so that lower ratios score as members.
    pub recall_invert: bool,
    pub overlap_policy: OverlapPolicy,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            methods: MethodId::ALL.to_vec(),
            min_k_fraction: 0.2,
            suffix_window: SuffixWindow::All,
            suffix_includes_candidate: false,
            refset_size: 5,
            llr_variant: LlrVariant::Ratio,
            zlib_level: 6,
            recall_prefix: None,
            recall_invert: false,
            overlap_policy: OverlapPolicy::Overlap,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_k_fraction > 0.0 && self.min_k_fraction <= 1.0) {
            return Err(format!(
                "min_k_fraction must lie in (0,1], got {}",
                self.min_k_fraction
            ));
        }
        if self.refset_size == 0 {
            return Err("refset_size must be positive".into());
        }
        if self.zlib_level > 9 {
            return Err(format!("zlib_level must be 0-9, got {}", self.zlib_level));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    pub record_id: String,
    pub method: MethodId,
    pub score: f64,
    pub model_id: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_lists() {
        assert_eq!(MethodId::parse_list("all").unwrap().len(), 7);
        assert_eq!(
            MethodId::parse_list("reference_set,min_k").unwrap(),
            vec![MethodId::MinK, MethodId::ReferenceSet]
        );
        assert!(MethodId::parse_list("nope").is_err());
    }

    #[test]
    fn window_serde() {
        let c = AttackConfig {
            suffix_window: SuffixWindow::Tokens(3),
            ..Default::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains(r#""suffix_window":3"#));
        let back: AttackConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let all: AttackConfig = serde_json::from_str(r#"{"suffix_window":"all"}"#).unwrap();
        assert_eq!(all.suffix_window, SuffixWindow::All);
        assert_eq!(all.min_k_fraction, 0.2);
    }
}
