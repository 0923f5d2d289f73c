//! ROC AUC and TPR at a fixed FPR, with per-type or global thresholding.

use crate::attacks::{AttackScore, MethodId};
use crate::corpus::{BenchmarkRecord, Subset};
use crate::exec::{self, Execution};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub const GLOBAL_GROUP: &str = "GLOBAL";
pub const DEFAULT_FPR: f64 = 0.05;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("group has no member or no nonmember scores")]
    EmptyGroup,
    #[error("fpr target must lie in (0,1), got {0}")]
    BadFprTarget(f64),
    #[error("score refers to unknown record {0}")]
    UnknownRecord(String),
    #[error("no group had both member and nonmember scores")]
    NoScorableGroups,
}

/// Mann-Whitney AUC: P(member > nonmember) + ½·P(tie).
pub fn auc(members: &[f64], nonmembers: &[f64]) -> Result<f64, MetricsError> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let mut neg = nonmembers.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut twice = 0u64;
    for &x in members {
        let below = neg.partition_point(|&y| y < x);
        let upto = neg.partition_point(|&y| y <= x);
        twice += 2 * below as u64 + (upto - below) as u64;
    }
    Ok(twice as f64 / (2.0 * members.len() as f64 * nonmembers.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub tpr: f64,
    /// Decision threshold (`score ≥ threshold` ⇒ member); `+∞` when no
    /// observed score keeps the FPR within target.
    pub threshold: f64,
    /// FPR realized at `threshold`.
    pub fpr: f64,
}

/// Smallest observed score `t` with `#{nonmember ≥ t}/n ≤ fpr_target`.
pub fn tpr_at_fpr(
    members: &[f64],
    nonmembers: &[f64],
    fpr_target: f64,
) -> Result<TprAtFpr, MetricsError> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    if !(fpr_target > 0.0 && fpr_target < 1.0) {
        return Err(MetricsError::BadFprTarget(fpr_target));
    }
    let mut neg = nonmembers.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut pos = members.to_vec();
    pos.sort_by(f64::total_cmp);
    let n_neg = neg.len() as f64;
    let frac_at_or_above = |sorted: &[f64], t: f64| {
        (sorted.len() - sorted.partition_point(|&y| y < t)) as f64 / sorted.len() as f64
    };
    // FPR is non-increasing in t, so scan candidates upward
    let mut candidates: Vec<f64> = neg.iter().chain(pos.iter()).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let threshold = candidates
        .into_iter()
        .find(|&t| frac_at_or_above(&neg, t) * n_neg <= fpr_target * n_neg + 1e-9)
        .unwrap_or(f64::INFINITY);
    Ok(TprAtFpr {
        tpr: frac_at_or_above(&pos, threshold),
        threshold,
        fpr: frac_at_or_above(&neg, threshold),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thresholding {
    PerType,
    Global,
}

impl Thresholding {
    pub fn as_str(self) -> &'static str {
        match self {
            Thresholding::PerType => "per_type",
            Thresholding::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per_type" => Some(Thresholding::PerType),
            "global" => Some(Thresholding::Global),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupResult {
    pub group_key: String,
    pub auc: f64,
    pub tpr: f64,
    pub threshold: f64,
    /// Member plus nonmember records.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub subset: Subset,
    pub method: MethodId,
    pub thresholding: Thresholding,
    pub fpr_target: f64,
    pub groups: Vec<GroupResult>,
    /// Record-count weighted mean over `groups`.
    pub auc: f64,
    pub tpr: f64,
    pub n: usize,
    pub notes: Vec<String>,
}

/// Scores split by label.
#[derive(Debug, Clone, Default)]
pub struct EvalGroup {
    pub group_key: String,
    pub member_scores: Vec<f64>,
    pub nonmember_scores: Vec<f64>,
}

impl EvalGroup {
    pub fn evaluate(&self, fpr_target: f64) -> Result<GroupResult, MetricsError> {
        let a = auc(&self.member_scores, &self.nonmember_scores)?;
        let t = tpr_at_fpr(&self.member_scores, &self.nonmember_scores, fpr_target)?;
        Ok(GroupResult {
            group_key: self.group_key.clone(),
            auc: a,
            tpr: t.tpr,
            threshold: t.threshold,
            n: self.member_scores.len() + self.nonmember_scores.len(),
        })
    }
}

/// Weighted aggregate `Σ wᵢ·vᵢ / Σ wᵢ` of (value, weight) pairs.
pub fn weighted_mean(items: impl IntoIterator<Item = (f64, usize)>) -> f64 {
    let (num, den) = items
        .into_iter()
        .fold((0.0, 0usize), |(s, w), (v, n)| (s + v * n as f64, w + n));
    num / den as f64
}

/// Groups keyed by (subset, method), then by group key.
pub type GroupedScores = BTreeMap<(Subset, MethodId), BTreeMap<String, EvalGroup>>;

/// Group scores by (subset, method) and then by entity type (per-type) or
/// into one pool (global).
pub fn group_scores<'a>(
    scores: &[AttackScore],
    records: &'a [BenchmarkRecord],
    mode: Thresholding,
) -> Result<GroupedScores, MetricsError> {
    let by_id: HashMap<&str, &'a BenchmarkRecord> =
        records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let mut out = GroupedScores::new();
    for s in scores {
        let r = by_id
            .get(s.record_id.as_str())
            .ok_or_else(|| MetricsError::UnknownRecord(s.record_id.clone()))?;
        let key = match mode {
            Thresholding::PerType => r.entity_type.clone(),
            Thresholding::Global => GLOBAL_GROUP.to_string(),
        };
        let g = out
            .entry((r.subset, s.method))
            .or_default()
            .entry(key.clone())
            .or_insert_with(|| EvalGroup {
                group_key: key,
                ..Default::default()
            });
        if r.label.is_member() {
            g.member_scores.push(s.score);
        } else {
            g.nonmember_scores.push(s.score);
        }
    }
    Ok(out)
}

/// One report per (subset, method) present in `scores`.
pub fn evaluate(
    scores: &[AttackScore],
    records: &[BenchmarkRecord],
    mode: Thresholding,
    fpr_target: f64,
    execution: Execution,
) -> Result<Vec<EvalReport>, MetricsError> {
    if !(fpr_target > 0.0 && fpr_target < 1.0) {
        return Err(MetricsError::BadFprTarget(fpr_target));
    }
    let grouped = group_scores(scores, records, mode)?;
    let mut reports = Vec::new();
    for ((subset, method), groups) in grouped {
        let groups: Vec<EvalGroup> = groups.into_values().collect();
        let results = exec::map(execution, &groups, |g| g.evaluate(fpr_target));
        let mut notes = Vec::new();
        let mut ok = Vec::new();
        for (g, r) in groups.iter().zip(results) {
            match r {
                Ok(r) => ok.push(r),
                Err(e) => notes.push(format!(
                    "skipped group {} ({} members, {} nonmembers): {e}",
                    g.group_key,
                    g.member_scores.len(),
                    g.nonmember_scores.len()
                )),
            }
        }
        if ok.is_empty() {
            log::warn!("{subset}/{method}: no scorable groups");
            continue;
        }
        reports.push(EvalReport {
            subset,
            method,
            thresholding: mode,
            fpr_target,
            auc: weighted_mean(ok.iter().map(|g| (g.auc, g.n))),
            tpr: weighted_mean(ok.iter().map(|g| (g.tpr, g.n))),
            n: ok.iter().map(|g| g.n).sum(),
            groups: ok,
            notes,
        });
    }
    if reports.is_empty() {
        return Err(MetricsError::NoScorableGroups);
    }
    Ok(reports)
}
