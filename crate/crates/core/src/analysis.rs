//! Analytical lenses over attack results: token-length correlations,
//! entity-count breakdowns and per-type vulnerability regression.

use crate::attacks::{AttackScore, MethodId};
use crate::corpus::{BenchmarkRecord, Pools, Subset};
use crate::metrics::{tpr_at_fpr, MetricsError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalysisError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("a variable has zero variance")]
    DegenerateVariance,
    #[error("x and y lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no group had both member and nonmember scores")]
    NoScorableGroups,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Token counts of a record's sentence around its candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthProfile {
    pub record_id: String,
    pub prefix_tokens: usize,
    pub candidate_tokens: usize,
    pub suffix_tokens: usize,
    /// prefix + candidate + suffix
    pub context_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub variable: String,
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::TooFewPoints(n));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::DegenerateVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` under a Student-t with `n − 2` degrees of
/// freedom, via the regularized incomplete beta function:
/// `p = I_{1−r²}((n−2)/2, 1/2)`.
pub fn p_value(r: f64, n: usize) -> Result<f64, AnalysisError> {
    if n < 3 {
        return Err(AnalysisError::TooFewPoints(n));
    }
    let df = (n - 2) as f64;
    let x = 1.0 - r * r;
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    Ok(statrs::function::beta::beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0))
}

pub fn correlate(variable: &str, x: &[f64], y: &[f64]) -> Result<CorrelationResult, AnalysisError> {
    let r = pearson(x, y)?;
    Ok(CorrelationResult {
        variable: variable.into(),
        r,
        p_value: p_value(r, x.len())?,
        n: x.len(),
    })
}

/// Least-squares slope of y on x.
pub fn ls_slope(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::DegenerateVariance);
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationUnit {
    /// Point-biserial over member records: success indicator vs length.
    PerRecord,
    /// Per-type TPR vs per-type median member length.
    PerType,
}

impl CorrelationUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationUnit::PerRecord => "per_record",
            CorrelationUnit::PerType => "per_type",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthCorrelation {
    pub subset: Subset,
    pub unit: CorrelationUnit,
    pub variable: &'static str,
    pub result: Result<CorrelationResult, AnalysisError>,
}

const LENGTH_VARS: [&str; 3] = ["prefix", "context", "candidate"];

fn length_of(p: &LengthProfile, var: &str) -> f64 {
    let n = match var {
        "prefix" => p.prefix_tokens,
        "context" => p.context_tokens,
        _ => p.candidate_tokens,
    };
    n as f64
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

struct Labelled<'a> {
    record: &'a BenchmarkRecord,
    score: f64,
}

/// (subset → key → [labelled scores]) for one method.
fn bucket<'a, K: Ord>(
    scores: &[AttackScore],
    records: &'a [BenchmarkRecord],
    method: MethodId,
    key: impl Fn(&BenchmarkRecord) -> K,
) -> BTreeMap<Subset, BTreeMap<K, Vec<Labelled<'a>>>> {
    let by_id: HashMap<&str, &BenchmarkRecord> =
        records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let mut out: BTreeMap<Subset, BTreeMap<K, Vec<Labelled<'a>>>> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.method == method) {
        if let Some(&record) = by_id.get(s.record_id.as_str()) {
            out.entry(record.subset)
                .or_default()
                .entry(key(record))
                .or_default()
                .push(Labelled {
                    record,
                    score: s.score,
                });
        }
    }
    out
}

fn split(group: &[Labelled<'_>]) -> (Vec<f64>, Vec<f64>) {
    let m = group
        .iter()
        .filter(|l| l.record.label.is_member())
        .map(|l| l.score)
        .collect();
    let n = group
        .iter()
        .filter(|l| !l.record.label.is_member())
        .map(|l| l.score)
        .collect();
    (m, n)
}

/// Correlate attack success with prefix, context and candidate token counts,
/// per subset, in both the per-record and the per-type unit. Success is
/// `score ≥` the TPR@FPR threshold of the record's entity type.
pub fn length_correlations(
    scores: &[AttackScore],
    records: &[BenchmarkRecord],
    lengths: &[LengthProfile],
    method: MethodId,
    fpr_target: f64,
) -> Vec<LengthCorrelation> {
    let profile: HashMap<&str, &LengthProfile> =
        lengths.iter().map(|p| (p.record_id.as_str(), p)).collect();
    let mut out = Vec::new();
    for (subset, types) in bucket(scores, records, method, |r| r.entity_type.clone()) {
        // per record: (indicator, profile)
        let mut points: Vec<(f64, &LengthProfile)> = Vec::new();
        // per type: (tpr, member profiles)
        let mut per_type: Vec<(f64, Vec<&LengthProfile>)> = Vec::new();
        for group in types.values() {
            let (m, n) = split(group);
            let Ok(t) = tpr_at_fpr(&m, &n, fpr_target) else {
                continue;
            };
            let mut profs = Vec::new();
            for l in group.iter().filter(|l| l.record.label.is_member()) {
                if let Some(&p) = profile.get(l.record.record_id.as_str()) {
                    points.push((f64::from(u8::from(l.score >= t.threshold)), p));
                    profs.push(p);
                }
            }
            if !profs.is_empty() {
                per_type.push((t.tpr, profs));
            }
        }
        for var in LENGTH_VARS {
            let ind: Vec<f64> = points.iter().map(|p| p.0).collect();
            let len: Vec<f64> = points.iter().map(|p| length_of(p.1, var)).collect();
            out.push(LengthCorrelation {
                subset,
                unit: CorrelationUnit::PerRecord,
                variable: var,
                result: correlate(var, &ind, &len),
            });
        }
        for var in LENGTH_VARS {
            let tpr: Vec<f64> = per_type.iter().map(|p| p.0).collect();
            let med: Vec<f64> = per_type
                .iter()
                .map(|(_, ps)| {
                    median(&mut ps.iter().map(|p| length_of(p, var)).collect::<Vec<_>>())
                })
                .collect();
            out.push(LengthCorrelation {
                subset,
                unit: CorrelationUnit::PerType,
                variable: var,
                result: correlate(var, &tpr, &med),
            });
        }
        for var in LENGTH_VARS {
            let pick = |u| {
                out.iter().rev().find(|c: &&LengthCorrelation| {
                    c.subset == subset && c.unit == u && c.variable == var
                })
            };
            if let (Some(a), Some(b)) = (
                pick(CorrelationUnit::PerRecord),
                pick(CorrelationUnit::PerType),
            ) {
                if let (Ok(a), Ok(b)) = (&a.result, &b.result) {
                    if a.p_value < 0.05 && b.p_value < 0.05 && a.r.signum() != b.r.signum() {
                        log::warn!(
                            "{subset}/{var}: per-record r={:.3} and per-type r={:.3} disagree in sign",
                            a.r,
                            b.r
                        );
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityCountPoint {
    pub n_entities: usize,
    pub tpr: f64,
    pub threshold: f64,
    /// Member plus nonmember records.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityCountSeries {
    pub subset: Subset,
    /// Sorted by `n_entities`.
    pub points: Vec<EntityCountPoint>,
    /// Pearson over (n_entities, tpr).
    pub trend: Result<CorrelationResult, AnalysisError>,
    pub notes: Vec<String>,
}

/// TPR@FPR per entity-count group, thresholds chosen within each group.
pub fn entity_count_tpr(
    scores: &[AttackScore],
    records: &[BenchmarkRecord],
    method: MethodId,
    fpr_target: f64,
) -> Result<Vec<EntityCountSeries>, AnalysisError> {
    let mut out = Vec::new();
    for (subset, groups) in bucket(scores, records, method, |r| r.n_entities) {
        let mut points = Vec::new();
        let mut notes = Vec::new();
        for (k, group) in &groups {
            let (m, n) = split(group);
            match tpr_at_fpr(&m, &n, fpr_target) {
                Ok(t) => points.push(EntityCountPoint {
                    n_entities: *k,
                    tpr: t.tpr,
                    threshold: t.threshold,
                    n: m.len() + n.len(),
                }),
                Err(e) => notes.push(format!(
                    "skipped n_entities={k} ({} members, {} nonmembers): {e}",
                    m.len(),
                    n.len()
                )),
            }
        }
        if points.is_empty() {
            continue;
        }
        let trend = trend_of(&points);
        out.push(EntityCountSeries {
            subset,
            points,
            trend,
            notes,
        });
    }
    if out.is_empty() {
        return Err(AnalysisError::NoScorableGroups);
    }
    Ok(out)
}

fn trend_of(points: &[EntityCountPoint]) -> Result<CorrelationResult, AnalysisError> {
    let x: Vec<f64> = points.iter().map(|p| p.n_entities as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.tpr).collect();
    correlate("n_entities", &x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeRegression {
    pub correlation: CorrelationResult,
    pub slope: f64,
}

/// Regress per-type AUC on the number of unique candidates of the type.
pub fn type_vulnerability_regression(
    per_type_auc: &BTreeMap<String, f64>,
    pools: &Pools,
) -> Result<TypeRegression, AnalysisError> {
    let (x, y): (Vec<f64>, Vec<f64>) = per_type_auc
        .iter()
        .filter_map(|(ty, auc)| Some((pools.get(ty)?.unique_count() as f64, *auc)))
        .unzip();
    if x.len() < 3 {
        return Err(AnalysisError::TooFewPoints(x.len()));
    }
    Ok(TypeRegression {
        correlation: correlate("unique_candidates", &x, &y)?,
        slope: ls_slope(&x, &y)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CandidatePool, Label};
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap(), -1.0);
        assert_eq!(p_value(0.0, 10).unwrap(), 1.0);
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0, 2.0]),
            Err(AnalysisError::TooFewPoints(2))
        );
        assert_eq!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(AnalysisError::DegenerateVariance)
        );
        assert_eq!(p_value(1.0, 10).unwrap(), 0.0);
    }

    fn rec(id: usize, ty: &str, k: usize, label: Label) -> BenchmarkRecord {
        BenchmarkRecord {
            record_id: format!("r{id:04}"),
            template_id: format!("t{id}"),
            subset: Subset::Untrained,
            entity_type: ty.into(),
            text: String::new(),
            candidate_value: String::new(),
            candidate_char_start: 0,
            candidate_char_end: 0,
            label,
            n_entities: k,
        }
    }

    fn sc(id: usize, s: f64) -> AttackScore {
        AttackScore {
            record_id: format!("r{id:04}"),
            method: MethodId::ReferenceSet,
            score: s,
            model_id: "m".into(),
        }
    }

    #[test]
    fn entity_count_trend() {
        // per group: 10 members, 20 nonmembers with scores 0..19; fpr 0.05 → t = 19
        let mut records = Vec::new();
        let mut scores = Vec::new();
        let mut id = 0;
        for (k, hits) in [(1, 4), (2, 3), (3, 2)] {
            for j in 0..10 {
                records.push(rec(id, "A", k, Label::Member));
                scores.push(sc(id, if j < hits { 100.0 } else { 0.0 }));
                id += 1;
            }
            for j in 0..20 {
                records.push(rec(id, "A", k, Label::Nonmember));
                scores.push(sc(id, j as f64));
                id += 1;
            }
        }
        let series = entity_count_tpr(&scores, &records, MethodId::ReferenceSet, 0.05).unwrap();
        let s = &series[0];
        let tprs: Vec<f64> = s.points.iter().map(|p| p.tpr).collect();
        assert_eq!(tprs, [0.4, 0.3, 0.2]);
        assert!((s.trend.as_ref().unwrap().r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_group_and_missing_nonmembers() {
        let records = vec![
            rec(0, "A", 1, Label::Member),
            rec(1, "A", 1, Label::Nonmember),
            rec(2, "A", 2, Label::Member),
        ];
        let scores = vec![sc(0, 1.0), sc(1, 0.0), sc(2, 1.0)];
        let series = entity_count_tpr(&scores, &records, MethodId::ReferenceSet, 0.05).unwrap();
        assert_eq!(series[0].points.len(), 1);
        assert_eq!(series[0].trend, Err(AnalysisError::TooFewPoints(1)));
        assert_eq!(series[0].notes.len(), 1);
        assert_eq!(
            entity_count_tpr(&scores, &records, MethodId::Zlib, 0.05),
            Err(AnalysisError::NoScorableGroups)
        );
    }

    fn pools(sizes: &[(&str, usize)]) -> Pools {
        sizes
            .iter()
            .map(|(ty, n)| {
                (
                    ty.to_string(),
                    CandidatePool {
                        entity_type: ty.to_string(),
                        trained_values: (0..*n).map(|i| format!("v{i}")).collect(),
                        ..Default::default()
                    },
                )
            })
            .collect()
    }

    #[test]
    fn type_regression_examples() {
        let p = pools(&[("A", 10), ("B", 20), ("C", 30), ("D", 40), ("E", 50)]);
        let auc: BTreeMap<String, f64> =
            [("A", 0.9), ("B", 0.8), ("C", 0.7), ("D", 0.6), ("E", 0.5)]
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect();
        let reg = type_vulnerability_regression(&auc, &p).unwrap();
        assert!((reg.correlation.r + 1.0).abs() < 1e-12);
        assert!((reg.slope + 0.01).abs() < 1e-12);
        let flat: BTreeMap<String, f64> = auc.keys().map(|k| (k.clone(), 0.7)).collect();
        assert_eq!(
            type_vulnerability_regression(&flat, &p),
            Err(AnalysisError::DegenerateVariance)
        );
        let few: BTreeMap<String, f64> = auc.into_iter().take(2).collect();
        assert_eq!(
            type_vulnerability_regression(&few, &p),
            Err(AnalysisError::TooFewPoints(2))
        );
    }

    fn profile(id: usize, prefix: usize) -> LengthProfile {
        LengthProfile {
            record_id: format!("r{id:04}"),
            prefix_tokens: prefix,
            candidate_tokens: 1,
            suffix_tokens: 2,
            context_tokens: prefix + 3,
        }
    }

    #[test]
    fn length_correlation_sign_and_degenerate() {
        // 20 members: the 10 with the longest prefixes succeed
        let mut records = Vec::new();
        let mut scores = Vec::new();
        let mut lengths = Vec::new();
        for i in 0..20 {
            records.push(rec(i, "A", 1, Label::Member));
            scores.push(sc(i, if i >= 10 { 100.0 } else { -100.0 }));
            lengths.push(profile(i, i));
        }
        for i in 20..60 {
            records.push(rec(i, "A", 1, Label::Nonmember));
            scores.push(sc(i, i as f64 - 20.0));
        }
        let res = length_correlations(&scores, &records, &lengths, MethodId::ReferenceSet, 0.05);
        let prefix = res
            .iter()
            .find(|c| c.unit == CorrelationUnit::PerRecord && c.variable == "prefix")
            .unwrap();
        assert!(prefix.result.as_ref().unwrap().r > 0.0);
        let cand = res
            .iter()
            .find(|c| c.unit == CorrelationUnit::PerRecord && c.variable == "candidate")
            .unwrap();
        assert_eq!(cand.result, Err(AnalysisError::DegenerateVariance));

        for s in scores.iter_mut().take(20) {
            s.score = 100.0;
        }
        let res = length_correlations(&scores, &records, &lengths, MethodId::ReferenceSet, 0.05);
        assert!(res
            .iter()
            .filter(|c| c.unit == CorrelationUnit::PerRecord)
            .all(|c| c.result == Err(AnalysisError::DegenerateVariance)));
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..50),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            if let Ok(r) = pearson(&x, &y) {
                let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let y2: Vec<f64> = y.iter().map(|v| v / a - b).collect();
                prop_assert!((pearson(&x2, &y).unwrap() - r).abs() < 1e-12);
                prop_assert!((pearson(&x, &y2).unwrap() - r).abs() < 1e-12);
            }
        }
    }
}
