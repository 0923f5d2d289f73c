use super::refset::PoolIndex;
use super::scores::*;
use super::{AttackConfig, AttackError, AttackScore, MethodId};
use crate::align::{partition, token_span, TokenSpan};
use crate::analysis::LengthProfile;
use crate::corpus::{BenchmarkRecord, Pools};
use crate::exec::{self, Execution};
use crate::provider::{LogprobProvider, ScoredText};
use crate::text::{char_len, splice};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A (record, method) pair that produced no score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub record_id: String,
    pub method: MethodId,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct AttackRun {
    /// Sorted by (record_id, method).
    pub scores: Vec<AttackScore>,
    pub skips: Vec<SkipEntry>,
    /// Token-length profile of each record's own sentence.
    pub lengths: Vec<LengthProfile>,
}

struct RecordOutcome {
    results: Vec<(MethodId, Result<f64, AttackError>)>,
    lengths: Option<LengthProfile>,
}

/// Score every record with every configured method. Failures are collected
/// per (record, method) and never abort the batch.
pub fn run_attacks(
    records: &[BenchmarkRecord],
    provider: &dyn LogprobProvider,
    pools: &Pools,
    config: &AttackConfig,
    execution: Execution,
) -> AttackRun {
    let needs_refs = config.methods.iter().any(|m| m.uses_refset());
    let indexes: BTreeMap<&str, PoolIndex> = if needs_refs {
        pools
            .iter()
            .map(|(k, p)| (k.as_str(), PoolIndex::new(p)))
            .collect()
    } else {
        BTreeMap::new()
    };
    let outcomes = exec::map(execution, records, |r| {
        score_record(r, provider, indexes.get(r.entity_type.as_str()), config)
    });

    let model_id = provider.model_id().to_string();
    let mut run = AttackRun::default();
    for (record, outcome) in records.iter().zip(outcomes) {
        run.lengths.extend(outcome.lengths);
        for (method, res) in outcome.results {
            match res.and_then(|s| {
                if s.is_finite() {
                    Ok(s)
                } else {
                    Err(AttackError::NonFinite)
                }
            }) {
                Ok(score) => run.scores.push(AttackScore {
                    record_id: record.record_id.clone(),
                    method,
                    score,
                    model_id: model_id.clone(),
                }),
                Err(e) => run.skips.push(SkipEntry {
                    record_id: record.record_id.clone(),
                    method,
                    error: e.to_string(),
                }),
            }
        }
    }
    run.scores
        .sort_by(|a, b| (&a.record_id, a.method).cmp(&(&b.record_id, b.method)));
    run.skips
        .sort_by(|a, b| (&a.record_id, a.method).cmp(&(&b.record_id, b.method)));
    run.lengths.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    run
}

fn score_record(
    record: &BenchmarkRecord,
    provider: &dyn LogprobProvider,
    index: Option<&PoolIndex>,
    config: &AttackConfig,
) -> RecordOutcome {
    let methods = &config.methods;
    let fail_all = |e: AttackError| RecordOutcome {
        results: methods.iter().map(|&m| (m, Err(e.clone()))).collect(),
        lengths: None,
    };
    let score = |text: &str, cond: Option<&str>| {
        provider
            .score_text(text, cond)
            .map_err(|e| AttackError::Provider(e.to_string()))
    };
    let plain = match score(&record.text, None) {
        Ok(s) => s,
        Err(e) => return fail_all(e),
    };
    let cand_range = (record.candidate_char_start, record.candidate_char_end);
    let span = token_span(&plain, cand_range, config.overlap_policy);
    let lengths = span.as_ref().ok().map(|&sp| {
        let (p, c, s) = partition(&plain, sp);
        LengthProfile {
            record_id: record.record_id.clone(),
            prefix_tokens: p.len(),
            candidate_tokens: c.len(),
            suffix_tokens: s.len(),
            context_tokens: p.len() + c.len() + s.len(),
        }
    });

    // reference texts are scored once and shared by both reference methods
    let refs: Option<Result<Vec<(ScoredText, TokenSpan)>, AttackError>> =
        methods.iter().any(|m| m.uses_refset()).then(|| {
            let index =
                index.ok_or_else(|| AttackError::UnknownType(record.entity_type.clone()))?;
            let set = index
                .draw(
                    &record.candidate_value,
                    config.refset_size,
                    config.seed,
                    &record.record_id,
                )
                .map_err(|e| AttackError::RefSetUnderfull {
                    found: e.partial.values.len(),
                    needed: e.needed,
                })?;
            set.values
                .iter()
                .map(|v| {
                    let text = splice(&record.text, cand_range.0, cand_range.1, v)
                        .expect("candidate offsets validated at build");
                    let s = score(&text, None)?;
                    let sp = token_span(
                        &s,
                        (cand_range.0, cand_range.0 + char_len(v)),
                        config.overlap_policy,
                    )?;
                    Ok((s, sp))
                })
                .collect()
        });

    let results = methods
        .iter()
        .map(|&m| {
            let res = match m {
                MethodId::LowestLoss => score_lowest_loss(&plain),
                MethodId::Zlib => score_zlib(&plain, config.zlib_level),
                MethodId::MinK => score_min_k(&plain, config.min_k_fraction),
                MethodId::Recall => match &config.recall_prefix {
                    None => Err(AttackError::NoRecallPrefix),
                    Some(prefix) => score(&record.text, Some(prefix))
                        .and_then(|pre| score_recall(&plain, &pre, config.recall_invert)),
                },
                MethodId::LowestLossSuffix => span
                    .clone()
                    .map_err(AttackError::from)
                    .and_then(|sp| score_lowest_loss_suffix(&plain, sp, config)),
                MethodId::ReferenceSet => with_refs(&refs, &span, |refs, sp| {
                    let lp_e = span_sum(&plain, sp)?;
                    let lp_refs: Vec<f64> = refs
                        .iter()
                        .map(|(s, rsp)| span_sum(s, *rsp))
                        .collect::<Result<_, _>>()?;
                    score_reference_set(lp_e, &lp_refs, config.llr_variant)
                }),
                MethodId::ReferenceSetSuffix => with_refs(&refs, &span, |refs, sp| {
                    let pairs: Vec<(&ScoredText, TokenSpan)> =
                        refs.iter().map(|(s, rsp)| (s, *rsp)).collect();
                    score_reference_set_suffix((&plain, sp), &pairs, config)
                }),
            };
            (m, res)
        })
        .collect();
    RecordOutcome { results, lengths }
}

fn with_refs(
    refs: &Option<Result<Vec<(ScoredText, TokenSpan)>, AttackError>>,
    span: &Result<TokenSpan, crate::align::AlignError>,
    f: impl FnOnce(&[(ScoredText, TokenSpan)], TokenSpan) -> Result<f64, AttackError>,
) -> Result<f64, AttackError> {
    let refs = refs
        .as_ref()
        .expect("computed when a reference method is configured");
    let refs = refs.as_ref().map_err(Clone::clone)?;
    let sp = span.clone()?;
    f(refs, sp)
}

/// Sum of candidate-span logprobs; every candidate token must be scored.
fn span_sum(scored: &ScoredText, span: TokenSpan) -> Result<f64, AttackError> {
    let (_, cand, _) = partition(scored, span);
    if cand.is_empty() || cand.iter().any(|t| t.logprob.is_none()) {
        return Err(AttackError::NoScoredTokens);
    }
    Ok(cand.iter().filter_map(|t| t.logprob).sum())
}
