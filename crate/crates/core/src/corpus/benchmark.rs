use super::{
    record_id, template_id, AnnotatedSample, BenchmarkRecord, CandidatePool, Label, Partition,
    Pools, Subset,
};
use crate::seed::derive_rng;
use crate::text::{char_len, splice};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// A (template, subset) pair for which no replacement value was available.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolExhausted {
    pub template_id: String,
    pub entity_type: String,
    pub subset: Subset,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkBuild {
    pub records: Vec<BenchmarkRecord>,
    pub skipped: Vec<PoolExhausted>,
}

/// Training-partition texts in sample-id order, one per line.
pub fn emit_training_corpus(samples: &[AnnotatedSample]) -> String {
    let mut train: Vec<&AnnotatedSample> = samples
        .iter()
        .filter(|s| s.partition == Some(Partition::TrainSet))
        .collect();
    train.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut out = String::new();
    for s in train {
        out.push_str(&s.text);
        out.push('\n');
    }
    out
}

/// Emit member/nonmember record pairs for every slot of every training
/// sample, once per subset. Draws are seeded per (template, subset).
pub fn build_benchmark(samples: &[AnnotatedSample], pools: &Pools, seed: u64) -> BenchmarkBuild {
    let mut train: Vec<&AnnotatedSample> = samples
        .iter()
        .filter(|s| s.partition == Some(Partition::TrainSet))
        .collect();
    train.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let trained_texts: HashSet<&str> = train.iter().map(|s| s.text.as_str()).collect();

    let mut build = BenchmarkBuild::default();
    let empty = CandidatePool::default();
    for sample in train {
        let n_entities = sample.spans.len();
        for (slot, span) in sample.spans.iter().enumerate() {
            let tid = template_id(&sample.sample_id, slot);
            let pool = pools.get(&span.entity_type).unwrap_or(&empty);
            for subset in Subset::ALL {
                let base = |label, text: String, value: &str| BenchmarkRecord {
                    record_id: record_id(&tid, subset, label),
                    template_id: tid.clone(),
                    subset,
                    entity_type: span.entity_type.clone(),
                    candidate_char_end: span.char_start + char_len(value),
                    text,
                    candidate_value: value.to_string(),
                    candidate_char_start: span.char_start,
                    label,
                    n_entities,
                };
                // A replacement must not recreate a trained sentence.
                let eligible =
                    |values: &std::collections::BTreeSet<String>| -> Vec<(String, String)> {
                        values
                            .iter()
                            .filter(|v| **v != span.value)
                            .filter_map(|v| {
                                let t = splice(&sample.text, span.char_start, span.char_end, v)?;
                                (!trained_texts.contains(t.as_str())).then(|| (v.clone(), t))
                            })
                            .collect()
                    };
                let mut rng = derive_rng(seed, &["nonmember", &tid, subset.as_str()]);
                let choice = match subset {
                    Subset::Trained => pick(&mut rng, eligible(&pool.trained_values)),
                    Subset::Untrained => pick(&mut rng, eligible(&pool.untrained_values)),
                    Subset::Mix => {
                        let mut a = eligible(&pool.trained_values);
                        let mut b = eligible(&pool.untrained_values);
                        // fair coin, re-flipped while it lands on an empty pool
                        loop {
                            if a.is_empty() && b.is_empty() {
                                break None;
                            }
                            let side = if rng.random_bool(0.5) { &mut a } else { &mut b };
                            if !side.is_empty() {
                                break pick(&mut rng, std::mem::take(side));
                            }
                        }
                    }
                };
                let Some((value, text)) = choice else {
                    log::warn!(
                        "pool exhausted: template {tid} type {} subset {subset}",
                        span.entity_type
                    );
                    build.skipped.push(PoolExhausted {
                        template_id: tid.clone(),
                        entity_type: span.entity_type.clone(),
                        subset,
                    });
                    continue;
                };
                build
                    .records
                    .push(base(Label::Member, sample.text.clone(), &span.value));
                build.records.push(base(Label::Nonmember, text, &value));
            }
        }
    }
    build
}

fn pick<T>(rng: &mut impl Rng, mut items: Vec<T>) -> Option<T> {
    if items.is_empty() {
        return None;
    }
    let i = rng.random_range(0..items.len());
    Some(items.swap_remove(i))
}
