use super::{AnnotatedSample, CorpusError, Partition};
use crate::seed::derive_rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub holdout_fraction: f64,
}

impl SplitAssignment {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            holdout_fraction: 0.5,
        }
    }

    /// Number of training samples out of `n`: ⌈(1 − holdout)·n⌉.
    pub fn train_count(&self, n: usize) -> usize {
        // guard against 0.3 * 10 = 3.0000000000000004
        let x = (1.0 - self.holdout_fraction) * n as f64;
        ((x - 1e-9).ceil().max(0.0) as usize).min(n)
    }
}

/// Seeded shuffle, then the first ⌈(1 − holdout)·n⌉ samples go to training.
pub fn assign_partition(
    mut samples: Vec<AnnotatedSample>,
    split: &SplitAssignment,
) -> Result<Vec<AnnotatedSample>, CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if !(split.holdout_fraction > 0.0 && split.holdout_fraction < 1.0) {
        return Err(CorpusError::InvalidHoldoutFraction(split.holdout_fraction));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut derive_rng(split.seed, &["partition"]));
    let n_train = split.train_count(samples.len());
    for (rank, &idx) in order.iter().enumerate() {
        samples[idx].partition = Some(if rank < n_train {
            Partition::TrainSet
        } else {
            Partition::HoldoutSet
        });
    }
    Ok(samples)
}

/// Candidate values of one entity type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub entity_type: String,
    /// Values seen in at least one training-partition span.
    pub trained_values: BTreeSet<String>,
    /// Values seen only in holdout spans.
    pub untrained_values: BTreeSet<String>,
    /// Occurrence counts over the whole source corpus, both partitions.
    pub counts: BTreeMap<String, usize>,
}

impl CandidatePool {
    pub fn unique_count(&self) -> usize {
        self.trained_values.len() + self.untrained_values.len()
    }

    pub fn all_values(&self) -> impl Iterator<Item = &String> {
        self.trained_values
            .iter()
            .chain(self.untrained_values.iter())
    }
}

pub type Pools = BTreeMap<String, CandidatePool>;

/// Build per-type pools. Samples without a partition are ignored.
pub fn build_pools(samples: &[AnnotatedSample]) -> Pools {
    let mut pools = Pools::new();
    let mut holdout: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for s in samples {
        for sp in &s.spans {
            let pool = pools
                .entry(sp.entity_type.clone())
                .or_insert_with(|| CandidatePool {
                    entity_type: sp.entity_type.clone(),
                    ..Default::default()
                });
            match s.partition {
                Some(Partition::TrainSet) => {
                    pool.trained_values.insert(sp.value.clone());
                }
                Some(Partition::HoldoutSet) => {
                    holdout
                        .entry(&sp.entity_type)
                        .or_default()
                        .insert(&sp.value);
                }
                None => continue,
            }
            *pool.counts.entry(sp.value.clone()).or_default() += 1;
        }
    }
    for (ty, values) in holdout {
        let pool = pools.get_mut(ty).expect("pool created above");
        for v in values {
            if !pool.trained_values.contains(v) {
                pool.untrained_values.insert(v.to_string());
            }
        }
    }
    for pool in pools.values_mut() {
        pool.trained_values.remove("");
        pool.untrained_values.remove("");
    }
    pools
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntitySpan;

    fn sample(id: usize, spans: &[(&str, &str)], part: Option<Partition>) -> AnnotatedSample {
        let mut text = String::new();
        let mut out = Vec::new();
        for (ty, v) in spans {
            let start = text.chars().count();
            text.push_str(v);
            out.push(EntitySpan {
                entity_type: ty.to_string(),
                char_start: start,
                char_end: start + v.chars().count(),
                value: v.to_string(),
            });
            text.push(' ');
        }
        AnnotatedSample {
            sample_id: format!("s{id:06}"),
            text,
            spans: out,
            partition: part,
        }
    }

    fn plain(n: usize) -> Vec<AnnotatedSample> {
        (0..n).map(|i| sample(i, &[("N", "x")], None)).collect()
    }

    fn count(v: &[AnnotatedSample], p: Partition) -> usize {
        v.iter().filter(|s| s.partition == Some(p)).count()
    }

    #[test]
    fn even_split() {
        let v = assign_partition(plain(4), &SplitAssignment::new(7)).unwrap();
        assert_eq!(count(&v, Partition::TrainSet), 2);
        assert_eq!(count(&v, Partition::HoldoutSet), 2);
    }

    #[test]
    fn ceiling_rule() {
        let v = assign_partition(plain(5), &SplitAssignment::new(7)).unwrap();
        assert_eq!(count(&v, Partition::TrainSet), 3);
        assert_eq!(count(&v, Partition::HoldoutSet), 2);
        let split = SplitAssignment {
            seed: 0,
            holdout_fraction: 0.7,
        };
        assert_eq!(split.train_count(10), 3);
    }

    #[test]
    fn rerun_is_identical() {
        let a = assign_partition(plain(50), &SplitAssignment::new(11)).unwrap();
        let b = assign_partition(plain(50), &SplitAssignment::new(11)).unwrap();
        assert_eq!(a, b);
        let c = assign_partition(plain(50), &SplitAssignment::new(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_and_bad_fraction() {
        assert!(matches!(
            assign_partition(vec![], &SplitAssignment::new(1)),
            Err(CorpusError::EmptyCorpus)
        ));
        let bad = SplitAssignment {
            seed: 1,
            holdout_fraction: 1.0,
        };
        assert!(assign_partition(plain(2), &bad).is_err());
    }

    #[test]
    fn pool_set_rule() {
        let samples = vec![
            sample(
                0,
                &[("NAME", "Ann"), ("CITY", "Oslo")],
                Some(Partition::TrainSet),
            ),
            sample(1, &[("NAME", "Bob")], Some(Partition::TrainSet)),
            sample(2, &[("NAME", "Bob")], Some(Partition::HoldoutSet)),
            sample(3, &[("NAME", "Eve")], Some(Partition::HoldoutSet)),
        ];
        let pools = build_pools(&samples);
        let names = &pools["NAME"];
        assert_eq!(
            names.trained_values,
            ["Ann", "Bob"].iter().map(|s| s.to_string()).collect()
        );
        assert_eq!(
            names.untrained_values,
            ["Eve"].iter().map(|s| s.to_string()).collect()
        );
        assert_eq!(names.counts["Bob"], 2);
        assert!(pools["CITY"].untrained_values.is_empty());
        for p in pools.values() {
            assert!(p.trained_values.is_disjoint(&p.untrained_values));
        }
    }
}
