use super::AttackConfig;
use crate::corpus::{BenchmarkRecord, CandidatePool};
use crate::refmodel::lm_tokenize;
use crate::seed::derive_rng;
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CasingClass {
    AllLower,
    AllUpper,
    Title,
    Mixed,
    /// No cased letters at all (digits, symbols).
    Uncased,
}

/// Casing of the cased letters in `s`. Title means every whitespace word
/// starts upper-case and continues lower-case.
pub fn casing_class(s: &str) -> CasingClass {
    let cased: Vec<char> = s
        .chars()
        .filter(|c| c.is_lowercase() || c.is_uppercase())
        .collect();
    if cased.is_empty() {
        return CasingClass::Uncased;
    }
    if cased.iter().all(|c| c.is_lowercase()) {
        return CasingClass::AllLower;
    }
    if cased.iter().all(|c| c.is_uppercase()) {
        return CasingClass::AllUpper;
    }
    let title = s.split_whitespace().all(|w| {
        let mut letters = w.chars().filter(|c| c.is_lowercase() || c.is_uppercase());
        match letters.next() {
            None => true,
            Some(first) => first.is_uppercase() && letters.all(|c| c.is_lowercase()),
        }
    });
    if title {
        CasingClass::Title
    } else {
        CasingClass::Mixed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    Frequency,
    Casing,
    Length,
}

/// Relaxation order when too few values match every cue.
const RELAXATION: [Cue; 3] = [Cue::Frequency, Cue::Casing, Cue::Length];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceCues {
    /// Token count under the reference tokenizer.
    pub length: usize,
    pub casing: CasingClass,
    /// Occurrence-count tercile within the type: 0, 1 or 2.
    pub frequency_bin: u8,
}

impl SurfaceCues {
    fn matches(&self, other: &SurfaceCues, relaxed: &[Cue]) -> bool {
        (relaxed.contains(&Cue::Length) || self.length.abs_diff(other.length) <= 1)
            && (relaxed.contains(&Cue::Casing) || self.casing == other.casing)
            && (relaxed.contains(&Cue::Frequency) || self.frequency_bin == other.frequency_bin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefSet {
    pub entity_type: String,
    pub values: Vec<String>,
    /// Cues of the candidate the set was matched on.
    pub cues: SurfaceCues,
    /// Cues dropped to reach the requested size.
    pub relaxed: Vec<Cue>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("reference set underfull: {} of {needed}", partial.values.len())]
pub struct RefSetUnderfull {
    pub partial: RefSet,
    pub needed: usize,
}

/// Surface cues of every value in one pool, computed once.
#[derive(Debug, Clone)]
pub struct PoolIndex {
    entity_type: String,
    values: Vec<(String, SurfaceCues)>,
    thresholds: (usize, usize),
}

impl PoolIndex {
    pub fn new(pool: &CandidatePool) -> Self {
        let mut counts: Vec<usize> = pool
            .all_values()
            .map(|v| pool.counts.get(v).copied().unwrap_or(0))
            .collect();
        counts.sort_unstable();
        let thresholds = if counts.is_empty() {
            (0, 0)
        } else {
            (counts[counts.len() / 3], counts[2 * counts.len() / 3])
        };
        let mut idx = Self {
            entity_type: pool.entity_type.clone(),
            values: Vec::new(),
            thresholds,
        };
        let mut values: Vec<(String, SurfaceCues)> = pool
            .all_values()
            .map(|v| {
                (
                    v.clone(),
                    idx.cues(v, pool.counts.get(v).copied().unwrap_or(0)),
                )
            })
            .collect();
        values.sort_by(|a, b| a.0.cmp(&b.0));
        idx.values = values;
        idx
    }

    fn frequency_bin(&self, count: usize) -> u8 {
        (count > self.thresholds.0) as u8 + (count > self.thresholds.1) as u8
    }

    fn cues(&self, value: &str, count: usize) -> SurfaceCues {
        SurfaceCues {
            length: lm_tokenize(value).len(),
            casing: casing_class(value),
            frequency_bin: self.frequency_bin(count),
        }
    }

    fn cues_of(&self, value: &str) -> SurfaceCues {
        match self.values.binary_search_by(|(v, _)| v.as_str().cmp(value)) {
            Ok(i) => self.values[i].1,
            Err(_) => self.cues(value, 0),
        }
    }

    /// Draw `n` references for `candidate`, seeded by `(seed, record_id)`.
    pub fn draw(
        &self,
        candidate: &str,
        n: usize,
        seed: u64,
        record_id: &str,
    ) -> Result<RefSet, RefSetUnderfull> {
        let cues = self.cues_of(candidate);
        let others: Vec<&(String, SurfaceCues)> =
            self.values.iter().filter(|(v, _)| v != candidate).collect();
        let mut rng = derive_rng(seed, &["refset", record_id]);
        let mut eligible = Vec::new();
        for level in 0..=RELAXATION.len() {
            let relaxed = &RELAXATION[..level];
            eligible = others
                .iter()
                .filter(|(_, c)| cues.matches(c, relaxed))
                .map(|(v, _)| v.clone())
                .collect::<Vec<String>>();
            if eligible.len() >= n {
                let values = eligible.choose_multiple(&mut rng, n).cloned().collect();
                return Ok(RefSet {
                    entity_type: self.entity_type.clone(),
                    values,
                    cues,
                    relaxed: relaxed.to_vec(),
                });
            }
        }
        Err(RefSetUnderfull {
            partial: RefSet {
                entity_type: self.entity_type.clone(),
                values: eligible,
                cues,
                relaxed: RELAXATION.to_vec(),
            },
            needed: n,
        })
    }

    /// Values passing every cue for `candidate`, before any relaxation.
    pub fn strict_matches(&self, candidate: &str) -> Vec<&str> {
        let cues = self.cues_of(candidate);
        self.values
            .iter()
            .filter(|(v, c)| v != candidate && cues.matches(c, &[]))
            .map(|(v, _)| v.as_str())
            .collect()
    }
}

/// Type-consistent, surface-matched reference values for `record`'s
/// candidate, drawn from `pool` without the candidate itself.
pub fn build_refset(
    record: &BenchmarkRecord,
    pool: &CandidatePool,
    config: &AttackConfig,
    seed: u64,
) -> Result<RefSet, RefSetUnderfull> {
    PoolIndex::new(pool).draw(
        &record.candidate_value,
        config.refset_size,
        seed,
        &record.record_id,
    )
}
