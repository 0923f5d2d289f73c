use super::{BenchmarkRecord, Label, Pools, Subset};
use crate::text::{byte_offset, char_slice};
use serde::Serialize;
use std::collections::{BTreeMap, HashSet};

const MAX_EXAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub failed: usize,
    /// First few failure descriptions.
    pub examples: Vec<String>,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            failed: 0,
            examples: vec![],
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.failed += 1;
            if self.examples.len() < MAX_EXAMPLES {
                self.examples.push(what());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    /// (subset, members, nonmembers)
    pub subset_counts: Vec<(Subset, usize, usize)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Check every record invariant against the emitted training corpus text.
pub fn validate_benchmark(
    records: &[BenchmarkRecord],
    corpus: &str,
    pools: &Pools,
) -> ValidationReport {
    let corpus_lines: HashSet<&str> = corpus.lines().collect();

    let mut pool_check = CheckResult::new("pool_disjointness");
    for p in pools.values() {
        let overlap: Vec<_> = p.trained_values.intersection(&p.untrained_values).collect();
        pool_check.check(overlap.is_empty(), || {
            format!("{}: values in both pools: {overlap:?}", p.entity_type)
        });
        let has_empty = p.trained_values.contains("") || p.untrained_values.contains("");
        pool_check.check(!has_empty, || {
            format!("{}: empty value in pool", p.entity_type)
        });
    }

    let mut offsets = CheckResult::new("offsets");
    let mut labels = CheckResult::new("membership_label");
    for r in records {
        let slice = char_slice(&r.text, r.candidate_char_start, r.candidate_char_end);
        offsets.check(slice == Some(r.candidate_value.as_str()), || {
            format!(
                "{}: slice {slice:?} != {:?}",
                r.record_id, r.candidate_value
            )
        });
        let in_corpus = corpus_lines.contains(r.text.as_str());
        labels.check(in_corpus == r.label.is_member(), || {
            format!(
                "{}: label {:?} but in_corpus={in_corpus}",
                r.record_id, r.label
            )
        });
    }

    let mut pairing = CheckResult::new("pairing");
    let mut by_key: BTreeMap<(&str, Subset), Vec<&BenchmarkRecord>> = BTreeMap::new();
    for r in records {
        by_key
            .entry((&r.template_id, r.subset))
            .or_default()
            .push(r);
    }
    for ((tid, subset), group) in &by_key {
        let m: Vec<_> = group.iter().filter(|r| r.label == Label::Member).collect();
        let n: Vec<_> = group
            .iter()
            .filter(|r| r.label == Label::Nonmember)
            .collect();
        let ok = m.len() == 1 && n.len() == 1 && differ_only_on_candidate(m[0], n[0]);
        pairing.check(ok, || {
            format!(
                "{tid}/{subset}: {} member, {} nonmember record(s)",
                m.len(),
                n.len()
            )
        });
    }

    let mut disjoint = CheckResult::new("untrained_corpus_disjointness");
    for p in pools.values() {
        for v in &p.untrained_values {
            disjoint.check(!corpus.contains(v.as_str()), || {
                format!(
                    "{}: untrained value {v:?} occurs in training corpus",
                    p.entity_type
                )
            });
        }
    }

    let mut counts = CheckResult::new("subset_counts");
    let mut subset_counts = Vec::new();
    for subset in Subset::ALL {
        let of = |l: Label| {
            records
                .iter()
                .filter(|r| r.subset == subset && r.label == l)
                .count()
        };
        let (m, n) = (of(Label::Member), of(Label::Nonmember));
        counts.check(m == n, || {
            format!("{subset}: {m} members vs {n} nonmembers")
        });
        subset_counts.push((subset, m, n));
    }

    ValidationReport {
        checks: vec![pool_check, offsets, labels, pairing, disjoint, counts],
        subset_counts,
    }
}

fn differ_only_on_candidate(a: &BenchmarkRecord, b: &BenchmarkRecord) -> bool {
    if a.candidate_char_start != b.candidate_char_start {
        return false;
    }
    let parts = |r: &BenchmarkRecord| {
        let s = byte_offset(&r.text, r.candidate_char_start)?;
        let e = byte_offset(&r.text, r.candidate_char_end)?;
        Some((r.text[..s].to_string(), r.text[e..].to_string()))
    };
    matches!((parts(a), parts(b)), (Some(x), Some(y)) if x == y)
}
