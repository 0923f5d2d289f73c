//! Character span to token span mapping.

use crate::provider::{ScoredText, TokenScore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AlignError {
    #[error("no token lies inside characters ({0},{1})")]
    EmptySpan(usize, usize),
    #[error("matched tokens are not contiguous")]
    NonContiguous,
    #[error("character range ({start},{end}) outside text of length {len}")]
    OutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
}

/// Half-open token index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start_idx: usize,
    pub end_idx: usize,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.end_idx - self.start_idx
    }

    pub fn is_empty(&self) -> bool {
        self.start_idx == self.end_idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    /// Any token intersecting the range.
    #[default]
    Overlap,
    /// Only tokens fully inside the range.
    Contained,
}

/// Tokens of `scored` covering the character range `[start, end)`.
pub fn token_span(
    scored: &ScoredText,
    (start, end): (usize, usize),
    policy: OverlapPolicy,
) -> Result<TokenSpan, AlignError> {
    let len = scored.tokens.last().map_or(0, |t| t.char_end);
    if start > end || end > len {
        return Err(AlignError::OutOfRange { start, end, len });
    }
    let hit = |t: &TokenScore| match policy {
        OverlapPolicy::Overlap => t.char_start.max(start) < t.char_end.min(end),
        OverlapPolicy::Contained => start <= t.char_start && t.char_end <= end,
    };
    let idx: Vec<usize> = scored
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| hit(t))
        .map(|(i, _)| i)
        .collect();
    let (Some(&first), Some(&last)) = (idx.first(), idx.last()) else {
        return Err(AlignError::EmptySpan(start, end));
    };
    if last - first + 1 != idx.len() {
        return Err(AlignError::NonContiguous);
    }
    Ok(TokenSpan {
        start_idx: first,
        end_idx: last + 1,
    })
}

/// Split tokens into (prefix, candidate, suffix).
pub fn partition(
    scored: &ScoredText,
    span: TokenSpan,
) -> (&[TokenScore], &[TokenScore], &[TokenScore]) {
    let t = &scored.tokens;
    let end = span.end_idx.min(t.len());
    let start = span.start_idx.min(end);
    (&t[..start], &t[start..end], &t[end..])
}

#[cfg(test)]
pub(crate) fn scored_from_ranges(ranges: &[(usize, usize)], lps: &[f64]) -> ScoredText {
    let len = ranges.last().map_or(0, |r| r.1);
    ScoredText {
        text: "x".repeat(len),
        conditioning: None,
        tokens: ranges
            .iter()
            .zip(lps.iter().chain(std::iter::repeat(&-1.0)))
            .map(|(&(s, e), &lp)| TokenScore {
                token: "x".repeat(e - s),
                char_start: s,
                char_end: e,
                logprob: Some(lp),
            })
            .collect(),
        model_id: "test".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three() -> ScoredText {
        scored_from_ranges(&[(0, 5), (5, 11), (11, 15)], &[])
    }

    #[test]
    fn exact_boundary() {
        let s = three();
        assert_eq!(
            token_span(&s, (5, 11), OverlapPolicy::Overlap).unwrap(),
            TokenSpan {
                start_idx: 1,
                end_idx: 2
            }
        );
    }

    #[test]
    fn straddling_span() {
        let s = three();
        assert_eq!(
            token_span(&s, (3, 7), OverlapPolicy::Overlap).unwrap(),
            TokenSpan {
                start_idx: 0,
                end_idx: 2
            }
        );
        assert_eq!(
            token_span(&s, (3, 7), OverlapPolicy::Contained),
            Err(AlignError::EmptySpan(3, 7))
        );
        assert!(matches!(
            token_span(&s, (3, 70), OverlapPolicy::Overlap),
            Err(AlignError::OutOfRange { .. })
        ));
    }

    #[test]
    fn partitions() {
        let s = scored_from_ranges(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)], &[]);
        let sizes = |a: usize, b: usize| {
            let (p, c, x) = partition(
                &s,
                TokenSpan {
                    start_idx: a,
                    end_idx: b,
                },
            );
            (p.len(), c.len(), x.len())
        };
        assert_eq!(sizes(2, 4), (2, 2, 2));
        assert_eq!(sizes(0, 1), (0, 1, 5));
        assert_eq!(sizes(5, 6), (5, 1, 0));
    }

    fn tiling() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec(1usize..5, 1..12).prop_map(|widths| {
            let mut at = 0;
            widths
                .into_iter()
                .map(|w| {
                    let r = (at, at + w);
                    at += w;
                    r
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn contained_within_overlap(ranges in tiling(), a in 0usize..60, b in 0usize..60) {
            let s = scored_from_ranges(&ranges, &[]);
            let len = ranges.last().unwrap().1;
            let (lo, hi) = (a.min(b) % (len + 1), a.max(b) % (len + 1));
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            if let Ok(c) = token_span(&s, (lo, hi), OverlapPolicy::Contained) {
                let o = token_span(&s, (lo, hi), OverlapPolicy::Overlap).unwrap();
                prop_assert!(o.start_idx <= c.start_idx && c.end_idx <= o.end_idx);
            }
            if let Ok(o) = token_span(&s, (lo, hi), OverlapPolicy::Overlap) {
                let (p, c, x) = partition(&s, o);
                prop_assert_eq!(p.len() + c.len() + x.len(), ranges.len());
            }
        }
    }
}
