use super::{AttackConfig, AttackError, LlrVariant, SuffixWindow};
use crate::align::TokenSpan;
use crate::provider::{ScoredText, TokenScore};
use flate2::write::ZlibEncoder;
use flate2::Compression;
use std::io::Write;

fn defined(scored: &ScoredText) -> Result<Vec<f64>, AttackError> {
    let v: Vec<f64> = scored.logprobs().collect();
    if v.is_empty() {
        return Err(AttackError::NoScoredTokens);
    }
    Ok(v)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean defined token logprob (negative average NLL).
pub fn score_lowest_loss(scored: &ScoredText) -> Result<f64, AttackError> {
    Ok(mean(&defined(scored)?))
}

/// Size in bytes of the zlib stream (RFC 1950) of `text` at `level`.
pub fn zlib_len(text: &str, level: u32) -> usize {
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(level));
    enc.write_all(text.as_bytes())
        .expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail").len()
}

/// Total logprob per compressed byte.
pub fn score_zlib(scored: &ScoredText, level: u32) -> Result<f64, AttackError> {
    let total: f64 = defined(scored)?.iter().sum();
    Ok(total / zlib_len(&scored.text, level) as f64)
}

/// Mean of the ⌈k·n⌉ smallest defined logprobs.
pub fn score_min_k(scored: &ScoredText, k: f64) -> Result<f64, AttackError> {
    let mut lps = defined(scored)?;
    let m = ((k * lps.len() as f64).ceil() as usize).clamp(1, lps.len());
    if m == lps.len() {
        // same summation order as score_lowest_loss
        return Ok(mean(&lps));
    }
    lps.sort_by(f64::total_cmp);
    Ok(mean(&lps[..m]))
}

/// `LL(x | prefix) / LL(x)`, negated when `invert` is set. When both scores
/// tile the text identically, only tokens defined in both are summed.
pub fn score_recall(
    plain: &ScoredText,
    prefixed: &ScoredText,
    invert: bool,
) -> Result<f64, AttackError> {
    if plain.text != prefixed.text {
        return Err(AttackError::MismatchedTarget);
    }
    let same_tokens = plain.tokens.len() == prefixed.tokens.len()
        && plain
            .tokens
            .iter()
            .zip(&prefixed.tokens)
            .all(|(a, b)| (a.char_start, a.char_end) == (b.char_start, b.char_end));
    let (ll_plain, ll_prefixed) = if same_tokens {
        let both: Vec<(f64, f64)> = plain
            .tokens
            .iter()
            .zip(&prefixed.tokens)
            .filter_map(|(a, b)| Some((a.logprob?, b.logprob?)))
            .collect();
        if both.is_empty() {
            return Err(AttackError::NoScoredTokens);
        }
        (
            both.iter().map(|p| p.0).sum::<f64>(),
            both.iter().map(|p| p.1).sum::<f64>(),
        )
    } else {
        (
            defined(plain)?.iter().sum(),
            defined(prefixed)?.iter().sum(),
        )
    };
    if ll_plain.abs() < 1e-12 {
        return Err(AttackError::ZeroDenominator);
    }
    let r = ll_prefixed / ll_plain;
    Ok(if invert { -r } else { r })
}

/// `ln Σ exp(x)` without overflow or underflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Reference-set normalization of the candidate logprob `lp_e`.
///
/// Ratio: `lp_e − ln((1/N) Σ exp(lp_ref))`. Standardized:
/// `(lp_e − mean) / max(popstd, 1e-9)`.
pub fn score_reference_set(
    lp_e: f64,
    lp_refs: &[f64],
    variant: LlrVariant,
) -> Result<f64, AttackError> {
    if lp_refs.is_empty() {
        return Err(AttackError::EmptyRefs);
    }
    let n = lp_refs.len() as f64;
    Ok(match variant {
        LlrVariant::Ratio => lp_e - (log_sum_exp(lp_refs) - n.ln()),
        LlrVariant::Standardized => {
            let mu = lp_refs.iter().sum::<f64>() / n;
            let var = lp_refs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            (lp_e - mu) / var.sqrt().max(1e-9)
        }
    })
}

/// Tokens in the continuation window after `span`, preceded by the
/// candidate tokens when `suffix_includes_candidate` is set.
pub fn suffix_slice<'a>(
    scored: &'a ScoredText,
    span: TokenSpan,
    config: &AttackConfig,
) -> Result<&'a [TokenScore], AttackError> {
    let n = scored.tokens.len();
    let end = span.end_idx.min(n);
    let stop = match config.suffix_window {
        SuffixWindow::All => n,
        SuffixWindow::Tokens(w) => (end + w).min(n),
    };
    let start = if config.suffix_includes_candidate {
        span.start_idx.min(end)
    } else {
        end
    };
    if stop == start {
        return Err(AttackError::EmptyWindow);
    }
    Ok(&scored.tokens[start..stop])
}

fn slice_logprobs(slice: &[TokenScore]) -> Result<Vec<f64>, AttackError> {
    let v: Vec<f64> = slice.iter().filter_map(|t| t.logprob).collect();
    if v.is_empty() {
        return Err(AttackError::NoScoredTokens);
    }
    Ok(v)
}

/// Mean logprob over the suffix window.
pub fn score_lowest_loss_suffix(
    scored: &ScoredText,
    span: TokenSpan,
    config: &AttackConfig,
) -> Result<f64, AttackError> {
    Ok(mean(&slice_logprobs(suffix_slice(scored, span, config)?)?))
}

/// Reference-set score on summed suffix-window logprobs. References whose
/// window is empty are dropped.
pub fn score_reference_set_suffix(
    candidate: (&ScoredText, TokenSpan),
    refs: &[(&ScoredText, TokenSpan)],
    config: &AttackConfig,
) -> Result<f64, AttackError> {
    let sum = |(s, span): (&ScoredText, TokenSpan)| -> Result<f64, AttackError> {
        Ok(slice_logprobs(suffix_slice(s, span, config)?)?.iter().sum())
    };
    let lp_e = sum(candidate)?;
    let lp_refs: Vec<f64> = refs
        .iter()
        .filter_map(|&r| match sum(r) {
            Ok(x) => Some(Ok(x)),
            Err(AttackError::EmptyWindow) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<_, _>>()?;
    score_reference_set(lp_e, &lp_refs, config.llr_variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::scored_from_ranges;
    use proptest::prelude::*;

    fn lps(v: &[f64]) -> ScoredText {
        let ranges: Vec<_> = (0..v.len()).map(|i| (i, i + 1)).collect();
        scored_from_ranges(&ranges, v)
    }

    fn span(a: usize, b: usize) -> TokenSpan {
        TokenSpan {
            start_idx: a,
            end_idx: b,
        }
    }

    #[test]
    fn lowest_loss_examples() {
        assert_eq!(score_lowest_loss(&lps(&[-1.0, -3.0])).unwrap(), -2.0);
        assert_eq!(score_lowest_loss(&lps(&[-2.0])).unwrap(), -2.0);
        let mut s = lps(&[-1.0]);
        s.tokens[0].logprob = None;
        assert_eq!(score_lowest_loss(&s), Err(AttackError::NoScoredTokens));
    }

    #[test]
    fn zlib_examples() {
        // reference: python3 -c "import zlib; print(len(zlib.compress(b'a'*100, 6)))"
        assert_eq!(zlib_len(&"a".repeat(100), 6), 12);
        let t = "My name is Kalora and I live in Brenton .";
        assert_eq!(zlib_len(t, 6), 48);
        assert_eq!(zlib_len(t, 0), 52);
        assert_eq!(zlib_len(t, 6), zlib_len(t, 6));
        // Σ = −50, C = 20 → −2.5
        let c = 20.0;
        assert_eq!(-50.0 / c, -2.5);
        let mut s = lps(&[-25.0, -25.0]);
        s.text = "a".repeat(100);
        s.tokens[1].char_end = 100;
        assert_eq!(score_zlib(&s, 6).unwrap(), -50.0 / 12.0);
    }

    #[test]
    fn min_k_examples() {
        let s = lps(&[-1.0, -2.0, -3.0, -4.0]);
        assert_eq!(score_min_k(&s, 0.5).unwrap(), -3.5);
        assert_eq!(
            score_min_k(&s, 1.0).unwrap(),
            score_lowest_loss(&s).unwrap()
        );
        assert_eq!(score_min_k(&lps(&[-7.5]), 0.01).unwrap(), -7.5);
        assert_eq!(score_min_k(&lps(&[-7.5]), 1.0).unwrap(), -7.5);
    }

    #[test]
    fn recall_examples() {
        let plain = lps(&[-4.0, -6.0]);
        let pre = lps(&[-3.0, -5.0]);
        assert!((score_recall(&plain, &pre, false).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(score_recall(&plain, &plain, false).unwrap(), 1.0);
        assert!((score_recall(&plain, &pre, true).unwrap() + 0.8).abs() < 1e-15);
        assert_eq!(
            score_recall(&lps(&[0.0]), &lps(&[-1.0]), false),
            Err(AttackError::ZeroDenominator)
        );
        let mut other = lps(&[-1.0, -1.0]);
        other.text = "yy".into();
        assert_eq!(
            score_recall(&plain, &other, false),
            Err(AttackError::MismatchedTarget)
        );
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn reference_set_examples() {
        let r = score_reference_set(
            0.5f64.ln(),
            &[0.25f64.ln(), 0.25f64.ln()],
            LlrVariant::Ratio,
        )
        .unwrap();
        assert!((r - 2f64.ln()).abs() < 1e-12);
        assert!((r - 0.6931).abs() < 1e-4);
        assert_eq!(
            score_reference_set(-3.0, &[-3.0, -3.0, -3.0], LlrVariant::Ratio).unwrap(),
            0.0
        );
        assert_eq!(
            score_reference_set(-1.0, &[-1.0, -3.0], LlrVariant::Standardized).unwrap(),
            1.0
        );
        assert_eq!(
            score_reference_set(-1.0, &[], LlrVariant::Ratio),
            Err(AttackError::EmptyRefs)
        );
        // degenerate spread uses the 1e-9 floor
        let z = score_reference_set(-1.0, &[-2.0, -2.0], LlrVariant::Standardized).unwrap();
        assert!((z - 1e9).abs() < 1e-3);
    }

    #[test]
    fn suffix_slice_examples() {
        let s = lps(&[-1.0, -2.0, -3.0, -4.0, -5.0, -6.0]);
        let mut cfg = AttackConfig {
            suffix_window: SuffixWindow::Tokens(2),
            ..Default::default()
        };
        let sl = suffix_slice(&s, span(2, 4), &cfg).unwrap();
        assert_eq!(sl.iter().map(|t| t.char_start).collect::<Vec<_>>(), [4, 5]);
        cfg.suffix_window = SuffixWindow::All;
        assert_eq!(
            suffix_slice(&s, span(4, 6), &cfg),
            Err(AttackError::EmptyWindow)
        );
        cfg.suffix_includes_candidate = true;
        cfg.suffix_window = SuffixWindow::Tokens(1);
        let sl = suffix_slice(&s, span(2, 4), &cfg).unwrap();
        assert_eq!(
            sl.iter().map(|t| t.char_start).collect::<Vec<_>>(),
            [2, 3, 4]
        );
    }

    #[test]
    fn lowest_loss_suffix_examples() {
        let cfg = AttackConfig::default();
        let s = lps(&[-9.0, -2.0, -4.0]);
        assert_eq!(
            score_lowest_loss_suffix(&s, span(0, 1), &cfg).unwrap(),
            -3.0
        );
        assert_eq!(
            score_lowest_loss_suffix(&s, span(2, 3), &cfg),
            Err(AttackError::EmptyWindow)
        );
        let tail = lps(&[-2.0, -4.0]);
        assert_eq!(
            score_lowest_loss_suffix(&s, span(0, 1), &cfg).unwrap(),
            score_lowest_loss(&tail).unwrap()
        );
    }

    #[test]
    fn reference_set_suffix_examples() {
        let cfg = AttackConfig::default();
        let cand = lps(&[-9.0, 0.5f64.ln()]);
        let r1 = lps(&[-1.0, 0.25f64.ln()]);
        let r2 = lps(&[-7.0, 0.25f64.ln()]);
        let sp = span(0, 1);
        let v = score_reference_set_suffix((&cand, sp), &[(&r1, sp), (&r2, sp)], &cfg).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        let same = score_reference_set_suffix((&r1, sp), &[(&r1, sp), (&r1, sp)], &cfg).unwrap();
        assert_eq!(same, 0.0);
        // a reference whose window is empty is dropped
        let v2 =
            score_reference_set_suffix((&cand, sp), &[(&r1, sp), (&r2, span(1, 2))], &cfg).unwrap();
        assert!((v2 - 2f64.ln()).abs() < 1e-12);
        assert_eq!(
            score_reference_set_suffix((&cand, sp), &[(&r1, span(1, 2))], &cfg),
            Err(AttackError::EmptyRefs)
        );
    }

    proptest! {
        #[test]
        fn min_k_full_is_lowest_loss(v in prop::collection::vec(-20.0f64..0.0, 1..40)) {
            let s = lps(&v);
            prop_assert_eq!(
                score_min_k(&s, 1.0).unwrap().to_bits(),
                score_lowest_loss(&s).unwrap().to_bits()
            );
        }

        #[test]
        fn ratio_shift_invariant(
            e in -30.0f64..0.0,
            refs in prop::collection::vec(-30.0f64..0.0, 1..10),
            c in -50.0f64..50.0,
        ) {
            let a = score_reference_set(e, &refs, LlrVariant::Ratio).unwrap();
            let shifted: Vec<f64> = refs.iter().map(|r| r + c).collect();
            let b = score_reference_set(e + c, &shifted, LlrVariant::Ratio).unwrap();
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }
}
