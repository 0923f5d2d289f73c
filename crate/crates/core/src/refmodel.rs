//! Interpolated trigram language model used as an in-process logprob
//! provider. Deterministic, immutable after training, and small enough that
//! its probabilities can be checked by hand.

use crate::provider::{ScoredText, TokenScore};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefModelError {
    #[error("training set has no non-empty lines")]
    EmptyTrainingSet,
    #[error("interpolation weights must be non-negative and sum to 1, got {0:?}")]
    BadWeights([f64; 4]),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A word-level token with its character range. Ranges tile the source text:
/// whitespace after a token belongs to that token's range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '¡' | '¿' | '«' | '»' | '“' | '”' | '‘' | '’' | '…' | '–' | '—'
        )
}

/// Whitespace split with leading and trailing punctuation peeled off into
/// single-character tokens.
pub fn lm_tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    // (start, end) of non-whitespace pieces
    let mut pieces: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;
        let mut lo = start;
        while lo < end && is_punct(chars[lo]) {
            pieces.push((lo, lo + 1));
            lo += 1;
        }
        let mut hi = end;
        while hi > lo && is_punct(chars[hi - 1]) {
            hi -= 1;
        }
        if hi > lo {
            pieces.push((lo, hi));
        }
        for k in hi..end {
            pieces.push((k, k + 1));
        }
    }
    let n = pieces.len();
    (0..n)
        .map(|k| {
            let (s, e) = pieces[k];
            Token {
                text: chars[s..e].iter().collect(),
                char_start: if k == 0 { 0 } else { s },
                char_end: if k + 1 < n {
                    pieces[k + 1].0
                } else {
                    chars.len()
                },
            }
        })
        .collect()
}

const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
const FIRST_WORD: u32 = 3;

pub const DEFAULT_WEIGHTS: [f64; 4] = [0.6, 0.25, 0.1, 0.05];

/// Interpolated trigram model over word types plus EOS and UNK.
///
/// `p(w | u, v) = λ3·ML3 + λ2·ML2 + λ1·ML1 + λ0/|V|`. The weight of a
/// history that was never observed goes to UNK, so every conditional
/// distribution sums to one and in-vocabulary words keep their plain
/// interpolated value.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigramLM {
    weights: [f64; 4],
    words: Vec<String>,
    word_ids: HashMap<String, u32>,
    unigrams: Vec<u64>,
    total: u64,
    bigrams: HashMap<(u32, u32), u64>,
    bigram_ctx: HashMap<u32, u64>,
    trigrams: HashMap<(u32, u32, u32), u64>,
    trigram_ctx: HashMap<(u32, u32), u64>,
}

impl TrigramLM {
    /// Train on lines of text; each line is one sequence padded with two BOS
    /// markers and terminated by EOS.
    pub fn train<S: AsRef<str>>(lines: &[S]) -> Result<Self, RefModelError> {
        Self::train_with_weights(lines, DEFAULT_WEIGHTS)
    }

    pub fn train_with_weights<S: AsRef<str>>(
        lines: &[S],
        weights: [f64; 4],
    ) -> Result<Self, RefModelError> {
        check_weights(weights)?;
        let seqs: Vec<Vec<String>> = lines
            .iter()
            .map(|l| {
                lm_tokenize(l.as_ref())
                    .into_iter()
                    .map(|t| t.text)
                    .collect::<Vec<_>>()
            })
            .filter(|s| !s.is_empty())
            .collect();
        if seqs.is_empty() {
            return Err(RefModelError::EmptyTrainingSet);
        }
        let vocab: BTreeSet<&str> = seqs.iter().flatten().map(String::as_str).collect();
        let words: Vec<String> = vocab.into_iter().map(str::to_string).collect();
        let mut lm = Self::empty(weights, words);
        let mut tri: BTreeMap<(u32, u32, u32), u64> = BTreeMap::new();
        for seq in &seqs {
            let (mut u, mut v) = (BOS, BOS);
            for w in seq.iter().map(|t| lm.word_ids[t.as_str()]).chain([EOS]) {
                *tri.entry((u, v, w)).or_default() += 1;
                (u, v) = (v, w);
            }
        }
        for ((u, v, w), c) in tri {
            lm.add_trigram(u, v, w, c);
        }
        Ok(lm)
    }

    fn empty(weights: [f64; 4], words: Vec<String>) -> Self {
        let word_ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), FIRST_WORD + i as u32))
            .collect();
        let n_ids = FIRST_WORD as usize + words.len();
        Self {
            weights,
            words,
            word_ids,
            unigrams: vec![0; n_ids],
            total: 0,
            bigrams: HashMap::new(),
            bigram_ctx: HashMap::new(),
            trigrams: HashMap::new(),
            trigram_ctx: HashMap::new(),
        }
    }

    // Every trigram (u, v, w) is one prediction of w; lower orders are
    // marginals of the trigram table.
    fn add_trigram(&mut self, u: u32, v: u32, w: u32, c: u64) {
        *self.trigrams.entry((u, v, w)).or_default() += c;
        *self.trigram_ctx.entry((u, v)).or_default() += c;
        *self.bigrams.entry((v, w)).or_default() += c;
        *self.bigram_ctx.entry(v).or_default() += c;
        self.unigrams[w as usize] += c;
        self.total += c;
    }

    /// |V|: word types plus EOS and UNK.
    pub fn vocab_size(&self) -> usize {
        self.words.len() + 2
    }

    /// Word types seen in training, without markers.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn weights(&self) -> [f64; 4] {
        self.weights
    }

    pub fn unigram_count(&self, word: &str) -> u64 {
        self.word_ids
            .get(word)
            .map_or(0, |&id| self.unigrams[id as usize])
    }

    /// Predicted tokens in training, including EOS.
    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    fn id(&self, word: &str) -> u32 {
        self.word_ids.get(word).copied().unwrap_or(UNK)
    }

    /// Predictable ids: EOS, UNK and every word type.
    pub fn vocabulary_ids(&self) -> impl Iterator<Item = u32> {
        [EOS, UNK]
            .into_iter()
            .chain(FIRST_WORD..FIRST_WORD + self.words.len() as u32)
    }

    /// `p(w | u, v)` by id. Histories may contain BOS (0). Every word of the
    /// vocabulary gets the plain interpolation with zero ML terms for unseen
    /// histories; the weight of those unseen histories goes to UNK.
    pub fn prob_ids(&self, u: u32, v: u32, w: u32) -> f64 {
        let [l3, l2, l1, l0] = self.weights;
        let mut orphaned = 0.0;
        let mut p = 0.0;
        match self.trigram_ctx.get(&(u, v)) {
            Some(&ctx) => {
                let c = self.trigrams.get(&(u, v, w)).copied().unwrap_or(0);
                p += l3 * (c as f64 / ctx as f64);
            }
            None => orphaned += l3,
        }
        match self.bigram_ctx.get(&v) {
            Some(&ctx) => {
                let c = self.bigrams.get(&(v, w)).copied().unwrap_or(0);
                p += l2 * (c as f64 / ctx as f64);
            }
            None => orphaned += l2,
        }
        p += l1 * (self.unigrams[w as usize] as f64 / self.total as f64);
        p += l0 * (1.0 / self.vocab_size() as f64);
        if w == UNK {
            p += orphaned;
        }
        p
    }

    /// `p(word | history)` where `history` holds up to two preceding words
    /// (missing positions are BOS) and `word` may be the EOS marker `None`.
    pub fn prob(&self, history: &[&str], word: Option<&str>) -> f64 {
        let ids: Vec<u32> = history.iter().map(|h| self.id(h)).collect();
        let (u, v) = match ids.as_slice() {
            [] => (BOS, BOS),
            [v] => (BOS, *v),
            [.., u, v] => (*u, *v),
        };
        self.prob_ids(u, v, word.map_or(EOS, |w| self.id(w)))
    }

    /// Token logprobs for `text`, conditioned on `conditioning` when given.
    /// Only tokens of `text` are returned; all of them carry a logprob.
    pub fn logprob(
        &self,
        text: &str,
        conditioning: Option<&str>,
        include_eos: bool,
        model_id: &str,
    ) -> ScoredText {
        let cond_tokens = conditioning.map(lm_tokenize).unwrap_or_default();
        let tokens = lm_tokenize(text);
        let (mut u, mut v) = (BOS, BOS);
        for t in &cond_tokens {
            (u, v) = (v, self.id(&t.text));
        }
        let mut out = Vec::with_capacity(tokens.len());
        for t in tokens {
            let w = self.id(&t.text);
            out.push(TokenScore {
                token: t.text,
                char_start: t.char_start,
                char_end: t.char_end,
                logprob: Some(self.prob_ids(u, v, w).ln()),
            });
            (u, v) = (v, w);
        }
        if include_eos {
            if let Some(last) = out.last_mut() {
                last.logprob = last.logprob.map(|lp| lp + self.prob_ids(u, v, EOS).ln());
            }
        }
        ScoredText {
            text: text.to_string(),
            conditioning: conditioning.map(str::to_string),
            tokens: out,
            model_id: model_id.to_string(),
        }
    }

    pub fn to_json(&self) -> ModelFile {
        let mut unigrams: Vec<(u32, u64)> = self
            .unigrams
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as u32, c))
            .collect();
        unigrams.sort();
        let mut trigrams: Vec<(u32, u32, u32, u64)> = self
            .trigrams
            .iter()
            .map(|(&(u, v, w), &c)| (u, v, w, c))
            .collect();
        trigrams.sort();
        ModelFile {
            format: MODEL_FORMAT.into(),
            weights: self.weights,
            words: self.words.clone(),
            trigrams,
            unigrams,
            meta: BTreeMap::new(),
        }
    }

    pub fn from_json(file: ModelFile) -> Result<Self, RefModelError> {
        if file.format != MODEL_FORMAT {
            return Err(RefModelError::Format(format!(
                "unknown format {:?}",
                file.format
            )));
        }
        check_weights(file.weights)?;
        let max_id = FIRST_WORD + file.words.len() as u32;
        let mut lm = Self::empty(file.weights, file.words);
        for (u, v, w, c) in file.trigrams {
            if u >= max_id || v >= max_id || w >= max_id || w == BOS || w == UNK {
                return Err(RefModelError::Format(format!(
                    "bad trigram ids ({u},{v},{w})"
                )));
            }
            lm.add_trigram(u, v, w, c);
        }
        Ok(lm)
    }

    pub fn save(&self, path: &Path, meta: BTreeMap<String, String>) -> Result<(), RefModelError> {
        let mut file = self.to_json();
        file.meta = meta;
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, String>), RefModelError> {
        let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let meta = file.meta.clone();
        Ok((Self::from_json(file)?, meta))
    }
}

fn check_weights(w: [f64; 4]) -> Result<(), RefModelError> {
    if w.iter().any(|x| x.is_nan() || *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(RefModelError::BadWeights(w));
    }
    Ok(())
}

const MODEL_FORMAT: &str = "el-mia-trigram-v1";

/// On-disk model: word list plus trigram counts; lower orders are derived.
/// Ids: 0 BOS, 1 EOS, 2 UNK, 3.. words in listed order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub weights: [f64; 4],
    pub words: Vec<String>,
    /// Informational; recomputed from `trigrams` on load.
    #[serde(default)]
    pub unigrams: Vec<(u32, u64)>,
    pub trigrams: Vec<(u32, u32, u32, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranges(ts: &[Token]) -> Vec<(usize, usize)> {
        ts.iter().map(|t| (t.char_start, t.char_end)).collect()
    }

    #[test]
    fn tokenize_examples() {
        let t = lm_tokenize("Hi Ann.");
        let texts: Vec<_> = t.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["Hi", "Ann", "."]);
        assert_eq!(ranges(&t), [(0, 3), (3, 6), (6, 7)]);
        assert!(lm_tokenize("").is_empty());
        let t = lm_tokenize("a  b");
        assert_eq!(
            t.iter().map(|t| t.text.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert_eq!(ranges(&t), [(0, 3), (3, 4)]);
    }

    #[test]
    fn tokenize_punctuation_and_leading_space() {
        let t = lm_tokenize("  (kal@x.com), ok!");
        let texts: Vec<_> = t.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["(", "kal@x.com", ")", ",", "ok", "!"]);
        assert_eq!(t[0].char_start, 0);
        assert_eq!(t.last().unwrap().char_end, 18);
        assert_eq!(ranges(&lm_tokenize("...")), [(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn hand_counts() {
        let lm = TrigramLM::train(&["alice pays bob"]).unwrap();
        assert_eq!(lm.unigram_count("pays"), 1);
        assert_eq!(lm.total_tokens(), 4);
        assert_eq!(lm.vocab_size(), 5);
        let mut words = lm.words().to_vec();
        words.sort();
        assert_eq!(words, ["alice", "bob", "pays"]);
        assert_eq!(lm, TrigramLM::train(&["alice pays bob"]).unwrap());
    }

    #[test]
    fn interpolated_value_matches_hand_computation() {
        let lm = TrigramLM::train(&["alice pays bob"]).unwrap();
        // 0.6·1 + 0.25·1 + 0.1·(1/4) + 0.05·(1/5)
        let hand = 0.6 * 1.0 + 0.25 * 1.0 + 0.1 * (1.0 / 4.0) + 0.05 * (1.0 / 5.0);
        assert_eq!(hand, 0.885);
        let p = lm.prob(&["alice"], Some("pays"));
        assert!((p - 0.885).abs() < 1e-15);
        let st = lm.logprob("alice pays bob", None, false, "ref");
        assert_eq!(st.tokens.len(), 3);
        assert!((st.tokens[1].logprob.unwrap() - 0.885f64.ln()).abs() < 1e-12);
        // unknown word in a seen context: only the uniform term survives
        let p_unk = lm.prob(&["alice"], Some("zed"));
        assert!((p_unk - 0.01).abs() < 1e-15);
    }

    #[test]
    fn unseen_history_weight_goes_to_unk() {
        let lm = TrigramLM::train(&["alice pays bob"]).unwrap();
        // neither (zed, zed) nor (zed) was seen: ML3 and ML2 vanish
        let p = lm.prob(&["zed", "zed"], Some("pays"));
        assert!((p - (0.1 / 4.0 + 0.01)).abs() < 1e-15);
        assert!((lm.prob(&["zed", "zed"], Some("zed")) - 0.86).abs() < 1e-15);
        // bigram history (alice) seen, trigram (zed, alice) not
        let p = lm.prob(&["zed", "alice"], Some("pays"));
        assert!((p - (0.25 + 0.1 / 4.0 + 0.01)).abs() < 1e-15);
        assert!((lm.prob(&["zed", "alice"], Some("zed")) - 0.61).abs() < 1e-15);
    }

    #[test]
    fn training_errors() {
        assert!(matches!(
            TrigramLM::train(&["", "   "]),
            Err(RefModelError::EmptyTrainingSet)
        ));
        assert!(TrigramLM::train_with_weights(&["a"], [0.5, 0.5, 0.5, -0.5]).is_err());
    }

    #[test]
    fn normalizes_in_seen_and_unseen_contexts() {
        let lm = TrigramLM::train(&["alice pays bob", "bob pays alice twice"]).unwrap();
        let ids: Vec<u32> = lm.vocabulary_ids().collect();
        for (u, v) in [(BOS, BOS), (BOS, 3), (3, 4), (UNK, UNK), (4, UNK), (UNK, 5)] {
            let s: f64 = ids.iter().map(|&w| lm.prob_ids(u, v, w)).sum();
            assert!((s - 1.0).abs() < 1e-12, "({u},{v}) sums to {s}");
        }
    }

    #[test]
    fn eos_folding_and_conditioning() {
        let lm = TrigramLM::train(&["alice pays bob"]).unwrap();
        let a = lm.logprob("alice pays bob", None, false, "m");
        let b = lm.logprob("alice pays bob", None, true, "m");
        let eos = lm.prob(&["pays", "bob"], None).ln();
        assert!(
            (b.tokens[2].logprob.unwrap() - (a.tokens[2].logprob.unwrap() + eos)).abs() < 1e-12
        );
        let c = lm.logprob("bob", Some("alice pays "), false, "m");
        assert_eq!(c.tokens.len(), 1);
        assert!((c.tokens[0].logprob.unwrap() - a.tokens[2].logprob.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let lm = TrigramLM::train(&["alice pays bob", "bob pays alice"]).unwrap();
        let s = serde_json::to_string(&lm.to_json()).unwrap();
        let back = TrigramLM::from_json(serde_json::from_str(&s).unwrap()).unwrap();
        assert_eq!(lm, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        // ids 0..9 cover BOS, EOS, UNK and all six words
        fn random_contexts_normalize(u in 0u32..9, v in 0u32..9) {
            let lm = TrigramLM::train(&["alice pays bob", "bob pays alice twice", "carol sees bob"]).unwrap();
            let ids: Vec<u32> = lm.vocabulary_ids().collect();
            let s: f64 = ids.iter().map(|&w| lm.prob_ids(u, v, w)).sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "({u},{v}) sums to {s}");
        }
    }
}
