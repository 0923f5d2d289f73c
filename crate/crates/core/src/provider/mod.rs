//! Token-level log-probability access.
//!
//! A [`LogprobProvider`] returns, for a text and an optional conditioning
//! prefix, one [`TokenScore`] per token of the text with character ranges
//! that tile it exactly. Logprobs are natural-log.

mod cache;
mod http;

pub use cache::{cache_key, CachedProvider, ScoreCache, CACHE_FILE};
pub use http::{parse_completion, HttpProvider};

use crate::refmodel::TrigramLM;
use crate::text::char_len;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("token offsets do not tile the text: {0}")]
    TokenOffsetMismatch(String),
    #[error("cannot score empty text")]
    EmptyText,
    #[error("score cache {file} line {line} is corrupt")]
    CacheCorrupt { file: PathBuf, line: usize },
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub char_start: usize,
    pub char_end: usize,
    /// Natural-log probability; absent for an unconditioned first token.
    pub logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub text: String,
    pub conditioning: Option<String>,
    pub tokens: Vec<TokenScore>,
    pub model_id: String,
}

impl ScoredText {
    /// Defined logprobs in token order.
    pub fn logprobs(&self) -> impl Iterator<Item = f64> + '_ {
        self.tokens.iter().filter_map(|t| t.logprob)
    }

    pub fn sum_logprob(&self) -> f64 {
        self.logprobs().sum()
    }

    /// Check that token ranges partition `[0, len(text))` and logprobs are
    /// non-positive.
    pub fn check_tiling(&self) -> Result<(), ProviderError> {
        check_tiling(&self.tokens, char_len(&self.text))
    }
}

pub(crate) fn check_tiling(tokens: &[TokenScore], len: usize) -> Result<(), ProviderError> {
    let mut at = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.char_start != at || t.char_end <= t.char_start {
            return Err(ProviderError::TokenOffsetMismatch(format!(
                "token {i} spans ({},{}) but expected start {at}",
                t.char_start, t.char_end
            )));
        }
        if let Some(lp) = t.logprob {
            if lp.is_nan() || lp > 0.0 {
                return Err(ProviderError::ProtocolError(format!(
                    "token {i} has logprob {lp} > 0"
                )));
            }
        }
        at = t.char_end;
    }
    if at != len {
        return Err(ProviderError::TokenOffsetMismatch(format!(
            "tokens cover {at} of {len} characters"
        )));
    }
    Ok(())
}

/// Anything that can return token logprobs for a text.
pub trait LogprobProvider: Send + Sync {
    fn model_id(&self) -> &str;

    fn score_text(
        &self,
        text: &str,
        conditioning: Option<&str>,
    ) -> Result<ScoredText, ProviderError>;
}

impl<P: LogprobProvider + ?Sized> LogprobProvider for Box<P> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn score_text(
        &self,
        text: &str,
        conditioning: Option<&str>,
    ) -> Result<ScoredText, ProviderError> {
        (**self).score_text(text, conditioning)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Http,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub base_url: Option<String>,
    pub model_id: String,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
    /// Base of the logarithms the server reports (e, 2 or 10).
    pub logprob_base: f64,
    /// Fold the end-of-sequence probability into the last token (reference only).
    pub include_eos: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Reference,
            base_url: None,
            model_id: "reference-trigram".into(),
            max_in_flight: 8,
            timeout_ms: 30_000,
            logprob_base: std::f64::consts::E,
            include_eos: false,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.kind == ProviderKind::Http && self.base_url.as_deref().unwrap_or("").is_empty() {
            return Err(ProviderError::Config(
                "http provider requires base_url".into(),
            ));
        }
        if self.max_in_flight == 0 || self.timeout_ms == 0 {
            return Err(ProviderError::Config(
                "max_in_flight and timeout_ms must be positive".into(),
            ));
        }
        if self.logprob_base.is_nan() || self.logprob_base <= 1.0 {
            return Err(ProviderError::Config(format!(
                "logprob_base must exceed 1, got {}",
                self.logprob_base
            )));
        }
        Ok(())
    }
}

/// In-process provider backed by a trained [`TrigramLM`].
#[derive(Debug, Clone)]
pub struct ReferenceProvider {
    model: TrigramLM,
    model_id: String,
    include_eos: bool,
}

impl ReferenceProvider {
    pub fn new(model: TrigramLM, model_id: impl Into<String>) -> Self {
        Self {
            model,
            model_id: model_id.into(),
            include_eos: false,
        }
    }

    pub fn with_eos(mut self, include_eos: bool) -> Self {
        self.include_eos = include_eos;
        self
    }

    pub fn model(&self) -> &TrigramLM {
        &self.model
    }
}

impl LogprobProvider for ReferenceProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_text(
        &self,
        text: &str,
        conditioning: Option<&str>,
    ) -> Result<ScoredText, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let scored = self
            .model
            .logprob(text, conditioning, self.include_eos, &self.model_id);
        scored.check_tiling()?;
        Ok(scored)
    }
}
