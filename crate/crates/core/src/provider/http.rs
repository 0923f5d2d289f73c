//! OpenAI-compatible completions client using `echo=true, max_tokens=0` to
//! obtain prompt-token logprobs.

use super::{check_tiling, LogprobProvider, ProviderConfig, ProviderError, ScoredText, TokenScore};
use crate::text::char_len;
use serde_json::{json, Value};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

pub const API_KEY_ENV: &str = "EL_MIA_API_KEY";

pub struct HttpProvider {
    agent: ureq::Agent,
    url: String,
    model_id: String,
    api_key: Option<String>,
    logprob_base: f64,
    slots: Semaphore,
}

impl HttpProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let base = config.base_url.as_deref().unwrap_or_default();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/v1/completions", base.trim_end_matches('/')),
            model_id: config.model_id.clone(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            logprob_base: config.logprob_base,
            slots: Semaphore::new(config.max_in_flight),
        })
    }

    fn post(&self, prompt: &str) -> Result<Value, ProviderError> {
        let body = json!({
            "model": self.model_id,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
        });
        let _permit = self.slots.acquire();
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Json(e) => ProviderError::ProtocolError(e.to_string()),
            other => ProviderError::ProviderUnreachable(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::ProtocolError(format!("reading body: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::ProtocolError(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            )));
        }
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::ProtocolError(format!("response is not JSON: {e}")))
    }
}

impl LogprobProvider for HttpProvider {
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
        let cond = conditioning.unwrap_or("");
        let prompt = format!("{cond}{text}");
        let resp = self.post(&prompt)?;
        let tokens = parse_completion(&resp, &prompt, char_len(cond), self.logprob_base)?;
        Ok(ScoredText {
            text: text.to_string(),
            conditioning: conditioning.map(str::to_string),
            tokens,
            model_id: self.model_id.clone(),
        })
    }
}

/// Turn a completions response for `prompt` into token scores for the part
/// after the first `cond_chars` characters, re-based to start at zero.
///
/// `text_offset` may be character or byte offsets. When the token strings
/// reproduce the prompt, the unit is whichever cumulative length the offsets
/// match; otherwise offsets past the character length imply bytes. Byte
/// offsets inside a multi-byte character attach the partial token to the
/// token holding the character's first byte.
pub fn parse_completion(
    resp: &Value,
    prompt: &str,
    cond_chars: usize,
    logprob_base: f64,
) -> Result<Vec<TokenScore>, ProviderError> {
    let lp = resp
        .pointer("/choices/0/logprobs")
        .filter(|v| v.is_object())
        .ok_or_else(|| ProviderError::ProtocolError("missing choices[0].logprobs".into()))?;
    let field = |name: &str| {
        lp.get(name)
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::ProtocolError(format!("missing logprobs.{name}")))
    };
    let toks: Vec<String> = field("tokens")?
        .iter()
        .map(|t| t.as_str().map(str::to_string))
        .collect::<Option<_>>()
        .ok_or_else(|| ProviderError::ProtocolError("non-string token".into()))?;
    let lps: Vec<Option<f64>> = field("token_logprobs")?
        .iter()
        .map(|v| match v {
            Value::Null => Ok(None),
            v => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| ProviderError::ProtocolError(format!("bad logprob {v}"))),
        })
        .collect::<Result<_, _>>()?;
    let offsets: Vec<usize> = field("text_offset")?
        .iter()
        .map(|v| v.as_u64().map(|x| x as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| ProviderError::ProtocolError("non-integer text_offset".into()))?;
    if toks.len() != lps.len() || toks.len() != offsets.len() {
        return Err(ProviderError::ProtocolError(format!(
            "array lengths differ: tokens {}, token_logprobs {}, text_offset {}",
            toks.len(),
            lps.len(),
            offsets.len()
        )));
    }
    let len = char_len(prompt);
    if toks.is_empty() {
        return Err(ProviderError::TokenOffsetMismatch(
            "no tokens returned".into(),
        ));
    }

    let char_offsets = normalize_offsets(&toks, &offsets, prompt)?;
    let scale = logprob_base.ln();
    let mut merged: Vec<TokenScore> = Vec::with_capacity(toks.len());
    for i in 0..toks.len() {
        let start = char_offsets[i];
        let end = char_offsets.get(i + 1).copied().unwrap_or(len);
        if end < start || start > len {
            return Err(ProviderError::TokenOffsetMismatch(format!(
                "token {i} offset {} is out of order or past the end",
                offsets[i]
            )));
        }
        let lp = lps[i].map(|x| x * scale);
        if end == start {
            // zero-width piece of a split character
            if let Some(prev) = merged.last_mut() {
                prev.token.push_str(&toks[i]);
                prev.logprob = add_opt(prev.logprob, lp);
                continue;
            }
        }
        merged.push(TokenScore {
            token: toks[i].clone(),
            char_start: start,
            char_end: end,
            logprob: lp,
        });
    }
    // a leading zero-width token folds forward
    if merged.len() > 1 && merged[0].char_end == merged[0].char_start {
        let first = merged.remove(0);
        merged[0].char_start = first.char_start;
        merged[0].logprob = add_opt(first.logprob, merged[0].logprob);
        merged[0].token.insert_str(0, &first.token);
    }
    check_tiling(&merged, len)?;

    let chars: Vec<char> = prompt.chars().collect();
    let mut out = Vec::new();
    for mut t in merged {
        if t.char_end <= cond_chars {
            continue;
        }
        if t.char_start < cond_chars {
            t.char_start = cond_chars;
            t.token = chars[cond_chars..t.char_end].iter().collect();
        }
        t.char_start -= cond_chars;
        t.char_end -= cond_chars;
        out.push(t);
    }
    Ok(out)
}

fn add_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x + y),
        (x, None) => x,
        (None, y) => y,
    }
}

fn normalize_offsets(
    toks: &[String],
    offsets: &[usize],
    prompt: &str,
) -> Result<Vec<usize>, ProviderError> {
    let mismatch = |why: &str| ProviderError::TokenOffsetMismatch(why.to_string());
    if offsets[0] != 0 {
        return Err(mismatch("first text_offset is not 0"));
    }
    if offsets.windows(2).any(|w| w[1] < w[0]) {
        return Err(mismatch("text_offset decreases"));
    }
    let cum = |f: fn(&str) -> usize| -> Vec<usize> {
        let mut at = 0;
        toks.iter()
            .map(|t| {
                let s = at;
                at += f(t);
                s
            })
            .collect()
    };
    let as_bytes = if toks.concat() == prompt {
        if offsets == cum(char_len).as_slice() {
            false
        } else if offsets == cum(str::len).as_slice() {
            true
        } else {
            return Err(mismatch("offsets disagree with token lengths"));
        }
    } else {
        let last = *offsets.last().expect("non-empty");
        if last > prompt.len() {
            return Err(mismatch("offset past end of prompt"));
        }
        last >= char_len(prompt) && prompt.len() != char_len(prompt)
    };
    if !as_bytes {
        return Ok(offsets.to_vec());
    }
    // char index = number of characters starting strictly before the byte
    let starts: Vec<usize> = prompt.char_indices().map(|(b, _)| b).collect();
    Ok(offsets
        .iter()
        .map(|&b| starts.partition_point(|&s| s < b))
        .collect())
}

/// Counting semaphore bounding requests in flight.
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}
