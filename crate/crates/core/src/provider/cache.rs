//! Append-only, content-addressed score cache: one JSON object per line in
//! `scores-cache.jsonl`, keyed by SHA-256 of (model_id, text, conditioning).

use super::{LogprobProvider, ProviderError, ScoredText};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

pub const CACHE_FILE: &str = "scores-cache.jsonl";

pub fn cache_key(model_id: &str, text: &str, conditioning: Option<&str>) -> String {
    let mut h = Sha256::new();
    for part in [Some(model_id), Some(text), conditioning] {
        match part {
            Some(p) => {
                h.update([1u8]);
                h.update((p.len() as u64).to_le_bytes());
                h.update(p.as_bytes());
            }
            None => h.update([0u8]),
        }
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    scored: ScoredText,
}

pub struct ScoreCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, ScoredText>>,
    writer: Mutex<File>,
}

impl ScoreCache {
    /// Open (creating if needed) the cache file inside `dir`.
    pub fn open(dir: &Path) -> Result<Self, ProviderError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = || ProviderError::CacheCorrupt {
                    file: path.clone(),
                    line: i + 1,
                };
                let e: Entry = serde_json::from_str(&line).map_err(|_| corrupt())?;
                let s = &e.scored;
                if cache_key(&s.model_id, &s.text, s.conditioning.as_deref()) != e.key {
                    return Err(corrupt());
                }
                entries.entry(e.key).or_insert(e.scored);
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(
        &self,
        model_id: &str,
        text: &str,
        conditioning: Option<&str>,
    ) -> Option<ScoredText> {
        let key = cache_key(model_id, text, conditioning);
        self.entries
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&key)
            .cloned()
    }

    /// Store `scored` unless its key is already present (first write wins).
    pub fn put(&self, scored: &ScoredText) -> Result<(), ProviderError> {
        let key = cache_key(
            &scored.model_id,
            &scored.text,
            scored.conditioning.as_deref(),
        );
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if self
            .entries
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .contains_key(&key)
        {
            return Ok(());
        }
        let entry = Entry {
            key: key.clone(),
            scored: scored.clone(),
        };
        let mut line = serde_json::to_string(&entry)
            .map_err(|e| ProviderError::ProtocolError(e.to_string()))?;
        line.push('\n');
        writer.write_all(line.as_bytes())?;
        writer.flush()?;
        self.entries
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, scored.clone());
        Ok(())
    }
}

/// Provider wrapper consulting a [`ScoreCache`] before the inner provider.
pub struct CachedProvider<P> {
    inner: P,
    cache: ScoreCache,
    misses: AtomicUsize,
}

impl<P: LogprobProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: ScoreCache) -> Self {
        Self {
            inner,
            cache,
            misses: AtomicUsize::new(0),
        }
    }

    /// Calls forwarded to the inner provider so far.
    pub fn provider_calls(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }
}

impl<P: LogprobProvider> LogprobProvider for CachedProvider<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn score_text(
        &self,
        text: &str,
        conditioning: Option<&str>,
    ) -> Result<ScoredText, ProviderError> {
        if let Some(hit) = self.cache.get(self.inner.model_id(), text, conditioning) {
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let scored = self.inner.score_text(text, conditioning)?;
        self.cache.put(&scored)?;
        Ok(scored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::TokenScore;

    fn st(text: &str, lp: f64) -> ScoredText {
        ScoredText {
            text: text.into(),
            conditioning: None,
            tokens: vec![TokenScore {
                token: text.into(),
                char_start: 0,
                char_end: text.chars().count(),
                logprob: Some(lp),
            }],
            model_id: "m".into(),
        }
    }

    #[test]
    fn put_get_and_first_wins() {
        let dir = tempfile::tempdir().unwrap();
        let c = ScoreCache::open(dir.path()).unwrap();
        assert!(c.get("m", "abc", None).is_none());
        let a = st("abc", -0.1 - 0.2);
        c.put(&a).unwrap();
        assert_eq!(c.get("m", "abc", None).unwrap(), a);
        c.put(&st("abc", -5.0)).unwrap();
        assert_eq!(c.get("m", "abc", None).unwrap(), a);
        assert!(c.get("m", "abc", Some("")).is_none());
        drop(c);
        let again = ScoreCache::open(dir.path()).unwrap();
        assert_eq!(again.len(), 1);
        // bit-exact float round trip
        assert_eq!(
            again.get("m", "abc", None).unwrap().tokens[0]
                .logprob
                .unwrap()
                .to_bits(),
            a.tokens[0].logprob.unwrap().to_bits()
        );
    }

    #[test]
    fn corrupt_line_reported() {
        let dir = tempfile::tempdir().unwrap();
        let c = ScoreCache::open(dir.path()).unwrap();
        c.put(&st("abc", -1.0)).unwrap();
        drop(c);
        let path = dir.path().join(CACHE_FILE);
        let mut s = std::fs::read_to_string(&path).unwrap();
        s.push_str("{not json\n");
        std::fs::write(&path, s).unwrap();
        match ScoreCache::open(dir.path()) {
            Err(ProviderError::CacheCorrupt { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected CacheCorrupt, got {:?}", other.map(|_| ())),
        }
    }
}
