use super::{AnnotatedSample, CorpusError, EntitySpan};
use crate::text::{char_len, char_slice};
use serde::Deserialize;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

#[derive(Deserialize)]
struct RawSample {
    source_text: String,
    privacy_mask: Vec<RawSpan>,
}

#[derive(Deserialize)]
struct RawSpan {
    label: String,
    start: usize,
    end: usize,
    value: String,
}

/// Read an annotated JSONL corpus. Blank lines are skipped; sample ids are
/// assigned sequentially over the non-blank lines.
pub fn ingest(path: &Path) -> Result<Vec<AnnotatedSample>, CorpusError> {
    ingest_reader(BufReader::new(File::open(path)?))
}

pub fn ingest_reader(reader: impl BufRead) -> Result<Vec<AnnotatedSample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let id = format!("s{:06}", out.len());
        out.push(parse_line(&line, i + 1, id)?);
    }
    Ok(out)
}

/// Parse and validate one input line. `line_no` is 1-based.
pub fn parse_line(
    line: &str,
    line_no: usize,
    sample_id: String,
) -> Result<AnnotatedSample, CorpusError> {
    let raw: RawSample = serde_json::from_str(line).map_err(|e| CorpusError::MalformedLine {
        line_no,
        detail: e.to_string(),
    })?;
    let len = char_len(&raw.source_text);
    let mut spans = Vec::with_capacity(raw.privacy_mask.len());
    for s in raw.privacy_mask {
        if s.start >= s.end || s.end > len {
            return Err(CorpusError::SpanOutOfBounds {
                sample: sample_id,
                label: s.label,
                start: s.start,
                end: s.end,
                len,
            });
        }
        let found = char_slice(&raw.source_text, s.start, s.end).unwrap_or_default();
        if found != s.value {
            return Err(CorpusError::SpanValueMismatch {
                sample: sample_id,
                label: s.label,
                start: s.start,
                end: s.end,
                found: found.to_string(),
                value: s.value,
            });
        }
        spans.push(EntitySpan {
            entity_type: s.label,
            char_start: s.start,
            char_end: s.end,
            value: s.value,
        });
    }
    spans.sort_by_key(|s| (s.char_start, s.char_end));
    for w in spans.windows(2) {
        if w[1].char_start < w[0].char_end {
            return Err(CorpusError::OverlappingSpans {
                sample: sample_id,
                a_start: w[0].char_start,
                a_end: w[0].char_end,
                b_start: w[1].char_start,
                b_end: w[1].char_end,
            });
        }
    }
    Ok(AnnotatedSample {
        sample_id,
        text: raw.source_text,
        spans,
        partition: None,
    })
}
