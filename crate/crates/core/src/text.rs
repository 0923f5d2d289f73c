//! Character-index helpers. All public offsets in this crate count Unicode
//! scalar values, never bytes.

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte offset of the `char_idx`-th character, or `s.len()` when `char_idx`
/// equals the character length. `None` past the end.
pub fn byte_offset(s: &str, char_idx: usize) -> Option<usize> {
    if char_idx == 0 {
        return Some(0);
    }
    let mut seen = 0;
    for (b, _) in s.char_indices() {
        if seen == char_idx {
            return Some(b);
        }
        seen += 1;
    }
    (seen == char_idx).then_some(s.len())
}

/// Slice by character range `[start, end)`.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_offset(s, start)?;
    let b1 = b0 + byte_offset(&s[b0..], end - start)?;
    Some(&s[b0..b1])
}

/// Replace the character range `[start, end)` of `s` with `value`.
pub fn splice(s: &str, start: usize, end: usize, value: &str) -> Option<String> {
    let b0 = byte_offset(s, start)?;
    let b1 = byte_offset(s, end)?;
    if b1 < b0 {
        return None;
    }
    let mut out = String::with_capacity(s.len() - (b1 - b0) + value.len());
    out.push_str(&s[..b0]);
    out.push_str(value);
    out.push_str(&s[b1..]);
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slicing_counts_scalars() {
        let s = "Zoë lives";
        assert_eq!(char_len(s), 9);
        assert_eq!(char_slice(s, 0, 3), Some("Zoë"));
        assert_eq!(char_slice(s, 4, 9), Some("lives"));
        assert_eq!(char_slice(s, 4, 10), None);
        assert_eq!(byte_offset(s, 9), Some(s.len()));
    }

    #[test]
    fn splice_replaces_range() {
        assert_eq!(splice("Hi Ann.", 3, 6, "Zoë").unwrap(), "Hi Zoë.");
        assert_eq!(splice("Hi Zoë.", 3, 6, "Bob").unwrap(), "Hi Bob.");
    }
}
