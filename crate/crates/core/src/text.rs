//! Small text utilities shared across modules: punctuation classification,
//! sentence splitting, and a stable 64-bit hash.

/// Punctuation for tokenization and normalization. ASCII punctuation plus the
/// common typographic and CJK marks; intentionally a fixed list so behavior
/// never depends on Unicode table versions.
pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' // curly quotes
                | '\u{2013}' | '\u{2014}' | '\u{2026}' // en/em dash, ellipsis
                | '\u{00A1}' | '\u{00BF}' | '\u{00AB}' | '\u{00BB}'
                | '\u{3001}' | '\u{3002}' | '\u{FF01}' | '\u{FF08}' | '\u{FF09}'
                | '\u{FF0C}' | '\u{FF1A}' | '\u{FF1B}' | '\u{FF1F}'
                | '\u{300C}' | '\u{300D}'
        )
}

/// Splits text into sentences on `.`, `!`, or `?` followed by whitespace or
/// end of input. Abbreviation-blind by design; trailing text without final
/// punctuation becomes the last sentence. Sentences are trimmed and non-empty.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        cur.push(c);
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some(next) => next.is_whitespace(),
            };
            if boundary {
                let s = cur.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                cur.clear();
            }
        }
    }
    let s = cur.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

/// FNV-1a. Used wherever a stable, seed-friendly hash of a short string is
/// needed (RNG seed derivation, mock response selection). Not for security.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentences_basic() {
        assert_eq!(split_sentences("A. B. C."), vec!["A.", "B.", "C."]);
        assert_eq!(split_sentences("X? Y!"), vec!["X?", "Y!"]);
        assert_eq!(split_sentences("no terminator"), vec!["no terminator"]);
        assert_eq!(split_sentences("  "), Vec::<String>::new());
    }

    #[test]
    fn sentences_do_not_split_inside_numbers() {
        // "3.14" has no whitespace after the dot, so it stays together.
        assert_eq!(split_sentences("pi is 3.14 exactly."), vec!["pi is 3.14 exactly."]);
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), fnv1a64(b"a"));
        assert_ne!(fnv1a64(b"a"), fnv1a64(b"b"));
    }
}
