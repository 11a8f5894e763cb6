//! Tokenization and hashing helpers shared by strategies, metrics and the mock backend.

use std::hash::Hasher;

use fnv::FnvHasher;

/// Whitespace tokens, lowercased.
pub fn lower_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Lowercase, trim, collapse internal whitespace.
pub fn normalize_basic(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Answer normalization for relaxed matching: lowercase, drop punctuation,
/// drop the articles `a`, `an`, `the`, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !is_unicode_punct(*c))
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}'
            | '\u{00BF}' | '\u{00A1}' | '\u{00AB}' | '\u{00BB}'
    )
}

/// FNV-1a over the given byte slices, with a zero byte between parts so that
/// `("ab", "c")` and `("a", "bc")` hash differently.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.write_u8(0);
        }
        h.write(p);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_normalization_collapses_whitespace() {
        assert_eq!(normalize_basic("  Hello \t  World\n"), "hello world");
    }

    #[test]
    fn answer_normalization_drops_articles_and_punctuation() {
        assert_eq!(normalize_answer("The Eiffel Tower!"), "eiffel tower");
        assert_eq!(normalize_answer("an apple, a day"), "apple day");
        assert_eq!(normalize_answer("Theatre"), "theatre");
    }

    #[test]
    fn hash_separates_parts() {
        assert_ne!(stable_hash(&[b"ab", b"c"]), stable_hash(&[b"a", b"bc"]));
        assert_eq!(stable_hash(&[b"x"]), stable_hash(&[b"x"]));
    }
}
