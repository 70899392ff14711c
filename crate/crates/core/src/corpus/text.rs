//! Text normalization shared by every stage that compares strings.
//!
//! Stored text keeps its casing and is only NFC-normalized with collapsed
//! whitespace. Comparisons (overlap checks, n-gram statistics, hashing) go
//! through the case-folded form.

use std::collections::HashMap;

use unicode_normalization::UnicodeNormalization;

/// NFC plus whitespace collapse; the form records are stored in.
pub fn normalize_stored(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// NFC, lowercase, whitespace collapse; the form used for comparisons.
pub fn normalize_for_match(text: &str) -> String {
    normalize_stored(text).to_lowercase()
}

/// Lowercased word tokens: maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let folded: String = text.nfc().collect::<String>().to_lowercase();
    folded
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// True iff the normalized `needle` occurs as a contiguous substring of the
/// normalized `haystack`.
pub fn verbatim_overlap(needle: &str, haystack: &str) -> bool {
    normalize_for_match(haystack).contains(&normalize_for_match(needle))
}

fn counts<T: std::hash::Hash + Eq>(items: impl Iterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

/// Clipped n-gram matches of `cand` against `reference`, with both totals.
pub(crate) fn clipped_matches(cand: &[String], reference: &[String], n: usize) -> (usize, usize, usize) {
    let grams = |t: &[String]| counts(t.windows(n).map(|w| w.join(" ")));
    let c = grams(cand);
    let r = grams(reference);
    let hits = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (hits, cand.len().saturating_sub(n - 1), reference.len().saturating_sub(n - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn overlap_is_case_insensitive() {
        assert!(verbatim_overlap("The Cat", "the cat sat"));
        assert!(!verbatim_overlap("dog", "the cat sat"));
    }

    #[test]
    fn overlap_collapses_whitespace() {
        assert!(verbatim_overlap("a  b", "x a b y"));
        assert!(verbatim_overlap("a\tb\n", "x a   b y"));
    }

    #[test]
    fn stored_form_keeps_case() {
        assert_eq!(normalize_stored("  Hello \t World \n"), "Hello World");
        // decomposed e + combining acute -> precomposed
        assert_eq!(normalize_stored("e\u{301}"), "\u{e9}");
    }

    #[test]
    fn tokenize_splits_on_punctuation() {
        assert_eq!(tokenize("Alice met Bob, in 1990."), ["alice", "met", "bob", "in", "1990"]);
        assert!(tokenize("  ... ").is_empty());
    }

    proptest! {
        #[test]
        fn overlap_survives_suffix(s in "[a-c ]{0,8}", t in "[a-c ]{0,12}", suffix in "[a-d ]{0,6}") {
            if verbatim_overlap(&s, &t) {
                let extended = format!("{}{}", t, suffix);
                prop_assert!(verbatim_overlap(&s, &extended));
            }
        }
    }
}
