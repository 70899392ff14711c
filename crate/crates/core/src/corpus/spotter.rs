//! Rule-based candidate-answer spotter.
//!
//! Rules, applied to whitespace-delimited tokens:
//!
//! 1. A token's *core* is the token with leading and trailing
//!    non-alphanumeric characters removed.
//! 2. A core is a **name** token when it starts with an uppercase letter and
//!    is not a capitalized function word (see [`SpanSpotter::stopwords`]).
//! 3. A core is a **number** token when it starts with a digit and contains
//!    only alphanumerics and `, . - / :` (covers `1990`, `3-4`, `25th`,
//!    `1,000`, `2021-06-01`).
//! 4. A span is a maximal run of consecutive name/number tokens. A run breaks
//!    after a token with trailing punctuation and before a token with leading
//!    punctuation, except that a trailing comma followed by a number token
//!    continues the run (date patterns such as `October 25, 1956`).
//! 5. Spans with the same case-folded text are reported once, first occurrence
//!    wins.

use serde::{Deserialize, Serialize};

const DEFAULT_STOPWORDS: &[&str] = &[
    "A", "About", "After", "All", "Also", "Although", "An", "And", "Are", "As", "At", "Be",
    "Because", "Before", "But", "By", "During", "For", "From", "He", "Her", "Here", "His", "How",
    "I", "If", "In", "Is", "It", "Its", "My", "No", "Not", "Of", "On", "Or", "Our", "She", "Since",
    "So", "That", "The", "Their", "Then", "There", "These", "They", "This", "Those", "To", "Was",
    "We", "Were", "What", "When", "Where", "Which", "While", "Who", "Why", "With", "Yet", "You",
    "Your",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Name,
    Number,
    /// A run mixing names and numbers, e.g. `October 25, 1956`.
    Mixed,
}

/// A spotted span in character offsets `[begin, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
    pub text: String,
    pub kind: SpanKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanSpotter {
    /// Capitalized tokens that never start or extend a name span.
    pub stopwords: Vec<String>,
    pub numbers: bool,
}

impl Default for SpanSpotter {
    fn default() -> Self {
        SpanSpotter {
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            numbers: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Name,
    Number,
    Other,
}

struct Token {
    core_begin: usize,
    core_end: usize,
    class: Class,
    leading_punct: bool,
    trailing: Option<String>,
}

impl SpanSpotter {
    fn classify(&self, core: &[char]) -> Class {
        let Some(&first) = core.first() else {
            return Class::Other;
        };
        if first.is_uppercase() {
            let word: String = core.iter().collect();
            if self.stopwords.contains(&word) {
                Class::Other
            } else {
                Class::Name
            }
        } else if self.numbers
            && first.is_ascii_digit()
            && core
                .iter()
                .all(|c| c.is_alphanumeric() || matches!(c, ',' | '.' | '-' | '/' | ':'))
        {
            Class::Number
        } else {
            Class::Other
        }
    }

    fn tokens(&self, chars: &[char]) -> Vec<Token> {
        let mut tokens = Vec::new();
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
            let mut core_begin = start;
            while core_begin < i && !chars[core_begin].is_alphanumeric() {
                core_begin += 1;
            }
            let mut core_end = i;
            while core_end > core_begin && !chars[core_end - 1].is_alphanumeric() {
                core_end -= 1;
            }
            let class = self.classify(&chars[core_begin..core_end]);
            tokens.push(Token {
                core_begin,
                core_end,
                class,
                leading_punct: core_begin > start,
                trailing: (core_end < i).then(|| chars[core_end..i].iter().collect()),
            });
        }
        tokens
    }

    /// Spots candidate answer spans in `text`.
    pub fn spot(&self, text: &str) -> Vec<Span> {
        let chars: Vec<char> = text.chars().collect();
        let tokens = self.tokens(&chars);
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut current: Option<(usize, usize)> = None;
        for (idx, tok) in tokens.iter().enumerate() {
            if tok.class == Class::Other {
                runs.extend(current.take());
                continue;
            }
            current = match current {
                Some((first, last)) if self.continues(&tokens[last], tok) => Some((first, idx)),
                prev => {
                    runs.extend(prev);
                    Some((idx, idx))
                }
            };
        }
        runs.extend(current);

        let mut seen = std::collections::HashSet::new();
        let mut spans = Vec::new();
        for (first, last) in runs {
            let begin = tokens[first].core_begin;
            let end = tokens[last].core_end;
            let text: String = chars[begin..end].iter().collect();
            if !seen.insert(text.to_lowercase()) {
                continue;
            }
            let run = &tokens[first..=last];
            let kind = if run.iter().all(|t| t.class == Class::Name) {
                SpanKind::Name
            } else if run.iter().all(|t| t.class == Class::Number) {
                SpanKind::Number
            } else {
                SpanKind::Mixed
            };
            spans.push(Span {
                begin,
                end,
                text,
                kind,
            });
        }
        spans
    }

    fn continues(&self, prev: &Token, next: &Token) -> bool {
        if next.leading_punct {
            return false;
        }
        match prev.trailing.as_deref() {
            None => true,
            Some(",") => next.class == Class::Number,
            Some(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        SpanSpotter::default().spot(s).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn names_and_year() {
        // Alice: name run [0,5); "met" breaks; Bob [10,13); "in" breaks;
        // "1990." core is 1990 at [17,21).
        let spans = SpanSpotter::default().spot("Alice met Bob in 1990.");
        let got: Vec<_> = spans.iter().map(|s| (s.begin, s.end, s.text.as_str())).collect();
        assert_eq!(got, [(0, 5, "Alice"), (10, 13, "Bob"), (17, 21, "1990")]);
        assert_eq!(spans[2].kind, SpanKind::Number);
    }

    #[test]
    fn lowercase_text_has_no_spans() {
        assert!(texts("the the the").is_empty());
    }

    #[test]
    fn multiword_names_and_dates() {
        assert_eq!(
            texts("Regina was born on October 25, 1956, in Brooklyn, New York."),
            ["Regina", "October 25, 1956", "Brooklyn", "New York"]
        );
    }

    #[test]
    fn stopwords_and_punctuation_break_runs() {
        assert_eq!(texts("The Hague hosted (Paris) talks."), ["Hague", "Paris"]);
        assert_eq!(texts("It takes 3-4 years."), ["3-4"]);
    }

    #[test]
    fn repeated_spans_reported_once() {
        assert_eq!(texts("Bob saw bob and Bob."), ["Bob"]);
    }

    #[test]
    fn offsets_are_character_based() {
        let text = "Zoë met Émile.";
        for s in SpanSpotter::default().spot(text) {
            let sub: String = text.chars().skip(s.begin).take(s.end - s.begin).collect();
            assert_eq!(sub, s.text);
        }
    }
}
