//! Rule-based sentence splitting.
//!
//! A sentence ends at `.`, `!` or `?` (optionally followed by closing quotes or
//! brackets) when the text ends there, or when whitespace follows and the next
//! word starts with an uppercase letter, a digit, or an opening quote. A period
//! closing a known abbreviation or a capital initial never ends a
//! sentence.

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "inc", "ltd",
    "co", "corp", "u.s", "u.k", "no", "gen", "gov", "sen", "rep", "lt", "col", "capt", "mt",
    "jan", "feb", "mar", "apr", "aug", "sept", "oct", "nov", "dec", "approx", "dept", "fig",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

/// Word (lowercased, leading punctuation stripped) that ends right before `end`.
fn word_before(chars: &[char], end: usize) -> String {
    let mut start = end;
    while start > 0 && !chars[start - 1].is_whitespace() {
        start -= 1;
    }
    chars[start..end]
        .iter()
        .skip_while(|c| !c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase()
}

fn closes_abbreviation(chars: &[char], period: usize) -> bool {
    // Capital initial such as the "J." in "J. Smith".
    if period > 0
        && chars[period - 1].is_uppercase()
        && (period == 1 || !chars[period - 2].is_alphanumeric())
    {
        return true;
    }
    let word = word_before(chars, period);
    ABBREVIATIONS.contains(&word.as_str())
}

/// Splits `text` into trimmed sentences.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !is_terminal(chars[i]) {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < chars.len() && (is_terminal(chars[end]) || is_closer(chars[end])) {
            end += 1;
        }
        let mut next = end;
        while next < chars.len() && chars[next].is_whitespace() {
            next += 1;
        }
        let boundary = if next == chars.len() {
            true
        } else if next == end {
            false
        } else {
            let c = chars[next];
            let continues = c.is_uppercase() || c.is_ascii_digit() || is_opener(c);
            continues && !(chars[i] == '.' && closes_abbreviation(&chars, i))
        };
        if boundary {
            push_trimmed(&mut sentences, &chars[start..end]);
            start = next;
            i = next;
        } else {
            i = end;
        }
    }
    if start < chars.len() {
        push_trimmed(&mut sentences, &chars[start..]);
    }
    sentences
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if s.chars().any(char::is_alphanumeric) {
        out.push(s.to_owned());
    }
}
