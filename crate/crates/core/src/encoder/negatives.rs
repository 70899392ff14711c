//! Synthetic negatives for reading comprehension: (a) the gold passage with a
//! different spotted answer span, (b) the gold answer with a different passage.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;

use crate::corpus::{locate, normalize_for_match, CorpusHandle, Record, SeedExample, Side, SpanSpotter, Task, META_ANSWER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativeSet {
    pub records: Vec<Record>,
    /// Seeds for which neither negative type could be built.
    pub warnings: usize,
}

/// Builds up to `per_type` negatives of each type for one seed example.
pub fn synthesize_negatives<R: Rng>(
    example: &SeedExample,
    spotter: &SpanSpotter,
    corpus: &CorpusHandle,
    per_type: usize,
    rng: &mut R,
) -> Result<NegativeSet> {
    if example.task != Task::ReadingComprehension {
        return Err(Error::InvalidInput("synthetic negatives apply to reading comprehension only".into()));
    }
    let gold = &example.y;
    let gold_answer = gold
        .answer()
        .ok_or_else(|| Error::InvalidInput(format!("seed {} has no answer", example.x.id)))?;
    let gold_key = normalize_for_match(&gold_answer);

    let alt_spans: Vec<_> = spotter
        .spot(&gold.text)
        .into_iter()
        .filter(|s| normalize_for_match(&s.text) != gold_key)
        .collect();

    let gold_passage = normalize_for_match(&gold.text);
    let mut seen = HashSet::new();
    let alt_passages: Vec<&str> = corpus
        .iter()
        .map(|r| r.text.as_str())
        .filter(|t| seen.insert(*t) && normalize_for_match(t) != gold_passage)
        .collect();

    let mut out = NegativeSet::default();
    if alt_spans.is_empty() && alt_passages.is_empty() {
        out.warnings = 1;
        return Ok(out);
    }

    let mut next_id = 0;
    let mut fresh = |text: &str| {
        let r = Record::new(next_id, text, Side::Output);
        next_id += 1;
        r
    };
    for i in sample(rng, alt_spans.len(), per_type.min(alt_spans.len())).into_vec() {
        let mut r = fresh(&gold.text);
        r.set_answer_span(alt_spans[i].begin, alt_spans[i].end);
        out.records.push(r);
    }
    for i in sample(rng, alt_passages.len(), per_type.min(alt_passages.len())).into_vec() {
        let passage = alt_passages[i];
        let mut r = fresh(passage);
        match locate(passage, &gold_answer) {
            Some((b, e)) => r.set_answer_span(b, e),
            None => {
                r.meta.insert(META_ANSWER.to_owned(), gold_answer.clone());
            }
        }
        out.records.push(r);
    }
    Ok(out)
}
