//! Corpus ingestion, sharding, and decomposition into candidate inputs and
//! candidate outputs.

mod sentence;
mod spotter;
mod text;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub use sentence::split_sentences;
pub use spotter::{Span, SpanKind, SpanSpotter};
pub use text::{normalize_for_match, normalize_stored, tokenize, verbatim_overlap};
pub(crate) use text::clipped_matches;

pub const META_DATE: &str = "date";
pub const META_SOURCE_DOC: &str = "source_doc_id";
pub const META_ANSWER_SPAN: &str = "answer_span";
pub const META_ANSWER: &str = "answer";
pub const META_SPAN_KIND: &str = "span_kind";
pub const UNKEYED_SHARD: &str = "_unkeyed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ReadingComprehension,
    Summarization,
}

/// One corpus item: a question, a passage with an answer span, a document,
/// or a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: u64,
    pub text: String,
    pub side: Side,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Record {
    pub fn new(id: u64, text: impl Into<String>, side: Side) -> Self {
        Record {
            id,
            text: text.into(),
            side,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_owned(), value.into());
        self
    }

    /// Answer span as `[begin, end)` character offsets into `text`.
    pub fn answer_span(&self) -> Option<(usize, usize)> {
        let raw = self.meta.get(META_ANSWER_SPAN)?;
        let (b, e) = raw.split_once(',')?;
        let (b, e) = (b.trim().parse().ok()?, e.trim().parse().ok()?);
        (b < e && e <= self.text.chars().count()).then_some((b, e))
    }

    pub fn set_answer_span(&mut self, begin: usize, end: usize) {
        self.meta
            .insert(META_ANSWER_SPAN.to_owned(), format!("{begin},{end}"));
    }

    /// The answer string: the span text when a span is present, else the
    /// explicit `answer` meta entry.
    pub fn answer(&self) -> Option<String> {
        if let Some((b, e)) = self.answer_span() {
            return Some(self.text.chars().skip(b).take(e - b).collect());
        }
        self.meta.get(META_ANSWER).cloned()
    }

    /// Text fed to encoders: `answer passage` for answer-bearing outputs,
    /// the plain text otherwise.
    pub fn encoding_text(&self) -> String {
        match self.answer() {
            Some(a) => format!("{a} {}", self.text),
            None => self.text.clone(),
        }
    }
}

/// An immutable corpus, ordered by ascending id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusHandle {
    side: Side,
    records: Vec<Record>,
    pub shard_key: Option<String>,
    /// Lines dropped at ingestion because their normalized text was empty.
    pub skipped: usize,
}

impl CorpusHandle {
    /// Builds a corpus, sorting by id. Fails on mixed sides, duplicate ids, or
    /// empty text.
    pub fn new(side: Side, mut records: Vec<Record>) -> Result<Self> {
        records.sort_by_key(|r| r.id);
        for pair in records.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::InvalidInput(format!("duplicate record id {}", pair[0].id)));
            }
        }
        if let Some(r) = records.iter().find(|r| r.side != side) {
            return Err(Error::InvalidInput(format!(
                "record {} has side {:?}, corpus side is {:?}",
                r.id, r.side, side
            )));
        }
        if let Some(r) = records.iter().find(|r| r.text.trim().is_empty()) {
            return Err(Error::InvalidInput(format!("record {} has empty text", r.id)));
        }
        Ok(CorpusHandle {
            side,
            records,
            shard_key: None,
            skipped: 0,
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Record> {
        self.records.iter()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.id).collect()
    }

    pub fn get(&self, id: u64) -> Option<&Record> {
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Sub-corpus restricted to `ids` (unknown ids are ignored).
    pub fn subset(&self, ids: &[u64]) -> CorpusHandle {
        let keep: HashSet<u64> = ids.iter().copied().collect();
        CorpusHandle {
            side: self.side,
            records: self
                .records
                .iter()
                .filter(|r| keep.contains(&r.id))
                .cloned()
                .collect(),
            shard_key: self.shard_key.clone(),
            skipped: 0,
        }
    }

    /// Serializes as JSONL (`id`, `text`, `meta` per line).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = LineOut {
                id: r.id,
                text: &r.text,
                meta: &r.meta,
            };
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

#[derive(Serialize)]
struct LineOut<'a> {
    id: u64,
    text: &'a str,
    meta: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct LineIn {
    text: String,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    #[serde(default)]
    id: Option<u64>,
}

/// Reads a JSONL corpus. Lines without an explicit `id` get sequential ids
/// starting at `id_offset` (counting only kept records); text is stored in
/// NFC with collapsed whitespace and records whose text normalizes to empty
/// are skipped and counted. Blank lines are ignored.
pub fn ingest_jsonl(path: &Path, side: Side, id_offset: u64) -> Result<CorpusHandle> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LineIn = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let text = normalize_stored(&parsed.text);
        if text.is_empty() {
            skipped += 1;
            continue;
        }
        let id = parsed.id.unwrap_or(id_offset + records.len() as u64);
        records.push(Record {
            id,
            text,
            side,
            meta: parsed.meta,
        });
    }
    let mut corpus = CorpusHandle::new(side, records)?;
    corpus.skipped = skipped;
    Ok(corpus)
}

/// A date-bucket (or other key value) partition of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub key_value: String,
    pub record_ids: Vec<u64>,
}

/// Partitions record ids by the value of meta `key`; records without it land
/// in the `_unkeyed` shard. Shards come out ordered by key value.
pub fn shard_by_key(corpus: &CorpusHandle, key: &str) -> Vec<Shard> {
    shard_with(corpus, key, |v| v.to_owned())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateGranularity {
    Year,
    Month,
    #[default]
    Day,
    /// Use the raw key value.
    Exact,
}

impl DateGranularity {
    /// Bucket for an ISO-8601-like date string (`YYYY-MM-DD...`).
    pub fn bucket(self, date: &str) -> String {
        let n = match self {
            DateGranularity::Year => 4,
            DateGranularity::Month => 7,
            DateGranularity::Day => 10,
            DateGranularity::Exact => usize::MAX,
        };
        date.trim().chars().take(n).collect()
    }
}

/// [`shard_by_key`] with date values truncated to `granularity`.
pub fn shard_by_date(corpus: &CorpusHandle, key: &str, granularity: DateGranularity) -> Vec<Shard> {
    shard_with(corpus, key, |v| granularity.bucket(v))
}

fn shard_with(corpus: &CorpusHandle, key: &str, bucket: impl Fn(&str) -> String) -> Vec<Shard> {
    let mut groups: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for r in corpus.iter() {
        let value = match r.meta.get(key) {
            Some(v) if !v.trim().is_empty() => bucket(v),
            _ => UNKEYED_SHARD.to_owned(),
        };
        groups.entry(value).or_default().push(r.id);
    }
    groups
        .into_iter()
        .map(|(key_value, record_ids)| Shard {
            key_value,
            record_ids,
        })
        .collect()
}

/// Decomposes one source record into candidate outputs, ids starting at
/// `first_id`.
///
/// Summarization yields one record per sentence; reading comprehension yields
/// one record per (passage, spotted span) with `answer_span` set. Every output
/// carries `source_doc_id` and inherits the source's other meta entries.
pub fn split_outputs(record: &Record, task: Task, spotter: &SpanSpotter, first_id: u64) -> Vec<Record> {
    let mut base_meta = record.meta.clone();
    base_meta.remove(META_ANSWER_SPAN);
    base_meta.remove(META_ANSWER);
    base_meta.insert(META_SOURCE_DOC.to_owned(), record.id.to_string());
    let make = |offset: usize, text: String| Record {
        id: first_id + offset as u64,
        text,
        side: Side::Output,
        meta: base_meta.clone(),
    };
    match task {
        Task::Summarization => split_sentences(&record.text)
            .into_iter()
            .enumerate()
            .map(|(i, s)| make(i, s))
            .collect(),
        Task::ReadingComprehension => spotter
            .spot(&record.text)
            .into_iter()
            .enumerate()
            .map(|(i, span)| {
                let mut r = make(i, record.text.clone());
                r.set_answer_span(span.begin, span.end);
                r.meta.insert(META_SPAN_KIND.to_owned(), span_kind_name(span.kind).to_owned());
                r
            })
            .collect(),
    }
}

pub(crate) fn span_kind_name(kind: SpanKind) -> &'static str {
    match kind {
        SpanKind::Name => "name",
        SpanKind::Number => "number",
        SpanKind::Mixed => "mixed",
    }
}

/// [`split_outputs`] over a whole corpus with sequential ids from `id_offset`.
pub fn decompose(corpus: &CorpusHandle, task: Task, spotter: &SpanSpotter, id_offset: u64) -> Result<CorpusHandle> {
    let pieces: Vec<Vec<Record>> = corpus
        .records()
        .par_iter()
        .map(|r| split_outputs(r, task, spotter, 0))
        .collect();
    let mut next = id_offset;
    let mut records = Vec::with_capacity(pieces.iter().map(Vec::len).sum());
    for piece in pieces {
        for mut r in piece {
            r.id = next;
            next += 1;
            records.push(r);
        }
    }
    let mut out = CorpusHandle::new(Side::Output, records)?;
    out.shard_key = corpus.shard_key.clone();
    Ok(out)
}

/// Drops documents with fewer than `min_sentences` sentences. Returns the kept
/// corpus and the number dropped.
pub fn filter_min_sentences(corpus: &CorpusHandle, min_sentences: usize) -> (CorpusHandle, usize) {
    let keep: Vec<u64> = corpus
        .iter()
        .filter(|r| split_sentences(&r.text).len() >= min_sentences)
        .map(|r| r.id)
        .collect();
    let dropped = corpus.len() - keep.len();
    (corpus.subset(&keep), dropped)
}

/// A labeled seed pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedExample {
    pub x: Record,
    pub y: Record,
    pub task: Task,
}

pub const DEFAULT_SEED_SET_SIZE: usize = 100;

#[derive(Deserialize)]
struct SeedLine {
    x: String,
    y: String,
    #[serde(default)]
    x_meta: BTreeMap<String, String>,
    #[serde(default)]
    y_meta: BTreeMap<String, String>,
}

/// Reads a seed set: one `{"x", "y", "x_meta"?, "y_meta"?}` object per line.
///
/// For reading comprehension `y` is the passage and `y_meta` must carry either
/// `answer_span` (`"begin,end"`) or `answer` text found in the passage.
pub fn load_seeds(path: &Path, task: Task) -> Result<Vec<SeedExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seeds = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: idx + 1,
            message,
        };
        let raw: SeedLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let n = seeds.len() as u64;
        let x = Record {
            id: n,
            text: normalize_stored(&raw.x),
            side: Side::Input,
            meta: raw.x_meta,
        };
        let mut y = Record {
            id: n,
            text: normalize_stored(&raw.y),
            side: Side::Output,
            meta: raw.y_meta,
        };
        if x.text.is_empty() || y.text.is_empty() {
            return Err(parse_err("seed x and y must be non-empty".into()));
        }
        if task == Task::ReadingComprehension && y.answer_span().is_none() {
            let answer = y
                .meta
                .get(META_ANSWER)
                .cloned()
                .ok_or_else(|| parse_err("reading-comprehension seed needs answer_span or answer".into()))?;
            let (b, e) = locate(&y.text, &answer)
                .ok_or_else(|| parse_err(format!("answer {answer:?} not found in passage")))?;
            y.set_answer_span(b, e);
        }
        seeds.push(SeedExample { x, y, task });
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput(format!("seed set {} is empty", path.display())));
    }
    Ok(seeds)
}

/// Character offsets of the first occurrence of `needle` in `haystack`.
pub(crate) fn locate(haystack: &str, needle: &str) -> Option<(usize, usize)> {
    let byte = haystack.find(needle)?;
    let begin = haystack[..byte].chars().count();
    let len = needle.chars().count();
    (len > 0).then_some((begin, begin + len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_assigns_sequential_ids() {
        let f = write_tmp("{\"text\":\"a\"}\n{\"text\":\"b\"}\n{\"text\":\"c\"}\n");
        let c = ingest_jsonl(f.path(), Side::Input, 0).unwrap();
        assert_eq!(c.ids(), [0, 1, 2]);
        assert_eq!(c.skipped, 0);
    }

    #[test]
    fn ingest_skips_blank_text() {
        let f = write_tmp("{\"text\":\"a\"}\n{\"text\":\"  \"}\n{\"text\":\"c\"}\n");
        let c = ingest_jsonl(f.path(), Side::Input, 10).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.skipped, 1);
        assert_eq!(c.ids(), [10, 11]);
    }

    #[test]
    fn ingest_normalizes_and_is_deterministic() {
        let f = write_tmp("{\"text\":\"  x \\t y \",\"meta\":{\"date\":\"2020-01-01\"}}\n{\"text\":\"z\",\"id\":7}\n");
        let a = ingest_jsonl(f.path(), Side::Output, 0).unwrap();
        let b = ingest_jsonl(f.path(), Side::Output, 0).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(a.get(0).unwrap().text, "x y");
        assert_eq!(a.get(7).unwrap().text, "z");
    }

    #[test]
    fn ingest_reports_line_of_bad_json() {
        let f = write_tmp("{\"text\":\"a\"}\n{\"text\":\n");
        match ingest_jsonl(f.path(), Side::Input, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_missing_file_is_io_error() {
        let err = ingest_jsonl(Path::new("/nonexistent/corpus.jsonl"), Side::Input, 0).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn ingest_rejects_duplicate_ids() {
        let f = write_tmp("{\"text\":\"a\",\"id\":1}\n{\"text\":\"b\",\"id\":1}\n");
        assert!(matches!(ingest_jsonl(f.path(), Side::Input, 0), Err(Error::InvalidInput(_))));
    }

    fn dated(dates: &[Option<&str>]) -> CorpusHandle {
        let records = dates
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let r = Record::new(i as u64, format!("r{i}"), Side::Input);
                match d {
                    Some(d) => r.with_meta(META_DATE, *d),
                    None => r,
                }
            })
            .collect();
        CorpusHandle::new(Side::Input, records).unwrap()
    }

    #[test]
    fn shard_partition_examples() {
        let c = dated(&[Some("d1"), Some("d1"), Some("d2"), Some("d2")]);
        let shards = shard_by_key(&c, META_DATE);
        assert_eq!(shards.len(), 2);
        assert!(shards.iter().all(|s| s.record_ids.len() == 2));

        let c = dated(&[Some("d"), Some("d"), Some("d")]);
        assert_eq!(shard_by_key(&c, META_DATE).len(), 1);

        let c = dated(&[Some("d1"), None, Some("d1")]);
        let shards = shard_by_key(&c, META_DATE);
        assert_eq!(shards[0].key_value, UNKEYED_SHARD);
        assert_eq!(shards[0].record_ids, [1]);
        assert_eq!(shards[1].record_ids, [0, 2]);
    }

    #[test]
    fn date_granularity_buckets() {
        let c = dated(&[Some("2021-03-04T10:00"), Some("2021-03-05"), Some("2021-04-01")]);
        assert_eq!(shard_by_date(&c, META_DATE, DateGranularity::Day).len(), 3);
        assert_eq!(shard_by_date(&c, META_DATE, DateGranularity::Month).len(), 2);
        assert_eq!(shard_by_date(&c, META_DATE, DateGranularity::Year).len(), 1);
    }

    #[test]
    fn split_outputs_examples() {
        let spotter = SpanSpotter::default();
        let doc = Record::new(5, "A b. C d.", Side::Input).with_meta(META_DATE, "2020-01-01");
        let sents = split_outputs(&doc, Task::Summarization, &spotter, 100);
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[1].id, 101);
        assert_eq!(sents[0].meta[META_SOURCE_DOC], "5");
        assert_eq!(sents[0].meta[META_DATE], "2020-01-01");

        let passage = Record::new(0, "Alice met Bob in 1990.", Side::Input);
        let spans = split_outputs(&passage, Task::ReadingComprehension, &spotter, 0);
        let answers: Vec<_> = spans.iter().map(|r| r.answer().unwrap()).collect();
        assert_eq!(answers, ["Alice", "Bob", "1990"]);
        assert_eq!(spans[0].encoding_text(), "Alice Alice met Bob in 1990.");

        let none = Record::new(0, "the the the", Side::Input);
        assert!(split_outputs(&none, Task::ReadingComprehension, &spotter, 0).is_empty());
    }

    #[test]
    fn short_documents_are_dropped() {
        let c = CorpusHandle::new(
            Side::Input,
            vec![
                Record::new(0, "One. Two. Three.", Side::Input),
                Record::new(1, "One. Two. Three. Four.", Side::Input),
            ],
        )
        .unwrap();
        let (kept, dropped) = filter_min_sentences(&c, 4);
        assert_eq!(kept.ids(), [1]);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn seeds_resolve_answer_text() {
        let f = write_tmp("{\"x\":\"Who met Bob?\",\"y\":\"Alice met Bob.\",\"y_meta\":{\"answer\":\"Alice\"}}\n");
        let seeds = load_seeds(f.path(), Task::ReadingComprehension).unwrap();
        assert_eq!(seeds[0].y.answer_span(), Some((0, 5)));

        let f = write_tmp("{\"x\":\"q\",\"y\":\"p\",\"y_meta\":{\"answer\":\"zzz\"}}\n");
        assert!(load_seeds(f.path(), Task::ReadingComprehension).is_err());
    }

    fn arb_corpus() -> impl Strategy<Value = CorpusHandle> {
        proptest::collection::vec(
            ("[a-z]{1,6}( [a-z]{1,6}){0,3}", proptest::option::of("d[0-3]")),
            1..40,
        )
        .prop_map(|rows| {
            let records = rows
                .into_iter()
                .enumerate()
                .map(|(i, (text, date))| {
                    let mut r = Record::new(i as u64 * 3, text, Side::Output);
                    if let Some(d) = date {
                        r.meta.insert(META_DATE.into(), d);
                    }
                    r
                })
                .collect();
            CorpusHandle::new(Side::Output, records).unwrap()
        })
    }

    proptest! {
        #[test]
        fn shards_partition_the_corpus(corpus in arb_corpus()) {
            let shards = shard_by_key(&corpus, META_DATE);
            let mut all: Vec<u64> = shards.iter().flat_map(|s| s.record_ids.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, corpus.ids());
            let keys: Vec<_> = shards.iter().map(|s| s.key_value.clone()).collect();
            let mut sorted = keys.clone();
            sorted.sort();
            prop_assert_eq!(keys, sorted);
        }

        #[test]
        fn jsonl_round_trip(corpus in arb_corpus()) {
            let f = write_tmp(&corpus.to_jsonl());
            let back = ingest_jsonl(f.path(), Side::Output, 0).unwrap();
            prop_assert_eq!(back, corpus);
        }

        #[test]
        fn spans_are_in_bounds(text in "[A-Za-z0-9 ,.]{0,60}") {
            let passage = Record::new(0, text.clone(), Side::Input);
            let a = split_outputs(&passage, Task::ReadingComprehension, &SpanSpotter::default(), 0);
            let b = split_outputs(&passage, Task::ReadingComprehension, &SpanSpotter::default(), 0);
            prop_assert_eq!(&a, &b);
            let len = text.chars().count();
            for r in a {
                let (begin, end) = r.answer_span().unwrap();
                prop_assert!(begin < end && end <= len);
            }
        }
    }
}
