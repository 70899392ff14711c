use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusHandle, Record, SeedExample, Side, Task};
use crate::error::{Error, Result};
use crate::fsutil;

const SYLLABLES: [&str; 25] = [
    "ba", "ko", "mi", "tu", "re", "sa", "lo", "ni", "pe", "du", "ga", "vi", "zo", "fe", "ha", "ju", "ki", "ma",
    "no", "pu", "ri", "se", "ta", "wo", "ye",
];
/// Tokens per generated input sentence.
const SENTENCE_LEN: usize = 10;

/// How distractors copy from their source input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorStyle {
    /// Copied tokens are scattered through the output, like gold outputs.
    Scattered,
    /// Copied tokens form one in-order block: the high-overlap lexical trap.
    Contiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_pairs: usize,
    pub vocab_size: usize,
    pub input_len: usize,
    pub output_len: usize,
    /// Fraction of a gold output's tokens copied from its input.
    pub signal_overlap: f64,
    pub distractor_count: usize,
    /// Fraction of a distractor's tokens copied from some input.
    pub distractor_overlap: f64,
    pub distractor_style: DistractorStyle,
    pub rng_seed: u64,
}

impl SyntheticSpec {
    /// Gold pairs share more tokens with their input than distractors do with
    /// theirs, and every copy is scattered.
    pub fn separable() -> Self {
        SyntheticSpec {
            num_pairs: 1000,
            vocab_size: 5000,
            input_len: 20,
            output_len: 20,
            signal_overlap: 0.6,
            distractor_count: 5000,
            distractor_overlap: 0.2,
            distractor_style: DistractorStyle::Scattered,
            rng_seed: 17,
        }
    }

    /// Distractors copy an in-order block from an input, so they win on
    /// bigram overlap while gold outputs stay abstractive.
    pub fn lexical_trap() -> Self {
        SyntheticSpec {
            distractor_overlap: 0.5,
            distractor_style: DistractorStyle::Contiguous,
            ..Self::separable()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "separable" => Some(Self::separable()),
            "lexical_trap" | "lexical-trap" => Some(Self::lexical_trap()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("infeasible synthetic spec: {m}")));
        if self.num_pairs == 0 || self.input_len == 0 || self.output_len == 0 {
            return bad("counts and lengths must be >= 1".into());
        }
        if self.vocab_size < self.input_len.max(self.output_len) {
            return bad(format!("vocab_size {} is below the record length", self.vocab_size));
        }
        if self.vocab_size > SYLLABLES.len().pow(3) {
            return bad(format!("vocab_size is capped at {}", SYLLABLES.len().pow(3)));
        }
        for (name, v) in [("signal_overlap", self.signal_overlap), ("distractor_overlap", self.distractor_overlap)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if copies(self.signal_overlap, self.output_len) > self.input_len
            || copies(self.distractor_overlap, self.output_len) > self.input_len
        {
            return bad("outputs cannot copy more tokens than an input holds".into());
        }
        Ok(())
    }
}

fn copies(fraction: f64, len: usize) -> usize {
    (fraction * len as f64).floor() as usize
}

/// Deterministic pseudo-word for a vocabulary index.
pub fn word(index: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}{}", SYLLABLES[index / (n * n) % n], SYLLABLES[index / n % n], SYLLABLES[index % n])
}

/// Planted gold pairing from input ids to output ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPairs(pub BTreeMap<u64, u64>);

impl GoldPairs {
    pub fn get(&self, x_id: u64) -> Option<u64> {
        self.0.get(&x_id).copied()
    }

    pub fn contains(&self, x_id: u64, y_id: u64) -> bool {
        self.get(x_id) == Some(y_id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub inputs: CorpusHandle,
    pub outputs: CorpusHandle,
    pub gold: GoldPairs,
}

/// Joins tokens into capitalized, period-terminated sentences of at most
/// `per_sentence` tokens.
fn sentence_text(tokens: &[String], per_sentence: usize) -> String {
    let mut out = String::new();
    for (i, chunk) in tokens.chunks(per_sentence).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let mut s = chunk.join(" ");
        if let Some(first) = s.get(..1) {
            s.replace_range(..1, &first.to_uppercase());
        }
        out.push_str(&s);
        out.push('.');
    }
    out
}

fn scattered_copy(rng: &mut ChaCha8Rng, source: &[String], copied: usize, len: usize, vocab: usize) -> Vec<String> {
    let mut positions: Vec<usize> = (0..source.len()).collect();
    positions.shuffle(rng);
    let mut out: Vec<String> = positions[..copied].iter().map(|&p| source[p].clone()).collect();
    while out.len() < len {
        out.push(word(rng.gen_range(0..vocab)));
    }
    out.shuffle(rng);
    out
}

fn contiguous_copy(rng: &mut ChaCha8Rng, source: &[String], copied: usize, len: usize, vocab: usize) -> Vec<String> {
    let start = rng.gen_range(0..=source.len() - copied);
    let at = rng.gen_range(0..=len - copied);
    let mut out: Vec<String> = (0..len - copied).map(|_| word(rng.gen_range(0..vocab))).collect();
    out.splice(at..at, source[start..start + copied].iter().cloned());
    out
}

/// Generates inputs, outputs (gold and distractors in shuffled id order) and
/// the gold pairing. Inputs are ids `0..num_pairs`; outputs follow.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let v = spec.vocab_size;
    let inputs: Vec<Vec<String>> = (0..spec.num_pairs)
        .map(|_| (0..spec.input_len).map(|_| word(rng.gen_range(0..v))).collect())
        .collect();

    let gold_copy = copies(spec.signal_overlap, spec.output_len);
    let mut outputs: Vec<(Option<usize>, Vec<String>)> = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| (Some(i), scattered_copy(&mut rng, x, gold_copy, spec.output_len, v)))
        .collect();
    let trap_copy = copies(spec.distractor_overlap, spec.output_len);
    for _ in 0..spec.distractor_count {
        let src = &inputs[rng.gen_range(0..inputs.len())];
        let toks = match spec.distractor_style {
            DistractorStyle::Scattered => scattered_copy(&mut rng, src, trap_copy, spec.output_len, v),
            DistractorStyle::Contiguous => contiguous_copy(&mut rng, src, trap_copy, spec.output_len, v),
        };
        outputs.push((None, toks));
    }
    outputs.shuffle(&mut rng);

    let first_output = spec.num_pairs as u64;
    let mut gold = GoldPairs::default();
    let mut y_records = Vec::with_capacity(outputs.len());
    for (k, (src, toks)) in outputs.iter().enumerate() {
        let id = first_output + k as u64;
        if let Some(i) = src {
            gold.0.insert(*i as u64, id);
        }
        y_records.push(Record::new(id, sentence_text(toks, toks.len()), Side::Output));
    }
    let x_records = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| Record::new(i as u64, sentence_text(t, SENTENCE_LEN), Side::Input))
        .collect();
    Ok(SyntheticCorpus {
        inputs: CorpusHandle::new(Side::Input, x_records)?,
        outputs: CorpusHandle::new(Side::Output, y_records)?,
        gold,
    })
}

impl SyntheticCorpus {
    /// Gold pairs as labeled examples, in ascending input id order.
    pub fn gold_examples(&self) -> Vec<SeedExample> {
        self.gold
            .0
            .iter()
            .map(|(&x, &y)| SeedExample {
                x: self.inputs.get(x).expect("gold input exists").clone(),
                y: self.outputs.get(y).expect("gold output exists").clone(),
                task: Task::Summarization,
            })
            .collect()
    }

    /// The first `n` gold pairs (by input id) serve as the seed set; the rest
    /// form the held-out evaluation split.
    pub fn split_seeds(&self, n: usize) -> (Vec<SeedExample>, GoldPairs) {
        let all = self.gold_examples();
        let n = n.min(all.len());
        let held_out = GoldPairs(self.gold.0.iter().skip(n).map(|(&x, &y)| (x, y)).collect());
        (all[..n].to_vec(), held_out)
    }

    /// Writes `inputs.jsonl`, `outputs.jsonl`, `seeds.jsonl` (first
    /// `num_seeds` pairs) and `gold.jsonl` (the held-out rest) as text files
    /// the pipeline can ingest.
    pub fn write_dir(&self, dir: &Path, num_seeds: usize) -> Result<()> {
        self.inputs.write_jsonl(&dir.join("inputs.jsonl"))?;
        self.outputs.write_jsonl(&dir.join("outputs.jsonl"))?;
        let pairs = |ex: &[SeedExample]| {
            let mut s = String::new();
            for e in ex {
                let line = serde_json::json!({ "x": e.x.text, "y": e.y.text });
                s.push_str(&line.to_string());
                s.push('\n');
            }
            s
        };
        let all = self.gold_examples();
        let n = num_seeds.min(all.len());
        fsutil::write_atomic(&dir.join("seeds.jsonl"), pairs(&all[..n]).as_bytes())?;
        fsutil::write_atomic(&dir.join("gold.jsonl"), pairs(&all[n..]).as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn small(style: DistractorStyle) -> SyntheticSpec {
        SyntheticSpec {
            num_pairs: 20,
            vocab_size: 300,
            input_len: 20,
            output_len: 10,
            signal_overlap: 0.6,
            distractor_count: 30,
            distractor_overlap: 0.5,
            distractor_style: style,
            rng_seed: 4,
        }
    }

    fn sorted(mut v: Vec<String>) -> Vec<String> {
        v.sort();
        v
    }

    #[test]
    fn words_are_unique() {
        let words: std::collections::HashSet<String> = (0..SYLLABLES.len().pow(3)).map(word).collect();
        assert_eq!(words.len(), SYLLABLES.len().pow(3));
    }

    #[test]
    fn full_signal_is_a_permutation() {
        let spec = SyntheticSpec {
            signal_overlap: 1.0,
            output_len: 20,
            distractor_count: 0,
            ..small(DistractorStyle::Scattered)
        };
        let c = generate(&spec).unwrap();
        assert_eq!(c.outputs.len(), spec.num_pairs);
        for (x, y) in &c.gold.0 {
            let tx = tokenize(&c.inputs.get(*x).unwrap().text);
            let ty = tokenize(&c.outputs.get(*y).unwrap().text);
            assert_eq!(sorted(tx), sorted(ty));
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let spec = small(DistractorStyle::Contiguous);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.outputs, b.outputs);
        assert_eq!(a.gold, b.gold);
        assert_eq!(a.outputs.len(), 50);
        assert_eq!(a.gold.len(), 20);
        // Inputs split into sentences of SENTENCE_LEN tokens.
        assert_eq!(crate::corpus::split_sentences(&a.inputs.records()[0].text).len(), 2);
        assert!(a.outputs.iter().all(|y| crate::corpus::split_sentences(&y.text).len() == 1));
    }

    #[test]
    fn infeasible_specs_error() {
        let mut s = small(DistractorStyle::Scattered);
        s.vocab_size = 5;
        assert!(generate(&s).is_err());
        let mut s = small(DistractorStyle::Scattered);
        s.signal_overlap = 1.5;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn seed_split_is_disjoint() {
        let c = generate(&small(DistractorStyle::Scattered)).unwrap();
        let (seeds, held) = c.split_seeds(5);
        assert_eq!(seeds.len(), 5);
        assert_eq!(held.len(), 15);
        assert!(seeds.iter().all(|s| held.get(s.x.id).is_none()));
    }
}
