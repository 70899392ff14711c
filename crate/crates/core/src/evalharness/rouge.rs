use serde::{Deserialize, Serialize};

use crate::corpus::{clipped_matches, tokenize};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeN {
    One,
    Two,
    L,
}

/// An unreduced ratio `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    /// Cross-multiplied equality with `n / d`.
    pub fn equals(self, n: u64, d: u64) -> bool {
        u128::from(self.num) * u128::from(d) == u128::from(n) * u128::from(self.den)
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE precision of `candidate` against `source` as an exact ratio.
///
/// N-gram variants use clipped counts over the candidate's n-grams; `L` is
/// LCS length over candidate length. A candidate too short to hold a bigram
/// scores `0 / 0`, reported as 0.
pub fn rouge_fraction(candidate: &str, source: &str, n: RougeN) -> Result<Fraction> {
    let c = tokenize(candidate);
    if c.is_empty() {
        return Err(Error::InvalidInput("ROUGE candidate has no tokens".into()));
    }
    let s = tokenize(source);
    let (num, den) = match n {
        RougeN::One => {
            let (hits, total, _) = clipped_matches(&c, &s, 1);
            (hits, total)
        }
        RougeN::Two => {
            let (hits, total, _) = clipped_matches(&c, &s, 2);
            (hits, total)
        }
        RougeN::L => (lcs_len(&c, &s), c.len()),
    };
    Ok(Fraction {
        num: num as u64,
        den: den as u64,
    })
}

pub fn rouge_precision(candidate: &str, source: &str, n: RougeN) -> Result<f64> {
    rouge_fraction(candidate, source, n).map(Fraction::value)
}
