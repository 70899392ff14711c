use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalharness::{Fraction, GoldPairs};
use crate::miner::PairCandidate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtCutoff {
    pub cutoff: usize,
    pub num: u64,
    pub den: u64,
    pub value: f64,
}

impl AtCutoff {
    fn new(cutoff: usize, f: Fraction) -> Self {
        AtCutoff {
            cutoff,
            num: f.num,
            den: f.den,
            value: f.value(),
        }
    }

    pub fn fraction(&self) -> Fraction {
        Fraction {
            num: self.num,
            den: self.den,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub gold_inputs: usize,
    pub candidates: usize,
    /// Fraction of gold inputs whose gold output is within their top `k`.
    pub recall: Vec<AtCutoff>,
    /// Fraction of gold pairs among the first `N` of the global ranking
    /// (or all of it when shorter).
    pub precision: Vec<AtCutoff>,
}

impl Metrics {
    pub fn recall_at(&self, k: usize) -> Option<Fraction> {
        self.recall.iter().find(|a| a.cutoff == k).map(AtCutoff::fraction)
    }

    pub fn precision_at(&self, n: usize) -> Option<Fraction> {
        self.precision.iter().find(|a| a.cutoff == n).map(AtCutoff::fraction)
    }
}

/// Scores a ranked pair list against planted gold. Per-input ranks follow
/// the order in which each input's pairs appear in `pairs`.
pub fn evaluate(pairs: &[PairCandidate], gold: &GoldPairs, ks: &[usize], ns: &[usize]) -> Result<Metrics> {
    if gold.is_empty() {
        return Err(Error::InvalidInput("gold pairs are empty".into()));
    }
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut gold_rank: HashMap<u64, usize> = HashMap::new();
    for p in pairs {
        let r = seen.entry(p.x_id).or_insert(0);
        *r += 1;
        if gold.contains(p.x_id, p.y_id) {
            gold_rank.entry(p.x_id).or_insert(*r);
        }
    }
    let den = gold.len() as u64;
    let recall = ks
        .iter()
        .map(|&k| {
            let hits = gold_rank.values().filter(|&&r| r <= k).count() as u64;
            AtCutoff::new(k, Fraction { num: hits, den })
        })
        .collect();
    let precision = ns
        .iter()
        .map(|&n| {
            let top = &pairs[..n.min(pairs.len())];
            let hits = top.iter().filter(|p| gold.contains(p.x_id, p.y_id)).count() as u64;
            AtCutoff::new(
                n,
                Fraction {
                    num: hits,
                    den: top.len() as u64,
                },
            )
        })
        .collect();
    Ok(Metrics {
        gold_inputs: gold.len(),
        candidates: pairs.len(),
        recall,
        precision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::Stage;
    use std::collections::BTreeMap;

    fn pc(x: u64, y: u64) -> PairCandidate {
        PairCandidate {
            x_id: x,
            y_id: y,
            cosine: 0.5,
            margin: 1.0,
            cross_score: None,
            stage: Stage::Biencoder,
        }
    }

    fn gold(pairs: &[(u64, u64)]) -> GoldPairs {
        GoldPairs(pairs.iter().copied().collect::<BTreeMap<_, _>>())
    }

    #[test]
    fn rank_one_counts_at_one() {
        let m = evaluate(&[pc(0, 10), pc(0, 11)], &gold(&[(0, 10)]), &[1, 2], &[]).unwrap();
        assert!(m.recall_at(1).unwrap().equals(1, 1));
        let m = evaluate(&[pc(0, 11), pc(0, 10)], &gold(&[(0, 10)]), &[1, 2], &[]).unwrap();
        assert!(m.recall_at(1).unwrap().equals(0, 1));
        assert!(m.recall_at(2).unwrap().equals(1, 1));
    }

    #[test]
    fn nothing_retrieved_is_zero_recall() {
        let m = evaluate(&[pc(0, 3), pc(1, 4)], &gold(&[(0, 1), (1, 2)]), &[1, 4, 100], &[]).unwrap();
        assert!(m.recall.iter().all(|a| a.num == 0 && a.den == 2));
    }

    #[test]
    fn ten_gold_in_top_twenty() {
        let g: Vec<(u64, u64)> = (0..10).map(|i| (i, 100 + i)).collect();
        let mut pairs = Vec::new();
        for i in 0..10 {
            pairs.push(pc(i, 100 + i));
            pairs.push(pc(i, 500 + i));
        }
        pairs.push(pc(50, 50));
        let m = evaluate(&pairs, &gold(&g), &[], &[20]).unwrap();
        assert!(m.precision_at(20).unwrap().equals(1, 2));
        assert_eq!(m.precision[0].value, 0.5);
    }

    #[test]
    fn empty_gold_is_rejected() {
        assert!(evaluate(&[pc(0, 0)], &GoldPairs::default(), &[1], &[1]).is_err());
    }
}
