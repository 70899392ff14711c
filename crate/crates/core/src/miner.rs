//! Bidirectional kNN neighborhoods and the ratio-margin candidate list.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::knn::{Index, VectorStore};

/// Denominators smaller than this in magnitude make a pair uninformative.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginConfig {
    /// Neighborhood size for both directions.
    pub k: usize,
    /// Candidates kept per input after margin ranking.
    pub top_per_input: usize,
    /// Global cap after margin ranking; `None` keeps everything.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_candidates: Option<usize>,
    /// Lists probed per query on IVF indexes (clamped to `nlist`).
    pub nprobe: usize,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            k: 4,
            top_per_input: 4,
            max_candidates: None,
            nprobe: 8,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("margin k must be >= 1".into()));
        }
        if self.top_per_input == 0 || self.top_per_input > self.k {
            return Err(Error::Config(format!(
                "top_per_input must be in 1..={}, got {}",
                self.k, self.top_per_input
            )));
        }
        if self.nprobe == 0 {
            return Err(Error::Config("nprobe must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Biencoder,
    Crossencoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCandidate {
    pub x_id: u64,
    pub y_id: u64,
    pub cosine: f64,
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_score: Option<f64>,
    pub stage: Stage,
}

impl PairCandidate {
    pub fn pair_key(&self) -> String {
        pair_key(self.x_id, self.y_id)
    }
}

pub fn pair_key(x_id: u64, y_id: u64) -> String {
    format!("{x_id}:{y_id}")
}

/// Margin ranking order: margin descending, then `(x_id, y_id)` ascending.
pub fn margin_order(a: &PairCandidate, b: &PairCandidate) -> std::cmp::Ordering {
    b.margin
        .total_cmp(&a.margin)
        .then(a.x_id.cmp(&b.x_id))
        .then(a.y_id.cmp(&b.y_id))
}

/// Ratio margin `cos_xy / (Σ N_x cos / 2k + Σ N_y cos / 2k)`.
///
/// Each sum is divided by twice its own length, so a neighborhood truncated by
/// a small corpus contributes its actual mean. Returns `None` when the
/// denominator is degenerate.
pub fn margin_score(cos_xy: f64, nx_cosines: &[f64], ny_cosines: &[f64]) -> Option<f64> {
    let denom = half_mean_term(nx_cosines) + half_mean_term(ny_cosines);
    if denom.abs() < DEGENERATE_DENOMINATOR {
        None
    } else {
        Some(cos_xy / denom)
    }
}

/// Counters for one mining run. `forward_candidates` splits exactly into the
/// other fields.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineStats {
    pub inputs: usize,
    pub forward_candidates: usize,
    pub overlap_filtered: usize,
    pub degenerate: usize,
    pub non_positive: usize,
    pub fanout_truncated: usize,
    pub cap_truncated: usize,
    pub emitted: usize,
}

impl MineStats {
    pub fn is_conserved(&self) -> bool {
        self.overlap_filtered + self.degenerate + self.non_positive + self.fanout_truncated + self.cap_truncated + self.emitted
            == self.forward_candidates
    }

    pub fn merge(&mut self, other: &MineStats) {
        self.inputs += other.inputs;
        self.forward_candidates += other.forward_candidates;
        self.overlap_filtered += other.overlap_filtered;
        self.degenerate += other.degenerate;
        self.non_positive += other.non_positive;
        self.fanout_truncated += other.fanout_truncated;
        self.cap_truncated += other.cap_truncated;
        self.emitted += other.emitted;
    }
}

#[derive(Debug, Clone)]
pub struct MineOutput {
    pub candidates: Vec<PairCandidate>,
    pub stats: MineStats,
}

#[derive(Default)]
struct InputTally {
    overlap: usize,
    degenerate: usize,
    non_positive: usize,
    fanout: usize,
}

/// Mines candidate pairs from `C_x` to `C_y`.
///
/// `x_index` must index `x_store` and `y_index` must index the output side.
/// `drop_pair(x_id, y_id)` returns true for pairs the overlap filter rejects.
pub fn mine<F>(
    x_store: &VectorStore,
    x_index: &Index,
    y_index: &Index,
    cfg: &MarginConfig,
    drop_pair: F,
) -> Result<MineOutput>
where
    F: Fn(u64, u64) -> bool + Sync,
{
    cfg.validate()?;
    if x_store.is_empty() || y_index.is_empty() || x_index.is_empty() {
        log::warn!("mining over an empty store yields no candidates");
        return Ok(MineOutput {
            candidates: Vec::new(),
            stats: MineStats {
                inputs: x_store.len(),
                ..MineStats::default()
            },
        });
    }
    if x_store.dim() != y_index.dim() || x_index.dim() != y_index.dim() {
        return Err(Error::DimensionMismatch {
            expected: y_index.dim(),
            actual: x_store.dim(),
        });
    }
    let fwd_probe = y_index.effective_nprobe(cfg.nprobe);
    let rev_probe = x_index.effective_nprobe(cfg.nprobe);

    let forward = y_index.search(x_store, cfg.k + cfg.top_per_input, fwd_probe)?;

    let surfaced: BTreeSet<u64> = forward.iter().flat_map(|n| n.neighbor_ids.iter().copied()).collect();
    let y_store = y_index.store();
    let reverse: HashMap<u64, f64> = surfaced
        .into_par_iter()
        .map(|y| {
            let row = y_store.vector(y).ok_or(Error::UnknownId(y))?;
            let n = x_index.search_vector(y, row, cfg.k, rev_probe)?;
            Ok((y, half_mean_term(&n.cosines)))
        })
        .collect::<Result<_>>()?;

    let per_input: Vec<(Vec<PairCandidate>, InputTally)> = forward
        .par_iter()
        .map(|n| {
            let mut tally = InputTally::default();
            let nx_len = n.len().min(cfg.k);
            let nx_term = half_mean_term(&n.cosines[..nx_len]);
            let mut kept = Vec::new();
            for (&y, &cos) in n.neighbor_ids.iter().zip(&n.cosines) {
                if drop_pair(n.query_id, y) {
                    tally.overlap += 1;
                    continue;
                }
                let denom = nx_term + reverse[&y];
                if denom.abs() < DEGENERATE_DENOMINATOR {
                    tally.degenerate += 1;
                    continue;
                }
                let margin = cos / denom;
                if margin.is_nan() || margin <= 0.0 {
                    tally.non_positive += 1;
                    continue;
                }
                kept.push(PairCandidate {
                    x_id: n.query_id,
                    y_id: y,
                    cosine: cos,
                    margin,
                    cross_score: None,
                    stage: Stage::Biencoder,
                });
            }
            kept.sort_by(margin_order);
            if kept.len() > cfg.top_per_input {
                tally.fanout = kept.len() - cfg.top_per_input;
                kept.truncate(cfg.top_per_input);
            }
            (kept, tally)
        })
        .collect();

    let mut stats = MineStats {
        inputs: x_store.len(),
        forward_candidates: forward.iter().map(|n| n.len()).sum(),
        ..MineStats::default()
    };
    let mut candidates = Vec::new();
    for (kept, tally) in per_input {
        stats.overlap_filtered += tally.overlap;
        stats.degenerate += tally.degenerate;
        stats.non_positive += tally.non_positive;
        stats.fanout_truncated += tally.fanout;
        candidates.extend(kept);
    }
    candidates.sort_by(margin_order);
    if let Some(cap) = cfg.max_candidates {
        if candidates.len() > cap {
            stats.cap_truncated = candidates.len() - cap;
            candidates.truncate(cap);
        }
    }
    stats.emitted = candidates.len();
    debug_assert!(stats.is_conserved());
    Ok(MineOutput { candidates, stats })
}

/// `Σ c / (2·len)`, the per-direction half of the margin denominator.
fn half_mean_term(c: &[f64]) -> f64 {
    if c.is_empty() {
        0.0
    } else {
        c.iter().sum::<f64>() / (2 * c.len()) as f64
    }
}

/// One candidate per line: `x_id, y_id, cosine, margin, [cross_score,] stage`.
pub fn candidates_to_jsonl(candidates: &[PairCandidate]) -> String {
    let mut out = Vec::new();
    for c in candidates {
        serde_json::to_writer(&mut out, c).expect("candidate serializes");
        out.write_all(b"\n").expect("vec write");
    }
    String::from_utf8(out).expect("json is utf-8")
}

pub fn write_candidates(path: &Path, candidates: &[PairCandidate]) -> Result<()> {
    fsutil::write_atomic(path, candidates_to_jsonl(candidates).as_bytes())
}

pub fn read_candidates(path: &Path) -> Result<Vec<PairCandidate>> {
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::{build, IndexKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_neighborhood_cancels() {
        for c in [0.1, 0.5, 0.93] {
            let m = margin_score(c, &[c; 4], &[c; 4]).unwrap();
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_margin() {
        // (0.8 + 0.4)/4 + (0.8 + 0.6)/4 = 0.65
        let m = margin_score(0.8, &[0.8, 0.4], &[0.8, 0.6]).unwrap();
        assert!((m - 0.8 / 0.65).abs() < 1e-9);
        assert!((m - 1.230_769_230_769).abs() < 1e-9);
    }

    #[test]
    fn zero_neighborhood_is_degenerate() {
        assert_eq!(margin_score(0.5, &[0.0; 4], &[0.0; 4]), None);
    }

    #[test]
    fn single_identical_vector() {
        let s = VectorStore::from_rows(vec![0], &[vec![0.6, 0.8]]).unwrap();
        let xi = build(&s, IndexKind::Exact, 0, 0).unwrap();
        let out = mine(&s, &xi, &xi, &MarginConfig::default(), |_, _| false).unwrap();
        assert_eq!(out.candidates.len(), 1);
        let c = &out.candidates[0];
        assert!((c.cosine - 1.0).abs() < 1e-6);
        assert!((c.margin - 1.0).abs() < 1e-12);
        assert!(out.stats.is_conserved());
    }

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn overlap_filter_and_counters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f32>> = (0..20).map(|_| unit(&mut rng, 8)).collect();
        let ys: Vec<Vec<f32>> = (0..30).map(|_| unit(&mut rng, 8)).collect();
        let xs = VectorStore::from_rows((0..20).collect(), &xs).unwrap();
        let ys = VectorStore::from_rows((100..130).collect(), &ys).unwrap();
        let xi = build(&xs, IndexKind::Exact, 0, 0).unwrap();
        let yi = build(&ys, IndexKind::Exact, 0, 0).unwrap();
        let cfg = MarginConfig {
            max_candidates: Some(25),
            ..MarginConfig::default()
        };
        let out = mine(&xs, &xi, &yi, &cfg, |_, y| y % 2 == 0).unwrap();
        assert!(out.stats.is_conserved());
        assert!(out.stats.overlap_filtered > 0);
        assert!(out.candidates.len() <= 25);
        assert!(out.candidates.iter().all(|c| c.y_id % 2 == 1 && c.margin > 0.0));
        assert!(out.candidates.windows(2).all(|w| margin_order(&w[0], &w[1]).is_lt()));
    }

    #[test]
    fn planted_pairs_rank_first() {
        // Gold y_i = 0.95·x_i + sqrt(1-0.95²)·e_perp; distractors are orthogonal
        // to every input.
        let d = 24;
        let n = 10;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let mut x = vec![0.0f32; d];
            x[i] = 1.0;
            let mut y = vec![0.0f32; d];
            y[i] = 0.95;
            y[n + i] = (1.0f32 - 0.95 * 0.95).sqrt();
            xs.push(x);
            ys.push(y);
        }
        for j in 0..4 {
            let mut y = vec![0.0f32; d];
            y[2 * n + j] = 1.0;
            ys.push(y);
        }
        let xs = VectorStore::from_rows((0..n as u64).collect(), &xs).unwrap();
        let ys = VectorStore::from_rows((1000..1000 + ys.len() as u64).collect(), &ys).unwrap();
        let xi = build(&xs, IndexKind::Exact, 0, 0).unwrap();
        let yi = build(&ys, IndexKind::Exact, 0, 0).unwrap();
        let cfg = MarginConfig {
            k: 4,
            top_per_input: 1,
            ..MarginConfig::default()
        };
        let out = mine(&xs, &xi, &yi, &cfg, |_, _| false).unwrap();
        for i in 0..n as u64 {
            let top = out.candidates.iter().find(|c| c.x_id == i).unwrap();
            assert_eq!(top.y_id, 1000 + i);
        }
    }

    #[test]
    fn candidate_jsonl_round_trip() {
        let cands = vec![
            PairCandidate {
                x_id: 1,
                y_id: 2,
                cosine: 0.1 + 0.2,
                margin: 1.0 / 3.0,
                cross_score: None,
                stage: Stage::Biencoder,
            },
            PairCandidate {
                x_id: 3,
                y_id: 4,
                cosine: -0.5,
                margin: 2.5,
                cross_score: Some(-1e-7),
                stage: Stage::Crossencoder,
            },
        ];
        let text = candidates_to_jsonl(&cands);
        assert!(text.starts_with(r#"{"x_id":1,"y_id":2,"cosine":0.30000000000000004,"margin":0.3333333333333333,"stage":"biencoder"}"#));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_candidates(&p, &cands).unwrap();
        assert_eq!(read_candidates(&p).unwrap(), cands);
    }

    proptest! {
        #[test]
        fn margin_is_permutation_invariant(
            c in -1.0f64..1.0,
            nx in proptest::collection::vec(0.01f64..1.0, 1..6),
            ny in proptest::collection::vec(0.01f64..1.0, 1..6),
            rot in 0usize..6,
        ) {
            let mut nx2 = nx.clone();
            nx2.reverse();
            let mut ny2 = ny.clone();
            let r = rot % ny2.len();
            ny2.rotate_left(r);
            let a = margin_score(c, &nx, &ny).unwrap();
            let b = margin_score(c, &nx2, &ny2).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn margin_is_scale_invariant(
            c in -1.0f64..1.0,
            nx in proptest::collection::vec(0.01f64..1.0, 4),
            ny in proptest::collection::vec(0.01f64..1.0, 4),
            alpha in 0.01f64..100.0,
        ) {
            let a = margin_score(c, &nx, &ny).unwrap();
            let sx: Vec<f64> = nx.iter().map(|v| v * alpha).collect();
            let sy: Vec<f64> = ny.iter().map(|v| v * alpha).collect();
            let b = margin_score(c * alpha, &sx, &sy).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
