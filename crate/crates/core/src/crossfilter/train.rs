use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{InteractionFeatures, NUM_FEATURES};
use super::model::{CrossMode, CrossModel};
use crate::corpus::Record;
use crate::encoder::{sigmoid, softplus, TrainConfig};
use crate::error::{Error, Result};
use crate::miner::{margin_order, PairCandidate};

/// Logistic loss of a raw score against a 0/1 label.
pub fn logistic_loss(score: f64, label: f64) -> f64 {
    softplus(score) - label * score
}

/// `log(1 + exp(score(y⁻) − score(y⁺)))` as a function of
/// `delta = score(y⁺) − score(y⁻)`.
pub fn pairwise_loss(delta: f64) -> f64 {
    softplus(-delta)
}

/// Mean logistic loss over `(features, label)` and its parameter gradient.
pub fn binary_loss_and_grad(model: &CrossModel, examples: &[(InteractionFeatures, f64)]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    let scale = 1.0 / examples.len().max(1) as f64;
    for (f, label) in examples {
        let act = model.forward(f.as_slice());
        loss += scale * logistic_loss(act.score, *label);
        let up = scale * (sigmoid(act.score) - label);
        model.accumulate_param_grad(f.as_slice(), &act, up, &mut grad);
    }
    (loss, grad)
}

/// Mean pairwise loss over `(positive, negative)` feature pairs and its
/// parameter gradient.
pub fn pairwise_loss_and_grad(model: &CrossModel, pairs: &[(InteractionFeatures, InteractionFeatures)]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    let scale = 1.0 / pairs.len().max(1) as f64;
    for (pos, neg) in pairs {
        let ap = model.forward(pos.as_slice());
        let an = model.forward(neg.as_slice());
        let delta = ap.score - an.score;
        loss += scale * pairwise_loss(delta);
        // d/dδ softplus(−δ) = −sigmoid(−δ)
        let up = scale * sigmoid(-delta);
        model.accumulate_param_grad(pos.as_slice(), &ap, -up, &mut grad);
        model.accumulate_param_grad(neg.as_slice(), &an, up, &mut grad);
    }
    (loss, grad)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedCross {
    pub model: CrossModel,
    /// Mean minibatch loss per step.
    pub loss_trace: Vec<f64>,
}

fn optimize<F>(mode: CrossMode, hidden: usize, cfg: &TrainConfig, mut batch_loss: F) -> Result<TrainedCross>
where
    F: FnMut(&CrossModel, &mut ChaCha8Rng) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let mut model = CrossModel::new(mode, NUM_FEATURES, hidden, cfg.rng_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x6372_6f73_735f_6d6c);
    let mut adam = Adam::new(model.num_params());
    let mut params = model.params();
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grad) = batch_loss(&model, &mut rng);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                detail: format!("crossencoder loss {loss}"),
            });
        }
        adam.step(&mut params, &grad, cfg.learning_rate);
        model.set_params(&params);
        if !model.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: "crossencoder parameters became non-finite".into(),
            });
        }
        loss_trace.push(loss);
    }
    model.round_to_f32();
    Ok(TrainedCross { model, loss_trace })
}

/// Logistic regression head trained with Adam on class-balanced minibatches
/// (half positives, half negatives, sampled with replacement).
pub fn train_binary(
    positives: &[InteractionFeatures],
    negatives: &[InteractionFeatures],
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<TrainedCross> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidInput(
            "binary crossencoder training needs positives and negatives".into(),
        ));
    }
    let half = (cfg.batch_size / 2).max(1);
    optimize(CrossMode::Binary, hidden, cfg, |model, rng| {
        let mut batch = Vec::with_capacity(2 * half);
        for _ in 0..half {
            batch.push((positives[rng.gen_range(0..positives.len())], 1.0));
            batch.push((negatives[rng.gen_range(0..negatives.len())], 0.0));
        }
        binary_loss_and_grad(model, &batch)
    })
}

/// Pairwise ranking head: minimizes `log(1 + exp(s⁻ − s⁺))` over sampled
/// `(positive, negative)` feature pairs.
pub fn train_pairwise(
    triples: &[(InteractionFeatures, InteractionFeatures)],
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<TrainedCross> {
    if triples.is_empty() {
        return Err(Error::InvalidInput("pairwise crossencoder training needs triples".into()));
    }
    optimize(CrossMode::Pairwise, hidden, cfg, |model, rng| {
        let batch: Vec<_> = (0..cfg.batch_size)
            .map(|_| triples[rng.gen_range(0..triples.len())])
            .collect();
        pairwise_loss_and_grad(model, &batch)
    })
}

/// A seed input with its gold output and one retrieved wrong output.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTriple {
    pub x: Record,
    pub y_pos: Record,
    pub y_neg: Record,
}

impl RankTriple {
    pub fn new(x: Record, y_pos: Record, y_neg: Record) -> Result<Self> {
        if y_pos.text == y_neg.text {
            return Err(Error::InvalidInput("triple negative equals its positive".into()));
        }
        Ok(RankTriple { x, y_pos, y_neg })
    }
}

/// How many biencoder candidates are drawn as negatives per positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSampling {
    /// Drawn from the top decile by margin.
    pub top_decile: usize,
    /// Drawn uniformly from the remaining candidates.
    pub uniform: usize,
}

impl Default for NegativeSampling {
    fn default() -> Self {
        NegativeSampling {
            top_decile: 4,
            uniform: 4,
        }
    }
}

/// Stratified negatives for binary training: `top_decile · num_positives`
/// from the best-margin tenth of `candidates` and `uniform · num_positives`
/// from everything else, without replacement. Excluded candidates are never
/// drawn. Output is in margin order.
pub fn sample_binary_negatives<R: Rng>(
    candidates: &[PairCandidate],
    exclude: impl Fn(&PairCandidate) -> bool,
    num_positives: usize,
    sampling: NegativeSampling,
    rng: &mut R,
) -> Vec<PairCandidate> {
    let mut pool: Vec<&PairCandidate> = candidates.iter().filter(|c| !exclude(c)).collect();
    pool.sort_by(|a, b| margin_order(a, b));
    let decile = pool.len().div_ceil(10);
    let want_top = (sampling.top_decile * num_positives).min(decile);
    let mut chosen: Vec<usize> = sample(rng, decile, want_top).into_vec();
    let picked_top: std::collections::HashSet<usize> = chosen.iter().copied().collect();
    let rest: Vec<usize> = (0..pool.len()).filter(|i| !picked_top.contains(i)).collect();
    let want_uniform = (sampling.uniform * num_positives).min(rest.len());
    chosen.extend(sample(rng, rest.len(), want_uniform).into_iter().map(|i| rest[i]));
    chosen.sort_unstable();
    chosen.into_iter().map(|i| pool[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::Stage;

    fn feats(cos: f64) -> InteractionFeatures {
        let mut f = [0.0; NUM_FEATURES];
        f[0] = cos;
        f[5] = 2.0;
        f[6] = 2.0;
        InteractionFeatures(f)
    }

    fn cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 16,
            learning_rate: 1e-2,
            rng_seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_identities() {
        assert!((pairwise_loss(0.0) - 2f64.ln()).abs() < 1e-12);
        assert!((pairwise_loss(10.0) - 4.539_889_921_686_465e-5).abs() < 1e-15);
        for d in [-3.0, -0.1, 0.5, 7.0] {
            assert!(pairwise_loss(d) + pairwise_loss(-d) > 2.0 * 2f64.ln());
        }
        assert!((logistic_loss(0.0, 1.0) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_returns_init() {
        let t = train_binary(&[feats(1.0)], &[feats(0.0)], 16, &cfg(0)).unwrap();
        let mut init = CrossModel::new(CrossMode::Binary, NUM_FEATURES, 16, 11);
        init.round_to_f32();
        assert_eq!(t.model, init);
        assert!(t.loss_trace.is_empty());
    }

    #[test]
    fn separable_binary_toy() {
        let pos: Vec<_> = (0..20).map(|_| feats(1.0)).collect();
        let neg: Vec<_> = (0..20).map(|_| feats(0.0)).collect();
        let t = train_binary(&pos, &neg, 16, &cfg(500)).unwrap();
        let m = &t.model;
        assert!(pos.iter().all(|f| m.score(f.as_slice()).unwrap() > 0.0));
        assert!(neg.iter().all(|f| m.score(f.as_slice()).unwrap() < 0.0));
        // Moving a negative's cosine toward 1 strictly raises its score.
        let scores: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&c| m.score(feats(c).as_slice()).unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[1] > w[0]), "{scores:?}");
        assert_eq!(t, train_binary(&pos, &neg, 16, &cfg(500)).unwrap());
    }

    #[test]
    fn separable_pairwise_toy() {
        let triples: Vec<_> = (0..10)
            .map(|i| (feats(0.6 + 0.03 * i as f64), feats(0.1 + 0.03 * i as f64)))
            .collect();
        let t = train_pairwise(&triples, 16, &cfg(300)).unwrap();
        for (p, n) in &triples {
            assert!(t.model.score(p.as_slice()).unwrap() > t.model.score(n.as_slice()).unwrap());
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut m = CrossModel::new(CrossMode::Binary, NUM_FEATURES, 6, seed);
            let f = |k: u64| {
                let mut v = [0.0; NUM_FEATURES];
                for (i, x) in v.iter_mut().enumerate() {
                    *x = ((seed * 7 + k * 3 + i as u64) as f64 * 0.37).sin();
                }
                InteractionFeatures(v)
            };
            let ex = vec![(f(1), 1.0), (f(2), 0.0), (f(3), 1.0)];
            let pairs = vec![(f(4), f(5)), (f(6), f(7))];
            let (_, gb) = binary_loss_and_grad(&m, &ex);
            let (_, gp) = pairwise_loss_and_grad(&m, &pairs);
            let p0 = m.params();
            for i in 0..p0.len() {
                let mut at = |delta: f64| {
                    let mut p = p0.clone();
                    p[i] += delta;
                    m.set_params(&p);
                    (binary_loss_and_grad(&m, &ex).0, pairwise_loss_and_grad(&m, &pairs).0)
                };
                let (bp, pp) = at(1e-5);
                let (bm, pm) = at(-1e-5);
                assert!(rel_err(gb[i], (bp - bm) / 2e-5) <= 1e-4 || (gb[i] - (bp - bm) / 2e-5).abs() < 1e-9);
                assert!(rel_err(gp[i], (pp - pm) / 2e-5) <= 1e-4 || (gp[i] - (pp - pm) / 2e-5).abs() < 1e-9);
            }
            m.set_params(&p0);
        }
    }

    #[test]
    fn stratified_negative_sampling() {
        let cands: Vec<PairCandidate> = (0..200)
            .map(|i| PairCandidate {
                x_id: i,
                y_id: 1000 + i,
                cosine: 0.5,
                margin: 2.0 - i as f64 * 0.005,
                cross_score: None,
                stage: Stage::Biencoder,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs = sample_binary_negatives(&cands, |c| c.x_id == 0, 2, NegativeSampling::default(), &mut rng);
        assert_eq!(negs.len(), 16);
        assert!(negs.iter().all(|c| c.x_id != 0));
        // Excluding x 0 leaves 199; its top decile is the 20 best remaining.
        assert!(negs.iter().filter(|c| c.x_id <= 20).count() >= 8);
        let mut keys: Vec<u64> = negs.iter().map(|c| c.x_id).collect();
        keys.dedup();
        assert_eq!(keys.len(), 16);
    }
}
