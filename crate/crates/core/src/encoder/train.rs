use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{featurize, HashedFeatures, DEFAULT_NUM_BUCKETS};
use super::loss::MultitaskBatch;
use super::model::{BiencoderModel, PrefilterModel, DEFAULT_DIM};
use super::negatives::synthesize_negatives;
use crate::corpus::{normalize_for_match, CorpusHandle, SeedExample, Side, SpanSpotter, Task};
use crate::error::{Error, Result};

/// Optimization settings shared by the biencoder and crossencoder trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Corpus outputs sampled as extra negatives per instance.
    pub n_random_negs: usize,
    /// λ in `L_nll + λ·L_prefilter`.
    pub multitask_weight: f64,
    /// Synthetic negatives of each type per reading-comprehension seed.
    pub synthetic_per_type: usize,
    /// Corpus samples used as prefilter negatives per positive.
    pub prefilter_negatives: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            steps: 500,
            batch_size: 32,
            n_random_negs: 4,
            multitask_weight: 1.0,
            synthetic_per_type: 2,
            prefilter_negatives: 4,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.multitask_weight >= 0.0 && self.multitask_weight.is_finite()) {
            return Err(Error::Config("multitask_weight must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub num_buckets: u32,
    pub dim: u32,
}

impl Default for EncoderShape {
    fn default() -> Self {
        EncoderShape {
            num_buckets: DEFAULT_NUM_BUCKETS,
            dim: DEFAULT_DIM,
        }
    }
}

/// Everything the biencoder trainer reads.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub seeds: &'a [SeedExample],
    /// Source of random negative outputs (and of alternative passages).
    pub output_corpus: &'a CorpusHandle,
    /// Source of prefilter negatives: the corpus on the prefiltered side.
    pub prefilter_pool: &'a CorpusHandle,
    pub spotter: &'a SpanSpotter,
}

/// Side the prefilter screens: questions for reading comprehension, summary
/// sentences for summarization.
pub fn prefilter_side(task: Task) -> Side {
    match task {
        Task::ReadingComprehension => Side::Input,
        Task::Summarization => Side::Output,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub nll: f64,
    pub prefilter: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub model: BiencoderModel,
    pub prefilter: PrefilterModel,
    pub loss_trace: Vec<LossPoint>,
    pub synthetic_warnings: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Item {
    SeedX(usize),
    SeedY(usize),
    Output(usize),
    Pool(usize),
    Synthetic(usize, usize),
}

struct Slots<'a> {
    batch: MultitaskBatch<'a>,
    map: HashMap<Item, usize>,
    seed_x: &'a [HashedFeatures],
    seed_y: &'a [HashedFeatures],
    outputs: &'a [HashedFeatures],
    pool: &'a [HashedFeatures],
    synthetic: &'a [Vec<HashedFeatures>],
}

impl<'a> Slots<'a> {
    /// Batch index of `item`, pushing it on first use.
    fn slot(&mut self, item: Item) -> usize {
        if let Some(&i) = self.map.get(&item) {
            return i;
        }
        let feats = match item {
            Item::SeedX(i) => &self.seed_x[i],
            Item::SeedY(i) => &self.seed_y[i],
            Item::Output(j) => &self.outputs[j],
            Item::Pool(j) => &self.pool[j],
            Item::Synthetic(i, k) => &self.synthetic[i][k],
        };
        let i = self.batch.push_item(feats);
        self.map.insert(item, i);
        i
    }
}

fn featurize_all(texts: &[String], num_buckets: u32) -> Vec<HashedFeatures> {
    texts.par_iter().map(|t| featurize(t, num_buckets)).collect()
}

/// Minibatch gradient descent on `L_nll + λ·L_prefilter`.
///
/// Each instance's negatives are the other in-batch positives, then
/// `n_random_negs` corpus outputs, then (reading comprehension) its synthetic
/// negatives, all in one softmax.
pub fn train(data: TrainData<'_>, shape: EncoderShape, cfg: &TrainConfig) -> Result<TrainedEncoder> {
    cfg.validate()?;
    if data.seeds.is_empty() {
        return Err(Error::InvalidInput("seed set is empty".into()));
    }
    if data.output_corpus.is_empty() {
        return Err(Error::InvalidInput("output corpus is empty".into()));
    }
    let task = data.seeds[0].task;
    let nb = shape.num_buckets;
    let mut model = BiencoderModel::new(nb, shape.dim, cfg.rng_seed);
    let mut pre = PrefilterModel::zeros(shape.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x7261_6e64_6f6d_5f31);

    let seed_x = featurize_all(&data.seeds.iter().map(|s| s.x.encoding_text()).collect::<Vec<_>>(), nb);
    let seed_y = featurize_all(&data.seeds.iter().map(|s| s.y.encoding_text()).collect::<Vec<_>>(), nb);
    let gold_keys: Vec<String> = data.seeds.iter().map(|s| normalize_for_match(&s.y.encoding_text())).collect();

    let outputs: Vec<&crate::corpus::Record> = data.output_corpus.iter().collect();
    let output_feats = featurize_all(&outputs.iter().map(|r| r.encoding_text()).collect::<Vec<_>>(), nb);
    let output_ok: Vec<usize> = (0..outputs.len()).filter(|&i| !output_feats[i].is_empty()).collect();
    let pool_feats = featurize_all(&data.prefilter_pool.iter().map(|r| r.encoding_text()).collect::<Vec<_>>(), nb);
    let pool_ok: Vec<usize> = (0..pool_feats.len()).filter(|&i| !pool_feats[i].is_empty()).collect();

    let mut synthetic: Vec<Vec<HashedFeatures>> = vec![Vec::new(); data.seeds.len()];
    let mut synthetic_warnings = 0;
    if task == Task::ReadingComprehension {
        for (i, seed) in data.seeds.iter().enumerate() {
            let negs = synthesize_negatives(seed, data.spotter, data.output_corpus, cfg.synthetic_per_type, &mut rng)?;
            synthetic_warnings += negs.warnings;
            synthetic[i] = negs
                .records
                .iter()
                .map(|r| featurize(&r.encoding_text(), nb))
                .filter(|f| !f.is_empty())
                .collect();
        }
    }

    let mut order: Vec<usize> = Vec::new();
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch_len = cfg.batch_size.min(data.seeds.len());
        let mut members = Vec::with_capacity(batch_len);
        while members.len() < batch_len {
            if order.is_empty() {
                order = (0..data.seeds.len()).collect();
                order.shuffle(&mut rng);
            }
            let i = order.pop().expect("refilled above");
            if !members.contains(&i) {
                members.push(i);
            }
        }

        let mut batch = Slots {
            batch: MultitaskBatch::default(),
            map: HashMap::new(),
            seed_x: &seed_x,
            seed_y: &seed_y,
            outputs: &output_feats,
            pool: &pool_feats,
            synthetic: &synthetic,
        };
        for &i in &members {
            let x = batch.slot(Item::SeedX(i));
            let pos = batch.slot(Item::SeedY(i));
            let mut negs: Vec<usize> = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| batch.slot(Item::SeedY(j)))
                .collect();
            if !output_ok.is_empty() {
                for _ in 0..cfg.n_random_negs {
                    let mut pick = output_ok[rng.gen_range(0..output_ok.len())];
                    for _ in 0..8 {
                        if normalize_for_match(&outputs[pick].encoding_text()) != gold_keys[i] {
                            break;
                        }
                        pick = output_ok[rng.gen_range(0..output_ok.len())];
                    }
                    negs.push(batch.slot(Item::Output(pick)));
                }
            }
            for k in 0..synthetic[i].len() {
                negs.push(batch.slot(Item::Synthetic(i, k)));
            }
            batch.batch.push_instance(x, pos, negs);

            if cfg.multitask_weight > 0.0 {
                let positive = match prefilter_side(task) {
                    Side::Input => Item::SeedX(i),
                    Side::Output => Item::SeedY(i),
                };
                let p = batch.slot(positive);
                batch.batch.push_prefilter(p, true);
                if !pool_ok.is_empty() {
                    for _ in 0..cfg.prefilter_negatives {
                        let j = pool_ok[rng.gen_range(0..pool_ok.len())];
                        let n = batch.slot(Item::Pool(j));
                        batch.batch.push_prefilter(n, false);
                    }
                }
            }
        }

        let out = batch
            .batch
            .loss_and_grad(&model, &pre, cfg.multitask_weight)
            .map_err(|e| match e {
                Error::Numeric(detail) => Error::Diverged { step, detail },
                other => other,
            })?;
        let finite = model.apply(&out.grads, cfg.learning_rate);
        for (w, g) in pre.weights.iter_mut().zip(&out.prefilter_weights) {
            *w -= cfg.learning_rate * g;
        }
        pre.bias -= cfg.learning_rate * out.prefilter_bias;
        if !finite {
            return Err(Error::Diverged {
                step,
                detail: "parameters became non-finite".into(),
            });
        }
        loss_trace.push(LossPoint {
            step,
            nll: out.nll,
            prefilter: out.prefilter,
            total: out.total,
        });
    }

    Ok(TrainedEncoder {
        model,
        prefilter: pre,
        loss_trace,
        synthetic_warnings,
    })
}
