//! Softmax negative log-likelihood over one positive and `n` negatives, and the
//! multitask batch loss that adds the prefilter's binary cross-entropy.

use super::features::HashedFeatures;
use super::model::{dot, sigmoid, BiencoderGrads, BiencoderModel, Encoded, PrefilterModel};
use crate::error::{Error, Result};

/// One training instance: input, its positive output, and sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainInstance {
    pub x: HashedFeatures,
    pub y_pos: HashedFeatures,
    pub y_negs: Vec<HashedFeatures>,
}

/// `−log( e^pos / (e^pos + Σ e^neg) )`, computed with a shifted log-sum-exp.
pub fn softmax_nll(pos: f64, negs: &[f64]) -> f64 {
    let max = negs.iter().copied().fold(pos, f64::max);
    let sum: f64 = std::iter::once(pos).chain(negs.iter().copied()).map(|s| (s - max).exp()).sum();
    max + sum.ln() - pos
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Loss of one instance and its exact gradient w.r.t. the biencoder
/// parameters, backpropagated through the unit normalization.
pub fn nll_loss_and_grad(model: &BiencoderModel, inst: &TrainInstance) -> Result<(f64, BiencoderGrads)> {
    let mut batch = MultitaskBatch::default();
    let x = batch.push_item(&inst.x);
    let pos = batch.push_item(&inst.y_pos);
    let negs = inst.y_negs.iter().map(|n| batch.push_item(n)).collect();
    batch.push_instance(x, pos, negs);
    let out = batch.loss_and_grad(model, &PrefilterModel::zeros(model.dim), 0.0)?;
    Ok((out.nll, out.grads))
}

/// A minibatch over a pool of unique feature sets: NLL instances reference
/// items by index, prefilter examples pair an item with a 0/1 label.
#[derive(Debug, Default)]
pub struct MultitaskBatch<'a> {
    items: Vec<&'a HashedFeatures>,
    instances: Vec<(usize, usize, Vec<usize>)>,
    prefilter: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Mean NLL over instances.
    pub nll: f64,
    /// Mean binary cross-entropy over prefilter examples.
    pub prefilter: f64,
    /// `nll + λ · prefilter`.
    pub total: f64,
    pub grads: BiencoderGrads,
    pub prefilter_weights: Vec<f64>,
    pub prefilter_bias: f64,
}

impl<'a> MultitaskBatch<'a> {
    pub fn push_item(&mut self, feats: &'a HashedFeatures) -> usize {
        self.items.push(feats);
        self.items.len() - 1
    }

    pub fn push_instance(&mut self, x: usize, pos: usize, negs: Vec<usize>) {
        self.instances.push((x, pos, negs));
    }

    pub fn push_prefilter(&mut self, item: usize, positive: bool) {
        self.prefilter.push((item, if positive { 1.0 } else { 0.0 }));
    }

    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    /// Loss `L_nll + λ·L_prefilter` and its gradients.
    pub fn loss_and_grad(&self, model: &BiencoderModel, pre: &PrefilterModel, lambda: f64) -> Result<BatchLoss> {
        let encoded: Vec<Encoded> = model.forward_batch(&self.items)?;
        let d = model.dim as usize;
        let mut grad_v = vec![vec![0.0; d]; self.items.len()];

        let mut nll = 0.0;
        if !self.instances.is_empty() {
            let scale = 1.0 / self.instances.len() as f64;
            for (x, pos, negs) in &self.instances {
                if negs.is_empty() {
                    return Err(Error::InvalidInput("training instance has no negatives".into()));
                }
                let vx = encoded[*x].v.as_slice();
                let outputs: Vec<usize> = std::iter::once(*pos).chain(negs.iter().copied()).collect();
                let scores: Vec<f64> = outputs.iter().map(|&o| dot(vx, encoded[o].v.as_slice())).collect();
                nll += scale * softmax_nll(scores[0], &scores[1..]);
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (slot, (&o, e)) in outputs.iter().zip(&exps).enumerate() {
                    let ds = scale * (e / z - if slot == 0 { 1.0 } else { 0.0 });
                    let vo = encoded[o].v.as_slice().to_vec();
                    for k in 0..d {
                        grad_v[*x][k] += ds * vo[k];
                        grad_v[o][k] += ds * vx[k];
                    }
                }
            }
        }

        let mut bce = 0.0;
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        if !self.prefilter.is_empty() && lambda != 0.0 {
            let scale = 1.0 / self.prefilter.len() as f64;
            for &(item, label) in &self.prefilter {
                let v = encoded[item].v.as_slice();
                let z = dot(&pre.weights, v) + pre.bias;
                bce += scale * (softplus(z) - label * z);
                let dz = scale * lambda * (sigmoid(z) - label);
                gb += dz;
                for k in 0..d {
                    gw[k] += dz * v[k];
                    grad_v[item][k] += dz * pre.weights[k];
                }
            }
        }

        let mut grads = BiencoderGrads::zeros(model.dim);
        let active: Vec<(&HashedFeatures, &Encoded, &[f64])> = self
            .items
            .iter()
            .zip(&encoded)
            .zip(&grad_v)
            .filter(|(_, gv)| gv.iter().any(|g| *g != 0.0))
            .map(|((f, e), gv)| (*f, e, gv.as_slice()))
            .collect();
        model.backward_batch(&active, &mut grads);
        let total = nll + lambda * bce;
        if !total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss (nll {nll}, prefilter {bce})")));
        }
        if let Some(block) = grads.non_finite_block() {
            return Err(Error::Numeric(format!("non-finite gradient in {block}")));
        }
        if !gb.is_finite() || gw.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient in prefilter".into()));
        }
        Ok(BatchLoss {
            nll,
            prefilter: bce,
            total,
            grads,
            prefilter_weights: gw,
            prefilter_bias: gb,
        })
    }
}
