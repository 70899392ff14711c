use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, Normal};

use super::features::HashedFeatures;
use crate::error::{Error, Result};

pub const DEFAULT_DIM: u32 = 256;

/// An L2-normalized embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&x| x as f32).collect()
    }
}

/// Items per sweep of the projection matrix in batched passes.
const TILE: usize = 32;

fn normalize(h: Vec<f64>, mut u: Vec<f64>) -> Result<Encoded> {
    let norm = dot(&u, &u).sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric("non-finite embedding norm".into()));
    }
    if norm < 1e-12 {
        return Err(Error::DegenerateEmbedding(norm));
    }
    u.iter_mut().for_each(|x| *x /= norm);
    Ok(Encoded {
        h,
        norm,
        v: UnitVector(u),
    })
}

/// Dot product with eight independent accumulators so the loop vectorizes;
/// the summation order is fixed, so results are still deterministic.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (xa, xb) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Hashed bag-of-n-grams embedding table followed by a square projection;
/// outputs unit vectors. Inputs and outputs share the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BiencoderModel {
    pub num_buckets: u32,
    pub dim: u32,
    /// `num_buckets × dim`, row-major.
    pub embedding: Vec<f64>,
    /// `dim × dim`, row-major; `u = P·h`.
    pub projection: Vec<f64>,
    pub rng_seed: u64,
}

/// Binary "looks like the seed set" classifier over biencoder embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefilterModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl PrefilterModel {
    pub fn zeros(dim: u32) -> Self {
        PrefilterModel {
            weights: vec![0.0; dim as usize],
            bias: 0.0,
        }
    }

    pub fn logit(&self, v: &UnitVector) -> f64 {
        dot(&self.weights, v.as_slice()) + self.bias
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Forward-pass intermediates kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    h: Vec<f64>,
    norm: f64,
    pub(crate) v: UnitVector,
}

/// Gradients w.r.t. biencoder parameters; embedding rows are sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct BiencoderGrads {
    pub embedding: BTreeMap<u32, Vec<f64>>,
    pub projection: Vec<f64>,
}

impl BiencoderGrads {
    pub fn zeros(dim: u32) -> Self {
        BiencoderGrads {
            embedding: BTreeMap::new(),
            projection: vec![0.0; (dim * dim) as usize],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.embedding.values_mut() {
            row.iter_mut().for_each(|g| *g *= factor);
        }
        self.projection.iter_mut().for_each(|g| *g *= factor);
    }

    /// Names the first parameter block holding a non-finite value.
    pub fn non_finite_block(&self) -> Option<String> {
        if let Some((b, _)) = self
            .embedding
            .iter()
            .find(|(_, row)| row.iter().any(|g| !g.is_finite()))
        {
            return Some(format!("embedding row {b}"));
        }
        self.projection
            .iter()
            .any(|g| !g.is_finite())
            .then(|| "projection".to_owned())
    }
}

impl BiencoderModel {
    /// Seeded random initialization: embedding entries ~ N(0, 1/dim), so rows
    /// have roughly unit norm, and the projection is the identity plus small
    /// Gaussian noise.
    pub fn new(num_buckets: u32, dim: u32, rng_seed: u64) -> Self {
        assert!(num_buckets.is_power_of_two() && dim > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let d = dim as usize;
        let row = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let embedding = (0..num_buckets as usize * d).map(|_| row.sample(&mut rng)).collect();
        let jitter = Normal::new(0.0, 0.01 / (d as f64).sqrt()).expect("valid std");
        let mut projection: Vec<f64> = (0..d * d).map(|_| jitter.sample(&mut rng)).collect();
        for i in 0..d {
            projection[i * d + i] += 1.0;
        }
        BiencoderModel {
            num_buckets,
            dim,
            embedding,
            projection,
            rng_seed,
        }
    }

    fn d(&self) -> usize {
        self.dim as usize
    }

    fn row(&self, bucket: u32) -> &[f64] {
        let d = self.d();
        let start = bucket as usize * d;
        &self.embedding[start..start + d]
    }

    fn hidden(&self, feats: &HashedFeatures) -> Result<Vec<f64>> {
        if feats.is_empty() {
            return Err(Error::Unembeddable);
        }
        if feats.num_buckets != self.num_buckets {
            return Err(Error::DimensionMismatch {
                expected: self.num_buckets as usize,
                actual: feats.num_buckets as usize,
            });
        }
        let total = feats.total_count() as f64;
        let mut h = vec![0.0; self.d()];
        for &(b, c) in &feats.entries {
            let w = f64::from(c) / total;
            for (acc, e) in h.iter_mut().zip(self.row(b)) {
                *acc += w * e;
            }
        }
        Ok(h)
    }

    fn prow(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.projection[i * d..(i + 1) * d]
    }

    pub(crate) fn forward(&self, feats: &HashedFeatures) -> Result<Encoded> {
        let h = self.hidden(feats)?;
        let u: Vec<f64> = (0..self.d()).map(|i| dot(self.prow(i), &h)).collect();
        normalize(h, u)
    }

    /// [`forward`](Self::forward) for many items. Projection rows are swept
    /// once per tile of items, which keeps the matrix out of main memory.
    pub(crate) fn forward_batch(&self, items: &[&HashedFeatures]) -> Result<Vec<Encoded>> {
        let d = self.d();
        let hs: Vec<Vec<f64>> = items.par_iter().map(|f| self.hidden(f)).collect::<Result<_>>()?;
        let mut us = vec![vec![0.0; d]; hs.len()];
        hs.par_chunks(TILE).zip(us.par_chunks_mut(TILE)).for_each(|(hc, uc)| {
            for i in 0..d {
                let p = self.prow(i);
                for (h, u) in hc.iter().zip(uc.iter_mut()) {
                    u[i] = dot(p, h);
                }
            }
        });
        hs.into_iter().zip(us).map(|(h, u)| normalize(h, u)).collect()
    }

    /// Accumulates into `grads` the gradient of a loss with `dL/dv = grad_v`
    /// for each `(features, encoded, grad_v)` item, in item order.
    pub(crate) fn backward_batch(&self, items: &[(&HashedFeatures, &Encoded, &[f64])], grads: &mut BiencoderGrads) {
        let d = self.d();
        let dus: Vec<Vec<f64>> = items
            .iter()
            .map(|(_, enc, grad_v)| {
                let v = enc.v.as_slice();
                let radial = dot(v, grad_v);
                grad_v.iter().zip(v).map(|(g, vi)| (g - vi * radial) / enc.norm).collect()
            })
            .collect();
        let mut dhs = vec![vec![0.0; d]; items.len()];
        for (start, (du_tile, dh_tile)) in dus.chunks(TILE).zip(dhs.chunks_mut(TILE)).enumerate() {
            let tile_items = &items[start * TILE..start * TILE + du_tile.len()];
            for i in 0..d {
                let prow = &self.projection[i * d..(i + 1) * d];
                let grow = &mut grads.projection[i * d..(i + 1) * d];
                for ((du, dh), (_, enc, _)) in du_tile.iter().zip(dh_tile.iter_mut()).zip(tile_items) {
                    let dui = du[i];
                    if dui == 0.0 {
                        continue;
                    }
                    for (g, hj) in grow.iter_mut().zip(&enc.h) {
                        *g += dui * hj;
                    }
                    for (acc, p) in dh.iter_mut().zip(prow) {
                        *acc += p * dui;
                    }
                }
            }
        }
        for ((feats, _, _), dh) in items.iter().zip(&dhs) {
            let total = feats.total_count() as f64;
            for &(b, c) in &feats.entries {
                let w = f64::from(c) / total;
                let row = grads.embedding.entry(b).or_insert_with(|| vec![0.0; d]);
                for (g, x) in row.iter_mut().zip(dh) {
                    *g += w * x;
                }
            }
        }
    }

    /// Plain gradient-descent step. Returns false if any updated parameter
    /// became non-finite.
    pub fn apply(&mut self, grads: &BiencoderGrads, learning_rate: f64) -> bool {
        let d = self.d();
        let mut finite = true;
        for (&b, row) in &grads.embedding {
            let start = b as usize * d;
            for (p, g) in self.embedding[start..start + d].iter_mut().zip(row) {
                *p -= learning_rate * g;
                finite &= p.is_finite();
            }
        }
        for (p, g) in self.projection.iter_mut().zip(&grads.projection) {
            *p -= learning_rate * g;
            finite &= p.is_finite();
        }
        finite
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.iter().chain(&self.projection).all(|x| x.is_finite())
    }
}

/// `normalize(P · count-weighted mean of embedding rows)`.
pub fn embed(model: &BiencoderModel, feats: &HashedFeatures) -> Result<UnitVector> {
    model.forward(feats).map(|e| e.v)
}

/// `sigmoid(w · embed(feats) + b)`.
pub fn prefilter(model: &PrefilterModel, feats: &HashedFeatures, bimodel: &BiencoderModel) -> Result<f64> {
    let v = embed(bimodel, feats)?;
    Ok(sigmoid(model.logit(&v)))
}

/// Indices of the `ceil(fraction · n)` highest scores (ties: lower index first),
/// returned in ascending index order.
pub fn retain_top_fraction(scores: &[f64], fraction: f64) -> Vec<usize> {
    let keep = ((fraction * scores.len() as f64).ceil() as usize).min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    order
}
