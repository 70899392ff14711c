use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::fsutil;

pub const CROSS_MAGIC: &[u8; 4] = b"PMCX";
pub const CROSS_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossMode {
    Binary,
    Pairwise,
}

/// Two-layer MLP `w2 · tanh(W1 f + b1) + b2` with a raw scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossModel {
    pub mode: CrossMode,
    pub input_dim: usize,
    pub hidden: usize,
    /// `hidden × input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub rng_seed: u64,
}

/// Hidden activations kept for backpropagation.
pub(crate) struct Activations {
    a: Vec<f64>,
    pub(crate) score: f64,
}

impl CrossModel {
    /// Gaussian init with fan-in scaling; biases start at zero.
    pub fn new(mode: CrossMode, input_dim: usize, hidden: usize, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let n1 = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("valid std");
        let n2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("valid std");
        let w1 = (0..hidden * input_dim).map(|_| n1.sample(&mut rng)).collect();
        let w2 = (0..hidden).map(|_| n2.sample(&mut rng)).collect();
        CrossModel {
            mode,
            input_dim,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
            rng_seed,
        }
    }

    pub fn zeros(mode: CrossMode, input_dim: usize, hidden: usize) -> Self {
        CrossModel {
            mode,
            input_dim,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            rng_seed: 0,
        }
    }

    pub fn num_params(&self) -> usize {
        self.hidden * self.input_dim + 2 * self.hidden + 1
    }

    /// Parameters flattened as `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let (h, d) = (self.hidden, self.input_dim);
        self.w1.copy_from_slice(&p[..h * d]);
        self.b1.copy_from_slice(&p[h * d..h * d + h]);
        self.w2.copy_from_slice(&p[h * d + h..h * d + 2 * h]);
        self.b2 = p[h * d + 2 * h];
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// Rounds every parameter through f32, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        let p: Vec<f64> = self.params().iter().map(|&v| f64::from(v as f32)).collect();
        self.set_params(&p);
    }

    fn check_width(&self, feats: &[f64]) -> Result<()> {
        if feats.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: feats.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward(&self, feats: &[f64]) -> Activations {
        let d = self.input_dim;
        let a: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * d..(j + 1) * d];
                (row.iter().zip(feats).map(|(w, f)| w * f).sum::<f64>() + self.b1[j]).tanh()
            })
            .collect();
        let score = a.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2;
        Activations { a, score }
    }

    pub fn score(&self, feats: &[f64]) -> Result<f64> {
        self.check_width(feats)?;
        Ok(self.forward(feats).score)
    }

    /// Adds `upstream · ∂score/∂params` into `grad` (flattened like [`params`]).
    ///
    /// [`params`]: CrossModel::params
    pub(crate) fn accumulate_param_grad(&self, feats: &[f64], act: &Activations, upstream: f64, grad: &mut [f64]) {
        let (h, d) = (self.hidden, self.input_dim);
        for j in 0..h {
            let dz = upstream * self.w2[j] * (1.0 - act.a[j] * act.a[j]);
            for (g, f) in grad[j * d..(j + 1) * d].iter_mut().zip(feats) {
                *g += dz * f;
            }
            grad[h * d + j] += dz;
            grad[h * d + h + j] += upstream * act.a[j];
        }
        grad[h * d + 2 * h] += upstream;
    }

    /// `∂score/∂params` at `feats`.
    pub fn param_gradient(&self, feats: &[f64]) -> Result<Vec<f64>> {
        self.check_width(feats)?;
        let act = self.forward(feats);
        let mut g = vec![0.0; self.num_params()];
        self.accumulate_param_grad(feats, &act, 1.0, &mut g);
        Ok(g)
    }

    /// `∂score/∂feats`.
    pub fn input_gradient(&self, feats: &[f64]) -> Result<Vec<f64>> {
        self.check_width(feats)?;
        let act = self.forward(feats);
        let d = self.input_dim;
        let mut g = vec![0.0; d];
        for j in 0..self.hidden {
            let dz = self.w2[j] * (1.0 - act.a[j] * act.a[j]);
            for (gi, w) in g.iter_mut().zip(&self.w1[j * d..(j + 1) * d]) {
                *gi += dz * w;
            }
        }
        Ok(g)
    }

    /// `PMCX` bytes: magic, u32 version, u8 mode, u32 input width, u32 hidden
    /// width, then f32 `w1, b1, w2, b2`.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(CROSS_MAGIC);
        w.u32(CROSS_FORMAT_VERSION);
        w.u8(match self.mode {
            CrossMode::Binary => 0,
            CrossMode::Pairwise => 1,
        });
        w.u32(self.input_dim as u32);
        w.u32(self.hidden as u32);
        w.f32s_from(&self.params());
        w.0
    }

    pub fn decode(bytes: &[u8], path: &Path, rng_seed: u64) -> Result<Self> {
        let mut r = Reader::new(bytes, path, CROSS_MAGIC)?;
        let version = r.u32()?;
        if version != CROSS_FORMAT_VERSION {
            return Err(r.fail(format!("unsupported crossencoder version {version}")));
        }
        let mode = match r.u8()? {
            0 => CrossMode::Binary,
            1 => CrossMode::Pairwise,
            m => return Err(r.fail(format!("unknown mode byte {m}"))),
        };
        let input_dim = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        if input_dim == 0 || hidden == 0 {
            return Err(r.fail("zero layer width"));
        }
        let mut model = CrossModel::zeros(mode, input_dim, hidden);
        model.rng_seed = rng_seed;
        let params = r.f32s_widened(model.num_params())?;
        r.finish()?;
        model.set_params(&params);
        if !model.is_finite() {
            return Err(Error::format(path, "non-finite parameters"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path, rng_seed: u64) -> Result<Self> {
        Self::decode(&fsutil::read(path)?, path, rng_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_scores_zero() {
        let m = CrossModel::zeros(CrossMode::Binary, 3, 4);
        assert_eq!(m.score(&[1.0, -2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn repeated_scores_are_identical() {
        let m = CrossModel::new(CrossMode::Binary, 3, 4, 9);
        let f = [0.3, 0.1, -0.7];
        assert_eq!(m.score(&f).unwrap().to_bits(), m.score(&f).unwrap().to_bits());
        assert_eq!(m, CrossModel::new(CrossMode::Binary, 3, 4, 9));
    }

    #[test]
    fn width_mismatch() {
        let m = CrossModel::new(CrossMode::Binary, 3, 4, 9);
        assert!(matches!(m.score(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let m = CrossModel::new(CrossMode::Binary, 5, 7, seed);
            let f: Vec<f64> = (0..5).map(|i| ((seed as f64 + 1.0) * (i as f64 + 0.3)).sin()).collect();
            let g = m.input_gradient(&f).unwrap();
            for i in 0..5 {
                let (mut fp, mut fm) = (f.clone(), f.clone());
                fp[i] += 1e-5;
                fm[i] -= 1e-5;
                let num = (m.score(&fp).unwrap() - m.score(&fm).unwrap()) / 2e-5;
                assert!(rel_err(g[i], num) <= 1e-4, "seed {seed} dim {i}: {} vs {num}", g[i]);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = CrossModel::new(CrossMode::Pairwise, 10, 16, 3);
        m.round_to_f32();
        let bytes = m.encode();
        assert_eq!(&bytes[..4], b"PMCX");
        assert_eq!(bytes[8], 1);
        assert_eq!(bytes.len(), 4 + 4 + 1 + 4 + 4 + 4 * m.num_params());
        assert_eq!(CrossModel::decode(&bytes, Path::new("m"), 3).unwrap(), m);
        assert!(CrossModel::decode(&bytes[..bytes.len() - 1], Path::new("m"), 3).is_err());
    }
}
