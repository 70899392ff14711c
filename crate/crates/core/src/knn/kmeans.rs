//! Seeded Lloyd's k-means used as the IVF coarse quantizer.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::store::VectorStore;

pub const KMEANS_ITERATIONS: usize = 20;

fn sq_dist(row: &[f32], centroid: &[f64]) -> f64 {
    row.iter()
        .zip(centroid)
        .map(|(&x, &c)| {
            let d = f64::from(x) - c;
            d * d
        })
        .sum()
}

/// Index of the nearest centroid (ties: lowest index).
pub(crate) fn nearest(row: &[f32], centroids: &[f64], dim: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.chunks(dim).enumerate() {
        let d = sq_dist(row, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Centroid indices ordered by distance to `row` (ties: lowest index).
pub(crate) fn ranked(row: &[f32], centroids: &[f64], dim: usize) -> Vec<usize> {
    let dists: Vec<f64> = centroids.chunks(dim).map(|c| sq_dist(row, c)).collect();
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    order
}

pub struct KMeans {
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<u32>,
}

/// Random distinct points as initial centroids, a fixed number of Lloyd
/// iterations, then a final assignment pass. A cluster left empty by an
/// assignment pass takes over the point of the largest cluster farthest from
/// that cluster's centroid.
pub fn kmeans(store: &VectorStore, k: usize, iterations: usize, seed: u64) -> KMeans {
    let n = store.len();
    let dim = store.dim();
    assert!(k >= 1 && k <= n, "k must be in 1..=n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    for i in sample(&mut rng, n, k).into_vec() {
        centroids.extend(store.row(i).iter().map(|&x| f64::from(x)));
    }

    let assign = |centroids: &[f64]| -> Vec<u32> {
        (0..n)
            .into_par_iter()
            .map(|i| nearest(store.row(i), centroids, dim) as u32)
            .collect()
    };

    let mut assignments = assign(&centroids);
    for _ in 0..iterations {
        reseed_empty(store, &mut centroids, &mut assignments, k);
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            let c = c as usize;
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(store.row(i)) {
                *s += f64::from(x);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = s * inv;
                }
            }
        }
        assignments = assign(&centroids);
    }
    KMeans {
        centroids,
        assignments,
    }
}

fn reseed_empty(store: &VectorStore, centroids: &mut [f64], assignments: &mut [u32], k: usize) {
    let dim = store.dim();
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignments.iter() {
            counts[c as usize] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).expect("k >= 1");
        if counts[largest] < 2 {
            return;
        }
        let centroid = centroids[largest * dim..(largest + 1) * dim].to_vec();
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, &c) in assignments.iter().enumerate() {
            if c as usize == largest {
                let d = sq_dist(store.row(i), &centroid);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        let far = far.expect("largest cluster is non-empty");
        assignments[far] = empty as u32;
        for (dst, &x) in centroids[empty * dim..(empty + 1) * dim].iter_mut().zip(store.row(far)) {
            *dst = f64::from(x);
        }
    }
}
