//! Exact and inverted-file top-k cosine search over unit-vector stores.
//!
//! Scores are dot products accumulated in f64 in dimension order, so every
//! search path (exact, IVF, brute force) produces bit-identical cosines for
//! the same pair. Ties are broken by ascending id everywhere.

mod kmeans;
mod store;

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::fsutil;

pub use kmeans::{kmeans, KMeans, KMEANS_ITERATIONS};
pub use store::{VectorStore, VECTOR_MAGIC};

pub const INDEX_MAGIC: &[u8; 4] = b"PMIX";
const INDEX_FORMAT_VERSION: u32 = 1;

/// Cosine of two unit vectors.
#[inline]
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        acc += f64::from(x) * f64::from(y);
    }
    acc
}

/// Total order used for ranking: higher score first, then lower id.
#[inline]
pub fn rank_order(a: (f64, u64), b: (f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The k nearest neighbors of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub query_id: u64,
    pub neighbor_ids: Vec<u64>,
    /// Descending; ties ordered by ascending neighbor id.
    pub cosines: Vec<f64>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Exact,
    Ivf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    /// `nlist × dim`, row-major.
    pub centroids: Vec<f64>,
    /// List of every stored row.
    pub assignments: Vec<u32>,
    pub nlist: usize,
    pub kmeans_seed: u64,
    /// Row indices per list, ascending.
    lists: Vec<Vec<usize>>,
}

impl IvfIndex {
    fn from_parts(centroids: Vec<f64>, assignments: Vec<u32>, nlist: usize, kmeans_seed: u64) -> Self {
        let mut lists = vec![Vec::new(); nlist];
        for (row, &l) in assignments.iter().enumerate() {
            lists[l as usize].push(row);
        }
        IvfIndex {
            centroids,
            assignments,
            nlist,
            kmeans_seed,
            lists,
        }
    }

    pub fn list_sizes(&self) -> Vec<usize> {
        self.lists.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Structure {
    Exact,
    Ivf(IvfIndex),
}

/// A searchable index owning its vectors. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    store: VectorStore,
    structure: Structure,
}

/// Builds an index. IVF runs seeded k-means ([`KMEANS_ITERATIONS`]
/// iterations) as the coarse quantizer.
pub fn build(store: &VectorStore, kind: IndexKind, nlist: usize, seed: u64) -> Result<Index> {
    if store.is_empty() {
        return Err(Error::InvalidInput("cannot index an empty store".into()));
    }
    let structure = match kind {
        IndexKind::Exact => Structure::Exact,
        IndexKind::Ivf => {
            if nlist == 0 || nlist > store.len() {
                return Err(Error::InvalidInput(format!(
                    "nlist must be in 1..={}, got {nlist}",
                    store.len()
                )));
            }
            let km = kmeans(store, nlist, KMEANS_ITERATIONS, seed);
            if km.centroids.iter().any(|c| !c.is_finite()) {
                return Err(Error::Numeric("k-means produced non-finite centroids".into()));
            }
            Structure::Ivf(IvfIndex::from_parts(km.centroids, km.assignments, nlist, seed))
        }
    };
    Ok(Index {
        store: store.clone(),
        structure,
    })
}

impl Index {
    pub fn kind(&self) -> IndexKind {
        match self.structure {
            Structure::Exact => IndexKind::Exact,
            Structure::Ivf(_) => IndexKind::Ivf,
        }
    }

    pub fn store(&self) -> &VectorStore {
        &self.store
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn ivf(&self) -> Option<&IvfIndex> {
        match &self.structure {
            Structure::Ivf(ivf) => Some(ivf),
            Structure::Exact => None,
        }
    }

    /// `nprobe` clamped to the valid range for this index; exact indexes
    /// ignore it.
    pub fn effective_nprobe(&self, nprobe: usize) -> usize {
        match &self.structure {
            Structure::Exact => 1,
            Structure::Ivf(ivf) => nprobe.clamp(1, ivf.nlist),
        }
    }

    fn check_nprobe(&self, nprobe: usize) -> Result<()> {
        if let Structure::Ivf(ivf) = &self.structure {
            if nprobe == 0 || nprobe > ivf.nlist {
                return Err(Error::InvalidInput(format!(
                    "nprobe must be in 1..={}, got {nprobe}",
                    ivf.nlist
                )));
            }
        }
        Ok(())
    }

    /// Top-k neighbors of a single query vector.
    pub fn search_vector(&self, query_id: u64, query: &[f32], k: usize, nprobe: usize) -> Result<Neighborhood> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: query.len(),
            });
        }
        self.check_nprobe(nprobe)?;
        let mut scored: Vec<(f64, u64)> = match &self.structure {
            Structure::Exact => (0..self.store.len())
                .map(|r| (cosine(query, self.store.row(r)), self.store.id(r)))
                .collect(),
            Structure::Ivf(ivf) => kmeans::ranked(query, &ivf.centroids, self.dim())
                .into_iter()
                .take(nprobe)
                .flat_map(|l| ivf.lists[l].iter().copied())
                .map(|r| (cosine(query, self.store.row(r)), self.store.id(r)))
                .collect(),
        };
        Ok(top_k(query_id, &mut scored, k))
    }

    /// Batched search; output order follows the query store's row order.
    pub fn search(&self, queries: &VectorStore, k: usize, nprobe: usize) -> Result<Vec<Neighborhood>> {
        if queries.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: queries.dim(),
            });
        }
        (0..queries.len())
            .into_par_iter()
            .map(|r| self.search_vector(queries.id(r), queries.row(r), k, nprobe))
            .collect()
    }

    /// `PMIX` bytes: magic, u32 version, u8 kind, u32 dim, u64 count, then for
    /// IVF u32 nlist, u64 seed, f64 centroids, u32 assignments. The vectors
    /// themselves live in the store's own `PMV1` file.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(INDEX_MAGIC);
        w.u32(INDEX_FORMAT_VERSION);
        w.u8(match self.structure {
            Structure::Exact => 0,
            Structure::Ivf(_) => 1,
        });
        w.u32(self.dim() as u32);
        w.u64(self.len() as u64);
        if let Structure::Ivf(ivf) = &self.structure {
            w.u32(ivf.nlist as u32);
            w.u64(ivf.kmeans_seed);
            for &c in &ivf.centroids {
                w.f64(c);
            }
            for &a in &ivf.assignments {
                w.u32(a);
            }
        }
        w.0
    }

    /// Rebuilds an index from `PMIX` bytes over the store it was built from.
    pub fn decode(bytes: &[u8], path: &Path, store: VectorStore) -> Result<Index> {
        let mut r = Reader::new(bytes, path, INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != INDEX_FORMAT_VERSION {
            return Err(r.fail(format!("unsupported index version {version}")));
        }
        let kind = r.u8()?;
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        if dim != store.dim() || count != store.len() {
            return Err(r.fail(format!(
                "index covers {count}x{dim} but the store is {}x{}",
                store.len(),
                store.dim()
            )));
        }
        let structure = match kind {
            0 => Structure::Exact,
            1 => {
                let nlist = r.u32()? as usize;
                let seed = r.u64()?;
                if nlist == 0 || nlist > count {
                    return Err(r.fail(format!("invalid nlist {nlist}")));
                }
                let centroids = (0..nlist * dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let assignments = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                if assignments.iter().any(|&a| a as usize >= nlist) {
                    return Err(r.fail("assignment out of range"));
                }
                Structure::Ivf(IvfIndex::from_parts(centroids, assignments, nlist, seed))
            }
            other => return Err(r.fail(format!("unknown index kind {other}"))),
        };
        r.finish()?;
        Ok(Index { store, structure })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path, store: VectorStore) -> Result<Index> {
        Self::decode(&fsutil::read(path)?, path, store)
    }
}

fn top_k(query_id: u64, scored: &mut Vec<(f64, u64)>, k: usize) -> Neighborhood {
    let cmp = |a: &(f64, u64), b: &(f64, u64)| rank_order(*a, *b);
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Neighborhood {
        query_id,
        neighbor_ids: scored.iter().map(|s| s.1).collect(),
        cosines: scored.iter().map(|s| s.0).collect(),
    }
}

/// Fraction of `exact`'s neighbor ids that `approx` also returns, averaged
/// over queries.
pub fn recall_at_k(exact: &[Neighborhood], approx: &[Neighborhood]) -> f64 {
    assert_eq!(exact.len(), approx.len());
    if exact.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (e, a) in exact.iter().zip(approx) {
        if e.is_empty() {
            continue;
        }
        let hits = e.neighbor_ids.iter().filter(|id| a.neighbor_ids.contains(id)).count();
        total += hits as f64 / e.len() as f64;
    }
    total / exact.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_store(n: usize, dim: usize, seed: u64) -> VectorStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        VectorStore::new(dim, (0..n as u64).collect(), data).unwrap()
    }

    #[test]
    fn orthonormal_self_match() {
        let store = VectorStore::from_rows(
            vec![10, 11, 12],
            &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        )
        .unwrap();
        let idx = build(&store, IndexKind::Exact, 0, 0).unwrap();
        assert_eq!(idx.len(), 3);
        let n = idx.search_vector(0, &[1.0, 0.0, 0.0], 1, 1).unwrap();
        assert_eq!(n.neighbor_ids, [10]);
        assert_eq!(n.cosines, [1.0]);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let store = VectorStore::from_rows(vec![5, 3, 9], &[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let idx = build(&store, IndexKind::Exact, 0, 0).unwrap();
        let n = idx.search_vector(0, &[1.0, 0.0], 3, 1).unwrap();
        assert_eq!(n.neighbor_ids, [3, 5, 9]);
    }

    #[test]
    fn k_larger_than_store() {
        let store = random_store(3, 4, 1);
        let idx = build(&store, IndexKind::Exact, 0, 0).unwrap();
        let n = idx.search(&store, 10, 1).unwrap();
        assert!(n.iter().all(|n| n.len() == 3));
    }

    #[test]
    fn single_list_ivf_equals_exact() {
        let store = random_store(50, 8, 2);
        let queries = random_store(10, 8, 3);
        let ivf = build(&store, IndexKind::Ivf, 1, 7).unwrap();
        assert_eq!(ivf.ivf().unwrap().list_sizes(), [50]);
        let exact = build(&store, IndexKind::Exact, 0, 0).unwrap();
        assert_eq!(ivf.search(&queries, 5, 1).unwrap(), exact.search(&queries, 5, 1).unwrap());
    }

    #[test]
    fn ivf_build_is_deterministic() {
        let store = random_store(200, 8, 4);
        let a = build(&store, IndexKind::Ivf, 8, 42).unwrap();
        let b = build(&store, IndexKind::Ivf, 8, 42).unwrap();
        let (ca, cb) = (&a.ivf().unwrap().centroids, &b.ivf().unwrap().centroids);
        assert!(ca.iter().zip(cb).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.ivf().unwrap().list_sizes().iter().sum::<usize>(), 200);
    }

    #[test]
    fn parameter_errors() {
        let store = random_store(5, 4, 5);
        assert!(build(&store, IndexKind::Ivf, 6, 0).is_err());
        assert!(build(&store, IndexKind::Ivf, 0, 0).is_err());
        let idx = build(&store, IndexKind::Ivf, 2, 0).unwrap();
        assert!(idx.search(&store, 1, 3).is_err());
        assert!(idx.search(&store, 0, 1).is_err());
        let other = random_store(2, 3, 6);
        assert!(matches!(idx.search(&other, 1, 1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn index_round_trip() {
        let store = random_store(100, 6, 8);
        let idx = build(&store, IndexKind::Ivf, 5, 1).unwrap();
        let back = Index::decode(&idx.encode(), Path::new("i"), store.clone()).unwrap();
        assert_eq!(back, idx);
        let exact = build(&store, IndexKind::Exact, 0, 0).unwrap();
        assert_eq!(Index::decode(&exact.encode(), Path::new("i"), store).unwrap(), exact);
    }

    #[test]
    fn cosines_are_bounded() {
        let store = random_store(300, 5, 9);
        let idx = build(&store, IndexKind::Exact, 0, 0).unwrap();
        for n in idx.search(&store, 7, 1).unwrap() {
            assert!(n.cosines.iter().all(|c| (-1.0 - 1e-6..=1.0 + 1e-6).contains(c)));
            assert!(n.cosines.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
