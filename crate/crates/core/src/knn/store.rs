use std::collections::HashMap;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::fsutil;

pub const VECTOR_MAGIC: &[u8; 4] = b"PMV1";
const NORM_TOLERANCE: f64 = 1e-4;

/// Row-major `count × dim` f32 unit vectors with a parallel id list.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f32>,
    positions: HashMap<u64, usize>,
    /// Rows whose norm was off by more than 1e-4 and were renormalized.
    pub renormalized: usize,
}

impl VectorStore {
    /// Validates ids (unique) and rows (finite, unit norm within 1e-4;
    /// other non-zero rows are renormalized and counted).
    pub fn new(dim: usize, ids: Vec<u64>, mut data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("vector dimension must be >= 1".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::InvalidInput(format!(
                "{} ids but {} floats for dim {dim}",
                ids.len(),
                data.len()
            )));
        }
        let mut positions = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if positions.insert(id, i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vector id {id}")));
            }
        }
        let mut renormalized = 0;
        for (i, row) in data.chunks_mut(dim).enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("vector {} has non-finite entries", ids[i])));
            }
            let norm = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                if norm < 1e-12 {
                    return Err(Error::Numeric(format!("vector {} has zero norm", ids[i])));
                }
                row.iter_mut().for_each(|x| *x = (f64::from(*x) / norm) as f32);
                renormalized += 1;
            }
        }
        if renormalized > 0 {
            log::warn!("renormalized {renormalized} vectors off unit norm by more than {NORM_TOLERANCE}");
        }
        Ok(VectorStore {
            dim,
            ids,
            data,
            positions,
            renormalized,
        })
    }

    pub fn from_rows(ids: Vec<u64>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("rows have differing lengths".into()));
        }
        Self::new(dim, ids, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> u64 {
        self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.positions.get(&id).copied()
    }

    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        self.position(id).map(|r| self.row(r))
    }

    /// Rows whose id is in `ids`, in this store's order.
    pub fn subset(&self, ids: &[u64]) -> VectorStore {
        let keep: std::collections::HashSet<u64> = ids.iter().copied().collect();
        let rows: Vec<usize> = (0..self.len()).filter(|&r| keep.contains(&self.ids[r])).collect();
        let sub_ids: Vec<u64> = rows.iter().map(|&r| self.ids[r]).collect();
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in &rows {
            data.extend_from_slice(self.row(r));
        }
        VectorStore::new(self.dim, sub_ids, data).expect("subset of a valid store is valid")
    }

    /// `PMV1` bytes: magic, u32 dim, u64 count, u64 ids, f32 rows.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(VECTOR_MAGIC);
        w.u32(self.dim as u32);
        w.u64(self.ids.len() as u64);
        for &id in &self.ids {
            w.u64(id);
        }
        w.0.reserve(self.data.len() * 4);
        for &x in &self.data {
            w.f32(x);
        }
        w.0
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path, VECTOR_MAGIC)?;
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        if count.checked_mul(8 + dim * 4).map_or(true, |n| n > bytes.len()) {
            return Err(r.fail(format!("header claims {count} vectors of dim {dim}, file too short")));
        }
        let ids = (0..count).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let data = r.f32s(count * dim)?;
        r.finish()?;
        VectorStore::new(dim, ids, data).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fsutil::read(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renormalizes_off_norm_rows() {
        let s = VectorStore::new(2, vec![1, 2], vec![1.0, 0.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.renormalized, 1);
        assert_eq!(s.row(1), [0.6, 0.8]);
    }

    #[test]
    fn rejects_duplicates_and_zero_rows() {
        assert!(VectorStore::new(1, vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(VectorStore::new(2, vec![1], vec![0.0, 0.0]).is_err());
        assert!(VectorStore::new(2, vec![1], vec![1.0]).is_err());
    }

    #[test]
    fn exact_byte_layout() {
        let s = VectorStore::new(2, vec![7], vec![0.0, 1.0]).unwrap();
        let bytes = s.encode();
        let mut expected = b"PMV1".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&7u64.to_le_bytes());
        expected.extend_from_slice(&0f32.to_le_bytes());
        expected.extend_from_slice(&1f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let s = VectorStore::new(2, vec![7], vec![0.0, 1.0]).unwrap();
        let bytes = s.encode();
        let p = Path::new("v.pmv");
        assert!(VectorStore::decode(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(VectorStore::decode(&bad, p).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 3), 1..20)) {
            let rows: Vec<Vec<f32>> = rows.into_iter().map(|mut r| { r[0] += 2.0; r }).collect();
            let ids: Vec<u64> = (0..rows.len() as u64).map(|i| i * 11).collect();
            let s = VectorStore::from_rows(ids, &rows).unwrap();
            let back = VectorStore::decode(&s.encode(), Path::new("x")).unwrap();
            prop_assert_eq!(back.ids(), s.ids());
            for r in 0..s.len() {
                prop_assert_eq!(back.row(r), s.row(r));
            }
        }
    }
}
