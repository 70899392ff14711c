use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::corpus::tokenize;

pub const DEFAULT_NUM_BUCKETS: u32 = 1 << 18;
const HASH_SEED: u64 = 0x5eed_fea7_u64;

/// Sparse bag of hashed word unigrams and bigrams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedFeatures {
    /// `(bucket, count)` sorted by bucket; every count is positive.
    pub entries: Vec<(u32, u32)>,
    pub num_buckets: u32,
}

impl HashedFeatures {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_count(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| u64::from(c)).sum()
    }

    /// Same buckets, every count multiplied by `factor` (> 0).
    pub fn scaled(&self, factor: u32) -> Self {
        assert!(factor > 0);
        HashedFeatures {
            entries: self.entries.iter().map(|&(b, c)| (b, c * factor)).collect(),
            num_buckets: self.num_buckets,
        }
    }
}

fn bucket(kind: u8, key: &str, mask: u64) -> u32 {
    let mut bytes = Vec::with_capacity(key.len() + 2);
    bytes.push(kind);
    bytes.push(0x1f);
    bytes.extend_from_slice(key.as_bytes());
    (XxHash64::oneshot(HASH_SEED, &bytes) & mask) as u32
}

/// Hashes lowercased word unigrams and bigrams of `text` into
/// `num_buckets` (a power of two) buckets.
pub fn featurize(text: &str, num_buckets: u32) -> HashedFeatures {
    assert!(num_buckets.is_power_of_two(), "num_buckets must be a power of two");
    let mask = u64::from(num_buckets - 1);
    let tokens = tokenize(text);
    let mut buckets: Vec<u32> = Vec::with_capacity(tokens.len() * 2);
    for t in &tokens {
        buckets.push(bucket(b'u', t, mask));
    }
    for pair in tokens.windows(2) {
        buckets.push(bucket(b'b', &format!("{} {}", pair[0], pair[1]), mask));
    }
    buckets.sort_unstable();
    let mut entries: Vec<(u32, u32)> = Vec::new();
    for b in buckets {
        match entries.last_mut() {
            Some((last, count)) if *last == b => *count += 1,
            _ => entries.push((b, 1)),
        }
    }
    HashedFeatures {
        entries,
        num_buckets,
    }
}
