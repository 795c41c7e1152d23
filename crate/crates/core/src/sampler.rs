//! Multi-dataset batch sampling.
//!
//! Every batch draws from its own ChaCha8 stream: the generator is seeded
//! with `seed` and switched to stream `batch_index`, so any batch can be
//! regenerated independently and streams are portable across platforms.

use std::collections::HashSet;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    /// Uniform over the pooled examples, so datasets contribute in
    /// proportion to their size.
    #[default]
    Proportional,
    /// Dataset uniformly first, then an example within it.
    UniformDataset,
}

impl FromStr for SamplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proportional" => Ok(SamplingKind::Proportional),
            "uniform_dataset" => Ok(SamplingKind::UniformDataset),
            other => Err(Error::invalid(format!("unknown sampling policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub kind: SamplingKind,
    pub seed: u64,
}

impl SamplingPolicy {
    pub fn new(kind: SamplingKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExampleRef {
    pub dataset: usize,
    pub index: usize,
}

/// The generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent seed for a named purpose (splits, prompts, ...).
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    // FNV-1a over the purpose, mixed with the seed by splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Batch `batch_index` of the stream over datasets of the given sizes.
/// Sampling is without replacement inside a batch when the pool allows.
pub fn next_batch(sizes: &[usize], batch_size: usize, policy: &SamplingPolicy, batch_index: u64) -> Result<Vec<ExampleRef>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::invalid("all datasets are empty"));
    }
    let mut rng = stream_rng(policy.seed, batch_index);
    let locate = |mut flat: usize| {
        for (d, &n) in sizes.iter().enumerate() {
            if flat < n {
                return ExampleRef { dataset: d, index: flat };
            }
            flat -= n;
        }
        unreachable!("flat index below total")
    };
    Ok(match policy.kind {
        SamplingKind::Proportional => {
            if batch_size <= total {
                index::sample(&mut rng, total, batch_size).into_iter().map(locate).collect()
            } else {
                (0..batch_size).map(|_| locate(rng.random_range(0..total))).collect()
            }
        }
        SamplingKind::UniformDataset => {
            let live: Vec<usize> = (0..sizes.len()).filter(|&d| sizes[d] > 0).collect();
            let mut used: HashSet<ExampleRef> = HashSet::with_capacity(batch_size);
            let mut taken = vec![0usize; sizes.len()];
            (0..batch_size)
                .map(|_| {
                    let d = live[rng.random_range(0..live.len())];
                    let n = sizes[d];
                    let r = if taken[d] < n {
                        loop {
                            let r = ExampleRef { dataset: d, index: rng.random_range(0..n) };
                            if used.insert(r) {
                                break r;
                            }
                        }
                    } else {
                        ExampleRef { dataset: d, index: rng.random_range(0..n) }
                    };
                    taken[d] += 1;
                    r
                })
                .collect()
        }
    })
}

/// Endless sequence of batches starting at batch 0.
#[derive(Debug, Clone)]
pub struct BatchStream {
    sizes: Vec<usize>,
    batch_size: usize,
    policy: SamplingPolicy,
    next: u64,
}

impl BatchStream {
    pub fn new(sizes: Vec<usize>, batch_size: usize, policy: SamplingPolicy) -> Result<Self> {
        next_batch(&sizes, batch_size, &policy, 0)?;
        Ok(Self { sizes, batch_size, policy, next: 0 })
    }

    pub fn batch_index(&self) -> u64 {
        self.next
    }
}

impl Iterator for BatchStream {
    type Item = Vec<ExampleRef>;

    fn next(&mut self) -> Option<Self::Item> {
        let b = next_batch(&self.sizes, self.batch_size, &self.policy, self.next).expect("validated at construction");
        self.next += 1;
        Some(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn share(kind: SamplingKind) -> f64 {
        let policy = SamplingPolicy::new(kind, 5);
        let stream = BatchStream::new(vec![90, 10], 10, policy).unwrap();
        let refs: Vec<ExampleRef> = stream.take(1000).flatten().collect();
        assert_eq!(refs.len(), 10_000);
        refs.iter().filter(|r| r.dataset == 0).count() as f64 / refs.len() as f64
    }

    #[test]
    fn proportional_share() {
        assert!((share(SamplingKind::Proportional) - 0.9).abs() <= 0.02);
    }

    #[test]
    fn uniform_dataset_share() {
        assert!((share(SamplingKind::UniformDataset) - 0.5).abs() <= 0.02);
    }

    #[test]
    fn single_dataset() {
        for kind in [SamplingKind::Proportional, SamplingKind::UniformDataset] {
            let b = next_batch(&[7], 5, &SamplingPolicy::new(kind, 1), 3).unwrap();
            assert!(b.iter().all(|r| r.dataset == 0 && r.index < 7));
        }
    }

    #[test]
    fn no_repeats_within_a_batch_when_possible() {
        for kind in [SamplingKind::Proportional, SamplingKind::UniformDataset] {
            for i in 0..50 {
                let mut b = next_batch(&[4, 3, 0, 5], 12, &SamplingPolicy::new(kind, 2), i).unwrap();
                if kind == SamplingKind::Proportional {
                    b.sort();
                    b.dedup();
                    assert_eq!(b.len(), 12);
                }
                assert!(b.iter().all(|r| r.dataset != 2));
            }
        }
        let b = next_batch(&[2], 5, &SamplingPolicy::new(SamplingKind::Proportional, 0), 0).unwrap();
        assert_eq!(b.len(), 5);
    }

    #[test]
    fn errors() {
        let p = SamplingPolicy::new(SamplingKind::Proportional, 0);
        assert!(next_batch(&[0, 0], 2, &p, 0).is_err());
        assert!(next_batch(&[3], 0, &p, 0).is_err());
        assert!(next_batch(&[], 1, &p, 0).is_err());
    }

    #[test]
    fn batches_are_addressable() {
        let p = SamplingPolicy::new(SamplingKind::UniformDataset, 77);
        let stream: Vec<_> = BatchStream::new(vec![30, 20], 8, p).unwrap().take(5).collect();
        assert_eq!(stream[3], next_batch(&[30, 20], 8, &p, 3).unwrap());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, "split"), derive_seed(1, "prompt"));
        assert_ne!(derive_seed(1, "split"), derive_seed(2, "split"));
        assert_eq!(derive_seed(1, "split"), derive_seed(1, "split"));
    }
}
