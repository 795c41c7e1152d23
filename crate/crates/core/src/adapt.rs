//! Prefix language-modelling examples for adapting the model to raw text.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::char_slice;
use crate::error::{Error, Result};
use crate::sampler::{derive_seed, next_batch, stream_rng, SamplingPolicy};

pub use crate::trace::{select_adapt_checkpoint, AdaptTrace};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrefixLMExample {
    pub source: String,
    pub target: String,
    pub dataset_id: String,
}

/// Split point uniform over `1..len`, in characters.
pub fn split_at(text: &str, at: usize) -> Result<(String, String)> {
    let n = text.chars().count();
    if n < 2 || at == 0 || at >= n {
        return Err(Error::invalid(format!("cannot split {n} characters at {at}")));
    }
    Ok((char_slice(text, 0, at).expect("in bounds").to_string(), char_slice(text, at, n).expect("in bounds").to_string()))
}

pub fn prefix_split<R: Rng + ?Sized>(text: &str, dataset_id: &str, rng: &mut R) -> Result<PrefixLMExample> {
    let n = text.chars().count();
    if n < 2 {
        return Err(Error::invalid("prefix split needs at least 2 characters"));
    }
    let (source, target) = split_at(text, rng.random_range(1..n))?;
    Ok(PrefixLMExample { source, target, dataset_id: dataset_id.to_string() })
}

/// Raw-text corpora feeding adaptation, one per dataset.
#[derive(Debug, Clone)]
pub struct AdaptCorpus {
    pub dataset_id: String,
    pub texts: Vec<String>,
}

/// Batches of prefix/suffix pairs. Example selection follows the joint
/// sampler; split points use a separate stream per batch.
#[derive(Debug, Clone)]
pub struct AdaptStream<'a> {
    corpora: &'a [AdaptCorpus],
    sizes: Vec<usize>,
    batch_size: usize,
    policy: SamplingPolicy,
    split_seed: u64,
    next: u64,
}

pub fn build_adapt_stream(corpora: &[AdaptCorpus], batch_size: usize, policy: SamplingPolicy) -> Result<AdaptStream<'_>> {
    if corpora.is_empty() {
        return Err(Error::invalid("no corpora to adapt on"));
    }
    for c in corpora {
        if let Some(t) = c.texts.iter().find(|t| t.chars().count() < 2) {
            return Err(Error::invalid(format!("text `{t}` in `{}` is too short to split", c.dataset_id)));
        }
    }
    let sizes: Vec<usize> = corpora.iter().map(|c| c.texts.len()).collect();
    next_batch(&sizes, batch_size, &policy, 0)?;
    let split_seed = derive_seed(policy.seed, "prefix-split");
    Ok(AdaptStream { corpora, sizes, batch_size, policy, split_seed, next: 0 })
}

impl Iterator for AdaptStream<'_> {
    type Item = Vec<PrefixLMExample>;

    fn next(&mut self) -> Option<Self::Item> {
        let refs = next_batch(&self.sizes, self.batch_size, &self.policy, self.next).expect("validated");
        let mut rng = stream_rng(self.split_seed, self.next);
        self.next += 1;
        Some(
            refs.into_iter()
                .map(|r| {
                    let c = &self.corpora[r.dataset];
                    prefix_split(&c.texts[r.index], &c.dataset_id, &mut rng).expect("validated length")
                })
                .collect(),
        )
    }
}
