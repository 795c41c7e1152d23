//! Prompt-set construction for training and inference.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Codec, PromptedExample};
use crate::corpus::AnnotatedSentence;
use crate::error::{Error, Result};
use crate::schema::{DatasetSpec, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "random_exact")]
    RandomExact,
    #[serde(rename = "dataset")]
    DatasetDependent,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Random, StrategyKind::RandomExact, StrategyKind::DatasetDependent];

    pub fn key(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::RandomExact => "random_exact",
            StrategyKind::DatasetDependent => "dataset",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::Random => "Random Prompt",
            StrategyKind::RandomExact => "Random + Exact Match",
            StrategyKind::DatasetDependent => "Dataset-Dependent Prompt",
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.key() == s)
            .ok_or_else(|| Error::invalid(format!("unknown prompt strategy `{s}` (expected random, random_exact or dataset)")))
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStrategy {
    pub kind: StrategyKind,
    /// Upper bound on sampled prompts; `None` means the registry size.
    #[serde(default)]
    pub k_max: Option<usize>,
}

impl PromptStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, k_max: None }
    }

    fn k_max(&self, registry: &Registry) -> Result<usize> {
        let n = registry.entity_types().len();
        let k = self.k_max.unwrap_or(n);
        if k == 0 || k > n {
            return Err(Error::invalid(format!("k_max must be in 1..={n}, got {k}")));
        }
        Ok(k)
    }
}

/// Uniform k in `1..=k_max`, then k distinct types from the whole registry.
pub fn random_prompts<R: Rng + ?Sized>(registry: &Registry, k_max: usize, rng: &mut R) -> Vec<String> {
    let all = registry.entity_types();
    let k = rng.random_range(1..=k_max);
    index::sample(rng, all.len(), k).into_iter().map(|i| all[i].id.clone()).collect()
}

/// Gold types in the dataset's canonical order; types outside the dataset
/// follow in order of first appearance.
pub fn exact_prompts(sentence: &AnnotatedSentence, dataset: &DatasetSpec) -> Vec<String> {
    let gold = sentence.gold_types();
    let mut out: Vec<String> = dataset.entity_ids.iter().filter(|id| gold.contains(&id.as_str())).cloned().collect();
    for g in gold {
        if !out.iter().any(|o| o == g) {
            out.push(g.to_string());
        }
    }
    out
}

pub fn make_training_examples<R: Rng + ?Sized>(
    codec: &Codec,
    sentence: &AnnotatedSentence,
    dataset: &DatasetSpec,
    strategy: &PromptStrategy,
    rng: &mut R,
) -> Result<Vec<PromptedExample>> {
    let registry = codec.registry();
    let mut prompt_sets = Vec::with_capacity(2);
    match strategy.kind {
        StrategyKind::Random => prompt_sets.push(random_prompts(registry, strategy.k_max(registry)?, rng)),
        StrategyKind::RandomExact => {
            prompt_sets.push(random_prompts(registry, strategy.k_max(registry)?, rng));
            if !sentence.mentions.is_empty() {
                prompt_sets.push(exact_prompts(sentence, dataset));
            }
        }
        StrategyKind::DatasetDependent => prompt_sets.push(dataset.entity_ids.clone()),
    }
    prompt_sets.into_iter().map(|p| codec.make_example(p, &sentence.text, &sentence.mentions)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptSource<'a> {
    Dataset(&'a str),
    Explicit(&'a [String]),
}

pub fn make_inference_prompts(registry: &Registry, source: PromptSource<'_>) -> Result<Vec<String>> {
    match source {
        PromptSource::Dataset(id) => Ok(registry.dataset(id)?.entity_ids.clone()),
        PromptSource::Explicit(list) => {
            if list.is_empty() {
                return Err(Error::invalid("entity type list is empty"));
            }
            for (i, id) in list.iter().enumerate() {
                registry.require_entity(id)?;
                if list[..i].contains(id) {
                    return Err(Error::Duplicate { kind: "prompt", id: id.clone() });
                }
            }
            Ok(list.to_vec())
        }
    }
}

/// True when every pair in a serialized target is `NULL`.
pub fn is_all_null(target: &str) -> bool {
    let pairs = target.matches("):(").count();
    pairs > 0 && target.matches(&format!("):({})", crate::codec::NULL)).count() == pairs
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::{synthetic_registry, Mention};
    use crate::schema::NameStyle;

    fn sentence() -> AnnotatedSentence {
        AnnotatedSentence::new("Tom ran", vec![Mention::new("name", "Tom", 0, 3)], "synth_news").unwrap()
    }

    #[test]
    fn dataset_dependent_uses_every_dataset_type() {
        let r = Arc::new(Registry::bundled());
        let c = Codec::new(r.clone(), NameStyle::Prompt);
        let s = AnnotatedSentence::new("张三", vec![Mention::new("name", "张三", 0, 2)], "msra").unwrap();
        let ex = make_training_examples(&c, &s, r.dataset("msra").unwrap(), &PromptStrategy::new(StrategyKind::DatasetDependent), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].prompts, ["location", "name", "organization"]);
        assert_eq!(ex[0].target, "((地点):(NULL),(名称):(张三),(组织):(NULL))");
    }

    #[test]
    fn random_exact_adds_an_exact_sibling() {
        let r = Arc::new(synthetic_registry());
        let c = Codec::new(r.clone(), NameStyle::Alias);
        let d = r.dataset("synth_news").unwrap();
        let ex = make_training_examples(&c, &sentence(), d, &PromptStrategy::new(StrategyKind::RandomExact), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[1].prompts, ["name"]);
        assert!(!ex[1].target.contains("NULL"));

        let empty = AnnotatedSentence::new("nothing", vec![], "synth_news").unwrap();
        let ex = make_training_examples(&c, &empty, d, &PromptStrategy::new(StrategyKind::RandomExact), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(ex.len(), 1);
    }

    #[test]
    fn random_is_seeded() {
        let r = Arc::new(synthetic_registry());
        let c = Codec::new(r.clone(), NameStyle::Alias);
        let d = r.dataset("synth_news").unwrap();
        let strat = PromptStrategy::new(StrategyKind::Random);
        let a = make_training_examples(&c, &sentence(), d, &strat, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = make_training_examples(&c, &sentence(), d, &strat, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_covers_the_bundled_registry() {
        let r = Registry::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..10_000 {
            let p = random_prompts(&r, 37, &mut rng);
            assert!(!p.is_empty() && p.len() <= 37);
            let mut d = p.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), p.len());
            seen.extend(p);
        }
        assert_eq!(seen.len(), 37);
    }

    #[test]
    fn k_max_bounds() {
        let r = Arc::new(synthetic_registry());
        let c = Codec::new(r.clone(), NameStyle::Alias);
        let d = r.dataset("synth_news").unwrap();
        for bad in [0, 7] {
            let s = PromptStrategy { kind: StrategyKind::Random, k_max: Some(bad) };
            assert!(make_training_examples(&c, &sentence(), d, &s, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        }
    }

    #[test]
    fn inference_prompts() {
        let r = Registry::bundled();
        assert_eq!(make_inference_prompts(&r, PromptSource::Dataset("msra")).unwrap(), ["location", "name", "organization"]);
        let t = vec!["time".to_string()];
        assert_eq!(make_inference_prompts(&r, PromptSource::Explicit(&t)).unwrap(), ["time"]);
        assert!(make_inference_prompts(&r, PromptSource::Explicit(&[])).is_err());
        assert!(make_inference_prompts(&r, PromptSource::Explicit(&["xyz".to_string()])).is_err());
    }

    #[test]
    fn strategy_keys() {
        assert_eq!("random_exact".parse::<StrategyKind>().unwrap(), StrategyKind::RandomExact);
        assert_eq!("dataset".parse::<StrategyKind>().unwrap(), StrategyKind::DatasetDependent);
        assert!("exact".parse::<StrategyKind>().is_err());
        assert_eq!(serde_json::to_string(&StrategyKind::DatasetDependent).unwrap(), "\"dataset\"");
    }

    #[test]
    fn all_null_detection() {
        assert!(is_all_null("((time):(NULL),(name):(NULL))"));
        assert!(!is_all_null("((time):(NULL),(name):(Tom))"));
    }
}
