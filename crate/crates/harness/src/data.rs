//! Corpora as the pipelines consume them.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use punner_core::corpus::{self, synth_generate, AnnotatedSentence, ConllOptions, CorpusSplit, Grammar};
use punner_core::sampler::derive_seed;
use punner_core::schema::Registry;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub dataset_id: String,
    pub split: CorpusSplit,
}

impl Corpus {
    pub fn new(dataset_id: impl Into<String>, split: CorpusSplit) -> Self {
        Self { dataset_id: dataset_id.into(), split }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Generates train from one seed and held-out sentences from another,
/// dropping held-out sentences whose text also occurs in train.
pub fn synthetic_corpus(grammar: &Grammar, registry: &Registry, sizes: SplitSizes, seed: u64) -> Result<Corpus> {
    let train_seed = derive_seed(seed, &format!("{}/train", grammar.dataset_id));
    let held_seed = derive_seed(seed, &format!("{}/held-out", grammar.dataset_id));
    let train = synth_generate(grammar, registry, sizes.train.max(1), train_seed)?;
    let train = if sizes.train == 0 { Vec::new() } else { train };
    let seen: HashSet<&str> = train.iter().map(|s| s.text.as_str()).collect();
    let want = sizes.dev + sizes.test;
    let mut held: Vec<AnnotatedSentence> = Vec::with_capacity(want);
    let mut held_texts: HashSet<String> = HashSet::new();
    let mut round = 0u64;
    while held.len() < want {
        if round == 16 {
            return Err(HarnessError::Input(format!(
                "grammar `{}` cannot produce {want} held-out sentences unseen in training",
                grammar.dataset_id
            )));
        }
        for s in synth_generate(grammar, registry, want.max(1) * 2, derive_seed(held_seed, &round.to_string()))? {
            if held.len() < want && !seen.contains(s.text.as_str()) && held_texts.insert(s.text.clone()) {
                held.push(s);
            }
        }
        round += 1;
    }
    let test = held.split_off(sizes.dev);
    let provenance = format!("synthetic:{}:seed={seed}", grammar.dataset_id);
    Ok(Corpus::new(grammar.dataset_id.clone(), CorpusSplit::provided(train, held, test, provenance)))
}

pub fn synthetic_suite(grammars: &[Grammar], registry: &Registry, sizes: &[SplitSizes], seed: u64) -> Result<Vec<Corpus>> {
    if grammars.len() != sizes.len() {
        return Err(HarnessError::plan("one split size per grammar is required"));
    }
    grammars.iter().zip(sizes).map(|(g, s)| synthetic_corpus(g, registry, *s, seed)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Jsonl,
    Conll,
}

/// A user-supplied corpus on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileCorpus {
    pub dataset_id: String,
    pub format: FileFormat,
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Token joiner for CoNLL input.
    #[serde(default)]
    pub joiner: String,
}

impl FileCorpus {
    fn read(&self, path: &PathBuf, registry: &Registry) -> Result<Vec<AnnotatedSentence>> {
        Ok(match self.format {
            FileFormat::Jsonl => corpus::load_jsonl(path, &self.dataset_id, registry, false)?,
            FileFormat::Conll => {
                let opts = ConllOptions { joiner: self.joiner.clone(), strict: false };
                corpus::load_conll(path, &self.dataset_id, registry, &opts)?
            }
        })
    }

    /// Loads the files. Datasets whose registry split policy is `sample`
    /// draw dev/test from the train file.
    pub fn load(&self, registry: &Registry) -> Result<Corpus> {
        let spec = registry.dataset(&self.dataset_id)?;
        let train = self.read(&self.train, registry)?;
        let provenance = self.train.display().to_string();
        let split = match spec.split_policy {
            policy @ punner_core::schema::SplitPolicy::Sample { .. } if self.dev.is_none() && self.test.is_none() => {
                corpus::split(train, &policy, provenance)?
            }
            _ => {
                let dev = self.dev.as_ref().map(|p| self.read(p, registry)).transpose()?.unwrap_or_default();
                let test = self.test.as_ref().map(|p| self.read(p, registry)).transpose()?.unwrap_or_default();
                CorpusSplit::provided(train, dev, test, provenance)
            }
        };
        Ok(Corpus::new(self.dataset_id.clone(), split))
    }
}
