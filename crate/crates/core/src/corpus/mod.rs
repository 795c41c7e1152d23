//! Annotated sentences, file loaders, synthetic corpora and splits.
//!
//! All offsets are Unicode scalar indices into `text`, end-exclusive.

mod conll;
mod jsonl;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::SplitPolicy;

pub use conll::{load_conll, parse_conll, ConllOptions};
pub use jsonl::{load_jsonl, parse_jsonl, to_jsonl, write_jsonl};
pub use synth::{default_grammars, synth_generate, synthetic_registry, Grammar, Slot};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub type_id: String,
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Mention {
    pub fn new(type_id: impl Into<String>, text: impl Into<String>, start: usize, end: usize) -> Self {
        Self { type_id: type_id.into(), text: text.into(), start, end }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub text: String,
    pub mentions: Vec<Mention>,
    pub dataset_id: String,
}

impl AnnotatedSentence {
    /// Builds a sentence and checks the mention invariants: in bounds,
    /// surface text equal to the slice, sorted, non-overlapping.
    pub fn new(text: impl Into<String>, mut mentions: Vec<Mention>, dataset_id: impl Into<String>) -> Result<Self> {
        let text = text.into();
        mentions.sort_by_key(|m| (m.start, m.end));
        check_mentions(&text, &mentions, 0, true)?;
        Ok(Self { text, mentions, dataset_id: dataset_id.into() })
    }

    pub fn len_chars(&self) -> usize {
        self.text.chars().count()
    }

    /// Distinct gold types in order of first appearance.
    pub fn gold_types(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for m in &self.mentions {
            if !out.contains(&m.type_id.as_str()) {
                out.push(&m.type_id);
            }
        }
        out
    }
}

/// Slices `text` by character offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut idx = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b0 = idx.nth(start)?;
    let b1 = if end == start { b0 } else { idx.nth(end - start - 1)? };
    Some(&text[b0..b1])
}

pub(crate) fn check_mentions(text: &str, mentions: &[Mention], line: usize, strict_overlap: bool) -> Result<()> {
    let len = text.chars().count();
    let mut prev: Option<&Mention> = None;
    for m in mentions {
        if m.start >= m.end || m.end > len {
            return Err(Error::OutOfBounds { line, start: m.start, end: m.end, len });
        }
        if char_slice(text, m.start, m.end) != Some(m.text.as_str()) {
            return Err(Error::invalid(format!(
                "line {line}: mention text `{}` does not match [{}, {})",
                m.text, m.start, m.end
            )));
        }
        if let Some(p) = prev {
            if m.start < p.end && strict_overlap {
                return Err(Error::Overlap { line, a_start: p.start, a_end: p.end, b_start: m.start, b_end: m.end });
            }
        }
        prev = Some(m);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
    pub provenance: String,
}

impl CorpusSplit {
    pub fn provided(
        train: Vec<AnnotatedSentence>,
        dev: Vec<AnnotatedSentence>,
        test: Vec<AnnotatedSentence>,
        provenance: impl Into<String>,
    ) -> Self {
        Self { train, dev, test, provenance: provenance.into() }
    }

    /// Test when present, otherwise dev (validation-only corpora).
    pub fn eval_split(&self) -> &[AnnotatedSentence] {
        if self.test.is_empty() {
            &self.dev
        } else {
            &self.test
        }
    }
}

/// Applies a split policy. `Provided` keeps everything as train; the caller
/// attaches its own dev/test files.
pub fn split(data: Vec<AnnotatedSentence>, policy: &SplitPolicy, provenance: impl Into<String>) -> Result<CorpusSplit> {
    let provenance = provenance.into();
    match *policy {
        SplitPolicy::Provided => Ok(CorpusSplit::provided(data, Vec::new(), Vec::new(), provenance)),
        SplitPolicy::Sample { n_dev, n_test, seed } => {
            if n_dev + n_test > data.len() {
                return Err(Error::invalid(format!(
                    "cannot sample {n_dev} dev + {n_test} test from {} sentences",
                    data.len()
                )));
            }
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut slots: Vec<Option<AnnotatedSentence>> = data.into_iter().map(Some).collect();
            let mut take = |ids: &[usize]| -> Vec<AnnotatedSentence> {
                let mut ids = ids.to_vec();
                ids.sort_unstable();
                ids.into_iter().map(|i| slots[i].take().expect("index used once")).collect()
            };
            let dev = take(&order[..n_dev]);
            let test = take(&order[n_dev..n_dev + n_test]);
            let train = take(&order[n_dev + n_test..]);
            Ok(CorpusSplit { train, dev, test, provenance })
        }
    }
}
