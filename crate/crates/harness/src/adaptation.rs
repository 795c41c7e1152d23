//! Prefix language-modelling adaptation of a fresh model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use punner_core::adapt::{build_adapt_stream, prefix_split, select_adapt_checkpoint, AdaptCorpus, AdaptTrace};
use punner_core::sampler::{derive_seed, stream_rng, SamplingKind, SamplingPolicy};
use punner_model::{Batch, Seq2Seq, Trainer};

use crate::data::Corpus;
use crate::error::{HarnessError, Result};
use crate::ner::{encode_pair, push_example};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub steps: u64,
    pub sampling: SamplingKind,
    pub eval_every: u64,
    /// Dev texts per dataset for validation loss.
    pub dev_limit: usize,
    /// Steps whose weights are kept besides the selected one.
    #[serde(default)]
    pub keep: Vec<u64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AdaptRun {
    pub losses: Vec<f32>,
    pub trace: AdaptTrace,
    pub selected_step: u64,
    pub snapshots: BTreeMap<u64, Seq2Seq<f32>>,
}

impl AdaptRun {
    pub fn snapshot(&self, step: u64) -> Result<&Seq2Seq<f32>> {
        self.snapshots.get(&step).ok_or(HarnessError::MissingCheckpoint(step))
    }
}

pub fn raw_texts(corpora: &[Corpus], dev: bool) -> Vec<AdaptCorpus> {
    corpora
        .iter()
        .map(|c| AdaptCorpus {
            dataset_id: c.dataset_id.clone(),
            texts: (if dev { &c.split.dev } else { &c.split.train })
                .iter()
                .filter(|s| s.text.chars().count() >= 2)
                .map(|s| s.text.clone())
                .collect(),
        })
        .collect()
}

/// Fixed prefix/suffix splits of the dev texts, one batch per dataset.
fn validation_batches(trainer: &Trainer, dev: &[AdaptCorpus], limit: usize, seed: u64) -> Result<Vec<Batch>> {
    dev.iter()
        .enumerate()
        .map(|(d, c)| {
            let mut rng = stream_rng(derive_seed(seed, "adapt-dev"), d as u64);
            let mut b = Batch::default();
            for t in c.texts.iter().take(limit) {
                let ex = prefix_split(t, &c.dataset_id, &mut rng)?;
                push_example(&mut b, &trainer.model, &trainer.vocab, &ex.source, &ex.target);
            }
            if b.is_empty() {
                return Err(HarnessError::Input(format!("no usable dev text for `{}`", c.dataset_id)));
            }
            Ok(b)
        })
        .collect()
}

/// Mean per-token cross-entropy over a batch, evaluated in chunks.
fn mean_loss(model: &Seq2Seq<f32>, batch: &Batch) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for (s, t) in batch.sources.chunks(32).zip(batch.targets.chunks(32)) {
        let chunk = Batch { sources: s.to_vec(), targets: t.to_vec() };
        let n: usize = t.iter().map(Vec::len).sum();
        total += model.loss(&chunk)? as f64 * n as f64;
        tokens += n;
    }
    Ok(total / tokens as f64)
}

/// Adapts `trainer.model` in place; on return it holds the selected
/// (lowest mean validation loss) weights.
pub fn adapt(trainer: &mut Trainer, train: &[AdaptCorpus], dev: &[AdaptCorpus], cfg: &AdaptConfig) -> Result<AdaptRun> {
    if cfg.steps == 0 {
        return Err(HarnessError::plan("adaptation needs at least one step"));
    }
    let policy = SamplingPolicy::new(cfg.sampling, derive_seed(cfg.seed, "adapt-batches"));
    let stream = build_adapt_stream(train, trainer.optimizer.config.batch_size, policy)?;
    let val = validation_batches(trainer, dev, cfg.dev_limit, cfg.seed)?;
    let mut trace = AdaptTrace::new(dev.iter().map(|c| c.dataset_id.clone()).collect());
    let mut snapshots = BTreeMap::new();
    let mut best: Option<(f64, u64)> = None;
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for (step, examples) in (1..=cfg.steps).zip(stream) {
        let mut batch = Batch::default();
        for ex in &examples {
            let (src, tgt) = encode_pair(&trainer.vocab, &ex.source, &ex.target);
            let c = trainer.model.config();
            if src.len() <= c.max_source_len && tgt.len() <= c.max_target_len {
                batch.sources.push(src);
                batch.targets.push(tgt);
            }
        }
        if batch.is_empty() {
            continue;
        }
        losses.push(trainer.train_step(&batch)?.loss);
        let eval_now = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        if eval_now {
            let row = val.iter().map(|b| mean_loss(&trainer.model, b)).collect::<Result<Vec<f64>>>()?;
            log::info!("adapt step {step} validation {:?}", row);
            trace.push(step, row)?;
            let mean = trace.0.mean(trace.0.steps.len() - 1);
            let improved = best.is_none_or(|(m, _)| mean < m);
            if improved {
                if let Some((_, old)) = best {
                    if !cfg.keep.contains(&old) {
                        snapshots.remove(&old);
                    }
                }
                best = Some((mean, step));
            }
            if improved || cfg.keep.contains(&step) {
                snapshots.insert(step, trainer.model.clone());
            }
        }
    }
    let selected_step = select_adapt_checkpoint(&trace)?;
    trainer.model = snapshots[&selected_step].clone();
    Ok(AdaptRun { losses, trace, selected_step, snapshots })
}
