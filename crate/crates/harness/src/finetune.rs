//! Multi-dataset NER fine-tuning with periodic dev evaluation and best-mean
//! checkpoint selection.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use punner_core::codec::Codec;
use punner_core::evalkit::{EvalReport, MatchMode};
use punner_core::prompting::{is_all_null, make_training_examples, PromptStrategy};
use punner_core::sampler::{derive_seed, next_batch, stream_rng, SamplingKind, SamplingPolicy};
use punner_core::trace::{select_joint_checkpoint, JointTrace};
use punner_model::{Batch, DecodeMode, Seq2Seq, Trainer};

use crate::data::Corpus;
use crate::error::{HarnessError, Result};
use crate::ner::{push_example, Recognizer};

/// Which aggregate stands for a dataset's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Micro,
    Macro,
}

impl Metric {
    pub fn of(self, r: &EvalReport) -> f64 {
        match self {
            Metric::Micro => r.micro_f1,
            Metric::Macro => r.macro_f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Sentences per dataset used for checkpoint selection.
    pub dev_limit: usize,
    pub beam: usize,
    pub match_mode: MatchMode,
    pub metric: Metric,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { dev_limit: 200, beam: 1, match_mode: MatchMode::Surface, metric: Metric::Micro }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub steps: u64,
    pub strategy: PromptStrategy,
    pub sampling: SamplingKind,
    /// 0 evaluates only at the final step.
    pub eval_every: u64,
    pub eval: EvalSettings,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneRun {
    pub losses: Vec<f32>,
    pub trace: JointTrace,
    pub selected_step: u64,
    /// SHA-256 over the sampled (step, dataset, sentence) stream.
    pub stream_hash: String,
    pub examples: u64,
    pub all_null_targets: u64,
    pub skipped: u64,
}

impl FineTuneRun {
    pub fn all_null_fraction(&self) -> f64 {
        if self.examples == 0 {
            0.0
        } else {
            self.all_null_targets as f64 / self.examples as f64
        }
    }
}

/// Per-dataset dev score with Dataset-Dependent prompts.
pub fn dev_scores(rec: &Recognizer<'_>, corpora: &[Corpus], eval: &EvalSettings) -> Result<Vec<f64>> {
    corpora
        .iter()
        .map(|c| {
            let types = rec.codec.registry().dataset(&c.dataset_id)?.entity_ids.clone();
            let dev = &c.split.dev[..c.split.dev.len().min(eval.dev_limit)];
            let e = rec.evaluate(dev, &types, DecodeMode::from_width(eval.beam), eval.match_mode)?;
            Ok(e.report().map(|r| eval.metric.of(&r)).unwrap_or(0.0))
        })
        .collect()
}

/// Trains on the union of the corpora's train splits. At the end the
/// trainer holds the weights of the selected step.
pub fn fine_tune(trainer: &mut Trainer, codec: &Codec, corpora: &[Corpus], cfg: &FineTuneConfig) -> Result<FineTuneRun> {
    if corpora.is_empty() {
        return Err(HarnessError::plan("no corpora to train on"));
    }
    if cfg.steps == 0 {
        return Err(HarnessError::plan("fine-tuning budget must be positive"));
    }
    let registry = codec.registry().clone();
    let specs = corpora.iter().map(|c| registry.dataset(&c.dataset_id).cloned()).collect::<punner_core::Result<Vec<_>>>()?;
    let sizes: Vec<usize> = corpora.iter().map(|c| c.split.train.len()).collect();
    let policy = SamplingPolicy::new(cfg.sampling, derive_seed(cfg.seed, "batches"));
    let prompt_seed = derive_seed(cfg.seed, "prompts");
    let batch_size = trainer.optimizer.config.batch_size;

    let mut trace = JointTrace::new(corpora.iter().map(|c| c.dataset_id.clone()).collect());
    let mut best: Option<(f64, u64, Seq2Seq<f32>)> = None;
    let mut hasher = Sha256::new();
    let mut run = FineTuneRun {
        losses: Vec::with_capacity(cfg.steps as usize),
        trace: JointTrace::default(),
        selected_step: 0,
        stream_hash: String::new(),
        examples: 0,
        all_null_targets: 0,
        skipped: 0,
    };
    for step in 1..=cfg.steps {
        let refs = next_batch(&sizes, batch_size, &policy, step - 1)?;
        let mut rng = stream_rng(prompt_seed, step - 1);
        let mut batch = Batch::default();
        for r in &refs {
            let sentence = &corpora[r.dataset].split.train[r.index];
            hasher.update(step.to_le_bytes());
            hasher.update((r.dataset as u64).to_le_bytes());
            hasher.update(sentence.text.as_bytes());
            hasher.update([0]);
            for ex in make_training_examples(codec, sentence, &specs[r.dataset], &cfg.strategy, &mut rng)? {
                if push_example(&mut batch, &trainer.model, &trainer.vocab, &ex.source, &ex.target) {
                    run.examples += 1;
                    run.all_null_targets += is_all_null(&ex.target) as u64;
                } else {
                    run.skipped += 1;
                }
            }
        }
        if batch.is_empty() {
            return Err(HarnessError::Input(format!("step {step}: every example exceeds the model's length limits")));
        }
        let report = trainer.train_step(&batch)?;
        run.losses.push(report.loss);
        let eval_now = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        if eval_now {
            let rec = Recognizer::new(&trainer.model, &trainer.vocab, codec);
            let scores = dev_scores(&rec, corpora, &cfg.eval)?;
            log::info!("step {step} loss {:.4} dev {:?}", report.loss, scores);
            trace.push(step, scores)?;
            let row = trace.0.steps.len() - 1;
            let mean = trace.0.mean(row);
            if best.as_ref().is_none_or(|(m, ..)| mean > *m) {
                best = Some((mean, step, trainer.model.clone()));
            }
        }
    }
    let selected = select_joint_checkpoint(&trace)?;
    let (_, best_step, model) = best.expect("at least one evaluation");
    debug_assert_eq!(selected, best_step);
    trainer.model = model;
    run.selected_step = selected;
    run.trace = trace;
    run.stream_hash = format!("{:x}", hasher.finalize());
    Ok(run)
}

/// Final per-dataset reports of a model on each corpus's evaluation split
/// (test when present, otherwise dev).
pub fn final_reports(rec: &Recognizer<'_>, corpora: &[Corpus], beam: usize, match_mode: MatchMode, use_dev: bool) -> Result<Vec<EvalReport>> {
    corpora
        .iter()
        .map(|c| {
            let types = rec.codec.registry().dataset(&c.dataset_id)?.entity_ids.clone();
            let split = if use_dev { &c.split.dev[..] } else { c.split.eval_split() };
            Ok(rec.evaluate(split, &types, DecodeMode::from_width(beam), match_mode)?.report()?)
        })
        .collect()
}
