use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, OptimizerConfig};
use crate::error::{ModelError, Result};
use crate::optim::{AdamW, StepInfo};
use crate::transformer::{Batch, Seq2Seq};
use crate::vocab::Vocab;

/// A model in training: parameters, optimizer state, and the dropout seed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Seq2Seq<f32>,
    pub vocab: Vocab,
    pub optimizer: AdamW<f32>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f32,
    pub info: StepInfo,
}

impl Trainer {
    pub fn new(config: ModelConfig, vocab: Vocab, opt: OptimizerConfig, seed: u64) -> Result<Self> {
        opt.validate()?;
        let model = Seq2Seq::new(config, vocab.len(), seed)?;
        let optimizer = AdamW::new(opt, model.store());
        Ok(Self { model, vocab, optimizer, seed })
    }

    /// Continues from existing weights with a fresh optimizer.
    pub fn from_model(model: Seq2Seq<f32>, vocab: Vocab, opt: OptimizerConfig, seed: u64) -> Result<Self> {
        opt.validate()?;
        if model.vocab_size() != vocab.len() {
            return Err(ModelError::Config("model and vocabulary sizes differ".into()));
        }
        let optimizer = AdamW::new(opt, model.store());
        Ok(Self { model, vocab, optimizer, seed })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    /// One forward/backward/update. A non-finite loss leaves the parameters
    /// untouched and reports the batch fingerprint.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport> {
        if !self.optimizer.matches(self.model.store()) {
            return Err(ModelError::Config("optimizer state does not match model parameters".into()));
        }
        let next = self.optimizer.step + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(next);
        let (out, tape) = self.model.forward(batch, Some(&mut rng))?;
        if !out.loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: next, fingerprint: fingerprint(batch) });
        }
        let mut grads = self.model.backward(&tape);
        let info = self.optimizer.update(self.model.store_mut(), &mut grads);
        Ok(StepReport { step: next, loss: out.loss, info })
    }
}

pub fn fingerprint(batch: &Batch) -> u64 {
    let mut h = DefaultHasher::new();
    batch.hash(&mut h);
    h.finish()
}
