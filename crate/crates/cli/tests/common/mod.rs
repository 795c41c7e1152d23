use std::sync::Arc;

use punner_core::corpus::synthetic_registry;
use punner_core::{Codec, NameStyle};
use punner_harness::ner::{build_vocab, push_example, LoadedModel};
use punner_model::{Batch, ModelCheckpoint, ModelConfig, OptimizerConfig, Trainer};

pub const TEXT: &str = "Tom will go to the zoo tomorrow.";

/// A small model memorising three queries about one sentence.
pub fn memorised() -> LoadedModel {
    let codec = Codec::new(Arc::new(synthetic_registry()), NameStyle::Alias);
    let vocab = build_vocab(&codec, [TEXT]);
    let config = ModelConfig { d_model: 32, n_heads: 2, n_encoder_layers: 1, n_decoder_layers: 1, d_ff: 64, dropout: 0.0, max_source_len: 96, max_target_len: 48, ..ModelConfig::default() };
    let opt = OptimizerConfig { peak_lr: 1e-2, warmup_steps: 10, total_steps: 300, weight_decay: 0.0, ..OptimizerConfig::default() };
    let mut t = Trainer::new(config, vocab, opt, 1).unwrap();
    let mut batch = Batch::default();
    for (types, target) in [(vec!["name"], "((name):(Tom))"), (vec!["company"], "((company):(NULL))"), (vec!["time", "location"], "((time):(tomorrow),(location):(zoo))")] {
        let source = codec.serialize_input(&types, TEXT).unwrap();
        assert!(push_example(&mut batch, &t.model, &t.vocab, &source, target));
    }
    for _ in 0..300 {
        t.train_step(&batch).unwrap();
    }
    LoadedModel::from_checkpoint(ModelCheckpoint::from_trainer(&t, false), codec)
}

pub fn model() -> &'static LoadedModel {
    static M: std::sync::OnceLock<LoadedModel> = std::sync::OnceLock::new();
    M.get_or_init(memorised)
}

