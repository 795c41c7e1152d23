//! Rough training throughput on random batches: `cargo run --release --example throughput -p punner-model`.

use std::time::Instant;

use punner_model::{Batch, ModelConfig, OptimizerConfig, Trainer, Vocab};

fn main() {
    let src_len: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let tgt_len: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let d: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(128);
    let vocab = Vocab::build(["abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789(),:. "]);
    let cfg = ModelConfig { d_model: d, d_ff: 4 * d, ..Default::default() };
    let mut t = Trainer::new(cfg, vocab.clone(), OptimizerConfig::default(), 1).unwrap();
    let v = vocab.len() as u32;
    let batch = Batch {
        sources: (0..32).map(|i| (0..src_len).map(|j| 6 + ((i * 7 + j * 3) as u32 % (v - 6))).collect()).collect(),
        targets: (0..32).map(|i| (0..tgt_len).map(|j| 6 + ((i * 5 + j) as u32 % (v - 6))).collect()).collect(),
    };
    println!("params {}", t.model.num_parameters());
    let start = Instant::now();
    for _ in 0..5 {
        let r = t.train_step(&batch).unwrap();
        println!("loss {}", r.loss);
    }
    println!("{:.3} s/step", start.elapsed().as_secs_f64() / 5.0);
}
