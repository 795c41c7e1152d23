use punner_model::checkpoint::ModelCheckpoint;
use punner_model::decode::{beam, greedy, ModelScorer};
use punner_model::vocab::{EOS_ID, PAD_ID};
use punner_model::{Batch, ModelConfig, ModelError, OptimizerConfig, Seq2Seq, Trainer, Vocab};
use rand_chacha::ChaCha8Rng;

fn toy_vocab() -> Vocab {
    Vocab::build(["<entity>name<entity>time<text>Tom will go to the zoo tomorrow.((name):(Tom),(time):(tomorrow))NULL"])
}

fn toy_batch(v: &Vocab) -> Batch {
    let pairs = [
        ("<entity>name<text>Tom will go to the zoo tomorrow.", "((name):(Tom))"),
        ("<entity>time<text>Tom will go to the zoo tomorrow.", "((time):(tomorrow))"),
        ("<entity>time<entity>name<text>Tom will go.", "((time):(NULL),(name):(Tom))"),
        ("<entity>name<text>to the zoo", "((name):(NULL))"),
    ];
    let mut b = Batch::default();
    for (s, t) in pairs {
        b.sources.push(v.encode(s));
        let mut t = v.encode(t);
        t.push(EOS_ID);
        b.targets.push(t);
    }
    b
}

fn small_cfg() -> ModelConfig {
    ModelConfig { d_model: 32, n_heads: 4, d_ff: 64, dropout: 0.0, max_source_len: 64, max_target_len: 48, ..Default::default() }
}

#[test]
fn untrained_loss_is_near_uniform() {
    let v = toy_vocab();
    let m = Seq2Seq::<f32>::new(ModelConfig::default(), v.len(), 3).unwrap();
    let loss = m.loss(&toy_batch(&v)).unwrap();
    let uniform = (v.len() as f32).ln();
    assert!((loss - uniform).abs() < 0.1 * uniform, "loss {loss} vs ln V {uniform}");
}

#[test]
fn out_of_range_and_overlong_inputs_are_rejected() {
    let v = toy_vocab();
    let m = Seq2Seq::<f32>::new(small_cfg(), v.len(), 3).unwrap();
    let bad = Batch { sources: vec![vec![v.len() as u32]], targets: vec![vec![EOS_ID]] };
    assert!(matches!(m.loss(&bad), Err(ModelError::TokenOutOfRange { .. })));
    let long = Batch { sources: vec![vec![7; 65]], targets: vec![vec![EOS_ID]] };
    assert!(matches!(m.loss(&long), Err(ModelError::TooLong { .. })));
}

#[test]
fn padding_is_exactly_inert() {
    let v = toy_vocab();
    let m = Seq2Seq::<f32>::new(small_cfg(), v.len(), 3).unwrap();
    let b = toy_batch(&v);
    let padded = b.padded();
    let (o1, _) = m.forward::<ChaCha8Rng>(&b, None).unwrap();
    let (o2, _) = m.forward::<ChaCha8Rng>(&padded, None).unwrap();
    assert_eq!(o1.loss.to_bits(), o2.loss.to_bits());
    assert_eq!(o1.logits, o2.logits);
    let (l, shape) = o2.padded_logits();
    assert_eq!(shape, [4, padded.targets[0].len(), v.len()]);
    assert_eq!(l.len(), shape.iter().product::<usize>());
}

#[test]
fn future_target_tokens_do_not_affect_earlier_logits() {
    let v = toy_vocab();
    let m = Seq2Seq::<f32>::new(small_cfg(), v.len(), 3).unwrap();
    let mut b = toy_batch(&v);
    b.sources.truncate(1);
    b.targets.truncate(1);
    let (o1, _) = m.forward::<ChaCha8Rng>(&b, None).unwrap();
    let n = b.targets[0].len();
    b.targets[0][n - 2] = 6;
    let (o2, _) = m.forward::<ChaCha8Rng>(&b, None).unwrap();
    let vs = v.len();
    // The decoder input is shifted right: changing label n-2 affects only position n-1.
    assert_eq!(o1.logits[..(n - 1) * vs], o2.logits[..(n - 1) * vs]);
    assert_ne!(o1.logits[(n - 1) * vs..], o2.logits[(n - 1) * vs..]);
}

#[test]
fn loss_is_invariant_to_example_order() {
    let v = toy_vocab();
    let m = Seq2Seq::<f32>::new(small_cfg(), v.len(), 3).unwrap();
    let b = toy_batch(&v);
    let mut r = b.clone();
    r.sources.reverse();
    r.targets.reverse();
    let (a, c) = (m.loss(&b).unwrap(), m.loss(&r).unwrap());
    assert!((a - c).abs() <= 1e-6 * a.abs(), "{a} vs {c}");
}

#[test]
fn single_batch_overfits() {
    let v = toy_vocab();
    let opt = OptimizerConfig { peak_lr: 1e-3, warmup_steps: 20, total_steps: 500, weight_decay: 0.0, ..Default::default() };
    let cfg = ModelConfig { dropout: 0.0, ..ModelConfig::default() };
    let mut t = Trainer::new(cfg, v.clone(), opt, 9).unwrap();
    let b = toy_batch(&v);
    let mut last = f32::MAX;
    let mut reached = None;
    for step in 1..=500 {
        last = t.train_step(&b).unwrap().loss;
        if last < 0.1 {
            reached = Some(step);
            break;
        }
    }
    println!("final loss {last}, reached at {reached:?}");
    assert!(reached.is_some_and(|s| s <= 200), "loss {last}");
}

#[test]
fn training_is_deterministic() {
    let v = toy_vocab();
    let run = || {
        let mut t = Trainer::new(small_cfg_with_dropout(), v.clone(), OptimizerConfig::default(), 4).unwrap();
        (0..5).map(|_| t.train_step(&toy_batch(&v)).unwrap().loss.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

fn small_cfg_with_dropout() -> ModelConfig {
    ModelConfig { dropout: 0.1, ..small_cfg() }
}

#[test]
fn incremental_decoding_matches_teacher_forcing() {
    let v = toy_vocab();
    let m = Seq2Seq::<f32>::new(small_cfg(), v.len(), 3).unwrap();
    let b = toy_batch(&v);
    let (out, _) = m.forward::<ChaCha8Rng>(&b, None).unwrap();
    let enc = m.encode(&b.sources[0]).unwrap();
    let mut st = m.start_state();
    let mut prev = punner_model::vocab::BOS_ID;
    let vs = v.len();
    for (i, &lab) in b.targets[0].iter().enumerate() {
        let logits = m.decode_step(&enc, &mut st, prev).unwrap();
        for (a, e) in logits.iter().zip(&out.logits[i * vs..(i + 1) * vs]) {
            assert!((a - e).abs() < 1e-4, "step {i}: {a} vs {e}");
        }
        prev = lab;
    }
}

#[test]
fn beam_one_equals_greedy_on_random_sources() {
    let v = toy_vocab();
    let m = Seq2Seq::<f32>::new(small_cfg(), v.len(), 11).unwrap();
    for i in 0..100u32 {
        let src: Vec<u32> = (0..(3 + i % 9)).map(|j| 6 + (i * 7 + j * 13) % (v.len() as u32 - 6)).collect();
        let s = ModelScorer::new(&m, &src).unwrap();
        assert_eq!(beam(&s, 1, 12).unwrap(), greedy(&s, 12).unwrap());
    }
    assert!(ModelScorer::new(&m, &[]).is_err());
    assert!(ModelScorer::new(&m, &[PAD_ID]).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let v = toy_vocab();
    let mut t = Trainer::new(small_cfg(), v.clone(), OptimizerConfig::default(), 2).unwrap();
    t.train_step(&toy_batch(&v)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ModelCheckpoint::from_trainer(&t, true).save(&path).unwrap();
    let loaded = ModelCheckpoint::load(&path).unwrap();
    assert_eq!(loaded.vocab, v);
    assert_eq!(loaded.global_step, 1);
    let b = toy_batch(&v);
    let (a, _) = t.model.forward::<ChaCha8Rng>(&b, None).unwrap();
    let (c, _) = loaded.model.forward::<ChaCha8Rng>(&b, None).unwrap();
    assert_eq!(a.logits.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), c.logits.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    // Resumed training continues identically.
    let mut resumed = loaded.into_trainer(OptimizerConfig::default()).unwrap();
    let l1 = t.train_step(&b).unwrap().loss;
    let l2 = resumed.train_step(&b).unwrap().loss;
    assert_eq!(l1.to_bits(), l2.to_bits());
}

#[test]
fn checkpoint_errors() {
    let v = toy_vocab();
    let t = Trainer::new(small_cfg(), v, OptimizerConfig::default(), 2).unwrap();
    let bytes = ModelCheckpoint::from_trainer(&t, false).to_bytes().unwrap();

    let mut wrong_version = bytes.clone();
    wrong_version[8..12].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(ModelCheckpoint::from_bytes(&wrong_version), Err(ModelError::Version { found: 99, .. })));

    let truncated = &bytes[..bytes.len() - 10];
    assert!(matches!(ModelCheckpoint::from_bytes(truncated), Err(ModelError::Truncated(_))));

    // Rewrite the manifest so one tensor claims the wrong shape.
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let mut manifest: serde_json::Value = serde_json::from_slice(&bytes[20..20 + mlen]).unwrap();
    manifest["tensors"][0]["shape"][0] = serde_json::json!(3);
    let json = serde_json::to_vec(&manifest).unwrap();
    let mut bad = bytes[..12].to_vec();
    bad.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bad.extend_from_slice(&json);
    bad.extend_from_slice(&bytes[20 + mlen..]);
    assert!(matches!(ModelCheckpoint::from_bytes(&bad), Err(ModelError::Shape { .. })));
}
