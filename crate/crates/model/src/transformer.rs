//! Pre-norm encoder-decoder transformer over character ids.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::float::Float;
use crate::layers::{
    add_in_place, apply_mask, dropout, Attention, AttnCache, Fault, FeedForward, FfnCache, Init, LayerNorm, Linear,
    LnCache, Mask,
};
use crate::linalg::log_sum_exp;
use crate::params::{Grads, ParamId, ParamStore};
use crate::vocab::{BOS_ID, PAD_ID};

/// Source/label pairs. Labels end with `<eos>`; trailing `<pad>` ids are
/// ignored on both sides.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Batch {
    pub sources: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Pads every sequence with `<pad>` to the batch maximum.
    pub fn padded(&self) -> Batch {
        let pad = |seqs: &[Vec<u32>]| {
            let max = seqs.iter().map(Vec::len).max().unwrap_or(0);
            seqs.iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.resize(max, PAD_ID);
                    s
                })
                .collect()
        };
        Batch { sources: pad(&self.sources), targets: pad(&self.targets) }
    }
}

fn unpadded(seq: &[u32]) -> &[u32] {
    let end = seq.iter().rposition(|&t| t != PAD_ID).map_or(0, |p| p + 1);
    &seq[..end]
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    ffn: FeedForward,
}

/// The encoder-decoder network, generic over precision.
#[derive(Debug, Clone)]
pub struct Seq2Seq<T> {
    config: ModelConfig,
    vocab_size: usize,
    store: ParamStore<T>,
    tok_emb: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    enc: Vec<EncoderLayer>,
    dec: Vec<DecoderLayer>,
    enc_norm: LayerNorm,
    dec_norm: LayerNorm,
    out: Linear,
    fault: Option<Fault>,
}

/// Output of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub loss: T,
    /// Packed `tokens x vocab` logits.
    pub logits: Vec<T>,
    /// Row offsets into `logits` per example.
    pub offsets: Vec<usize>,
    pub vocab: usize,
}

impl<T: Float> ForwardOutput<T> {
    pub fn batch(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn max_len(&self) -> usize {
        self.offsets.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    /// `(batch, max target length, vocab)` tensor; pad positions are zero.
    pub fn padded_logits(&self) -> (Vec<T>, [usize; 3]) {
        let (b, t, v) = (self.batch(), self.max_len(), self.vocab);
        let mut out = vec![T::zero(); b * t * v];
        for i in 0..b {
            let rows = self.offsets[i]..self.offsets[i + 1];
            let n = rows.len();
            out[i * t * v..i * t * v + n * v].copy_from_slice(&self.logits[rows.start * v..rows.end * v]);
        }
        (out, [b, t, v])
    }
}

struct EncCache<T> {
    ln1: LnCache<T>,
    attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    ffn: FfnCache<T>,
    drop2: Option<Vec<T>>,
}

struct DecCache<T> {
    ln1: LnCache<T>,
    self_attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    cross: AttnCache<T>,
    drop2: Option<Vec<T>>,
    ln3: LnCache<T>,
    ffn: FfnCache<T>,
    drop3: Option<Vec<T>>,
}

/// Everything the backward pass needs from a forward pass.
pub struct Tape<T> {
    src_ids: Vec<u32>,
    src_seg: Vec<usize>,
    dec_ids: Vec<u32>,
    tgt_seg: Vec<usize>,
    labels: Vec<u32>,
    enc_drop: Option<Vec<T>>,
    enc_layers: Vec<EncCache<T>>,
    enc_norm: LnCache<T>,
    dec_drop: Option<Vec<T>>,
    dec_layers: Vec<DecCache<T>>,
    dec_norm: LnCache<T>,
    dec_final: Vec<T>,
    probs: Vec<T>,
}

/// Encoder output plus per-layer cross-attention keys and values for
/// incremental decoding.
#[derive(Debug, Clone)]
pub struct EncodedSource<T> {
    pub len: usize,
    cross_kv: Vec<(Vec<T>, Vec<T>)>,
}

/// Per-hypothesis decoder cache.
#[derive(Debug, Clone)]
pub struct DecoderState<T> {
    pub pos: usize,
    self_kv: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Float> Seq2Seq<T> {
    /// Builds a freshly initialised network (normal init, std from config).
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        Self::build(config, vocab_size, Init::Normal { std, rng: &mut rng })
    }

    /// All-zero network of the right shape, to be filled from a checkpoint.
    pub fn skeleton(config: ModelConfig, vocab_size: usize) -> Result<Self> {
        Self::build::<ChaCha8Rng>(config, vocab_size, Init::Zeros)
    }

    fn build<R: Rng>(config: ModelConfig, vocab_size: usize, mut init: Init<'_, R>) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(ModelError::Empty("vocabulary"));
        }
        let d = config.d_model;
        let mut store = ParamStore::new();
        let tok_emb = init.weight(&mut store, "embed.token", &[vocab_size, d]);
        let enc_pos = init.weight(&mut store, "encoder.position", &[config.max_source_len, d]);
        let dec_pos = init.weight(&mut store, "decoder.position", &[config.max_target_len, d]);
        let mut enc = Vec::new();
        for i in 0..config.n_encoder_layers {
            let p = format!("encoder.{i}");
            enc.push(EncoderLayer {
                ln1: LayerNorm::new(&mut store, &format!("{p}.ln1"), d),
                attn: Attention::new(&mut store, &mut init, &format!("{p}.self_attn"), d, config.n_heads),
                ln2: LayerNorm::new(&mut store, &format!("{p}.ln2"), d),
                ffn: FeedForward::new(&mut store, &mut init, &format!("{p}.ffn"), d, config.d_ff),
            });
        }
        let enc_norm = LayerNorm::new(&mut store, "encoder.final_norm", d);
        let mut dec = Vec::new();
        for i in 0..config.n_decoder_layers {
            let p = format!("decoder.{i}");
            dec.push(DecoderLayer {
                ln1: LayerNorm::new(&mut store, &format!("{p}.ln1"), d),
                self_attn: Attention::new(&mut store, &mut init, &format!("{p}.self_attn"), d, config.n_heads),
                ln2: LayerNorm::new(&mut store, &format!("{p}.ln2"), d),
                cross_attn: Attention::new(&mut store, &mut init, &format!("{p}.cross_attn"), d, config.n_heads),
                ln3: LayerNorm::new(&mut store, &format!("{p}.ln3"), d),
                ffn: FeedForward::new(&mut store, &mut init, &format!("{p}.ffn"), d, config.d_ff),
            });
        }
        let dec_norm = LayerNorm::new(&mut store, "decoder.final_norm", d);
        let out = Linear::new(&mut store, &mut init, "output", d, vocab_size);
        Ok(Self { config, vocab_size, store, tok_emb, enc_pos, dec_pos, enc, dec, enc_norm, dec_norm, out, fault: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Installs a deliberate backward-pass fault (verification use only).
    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    /// Same network in another precision.
    pub fn cast<U: Float>(&self) -> Seq2Seq<U> {
        Seq2Seq {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            store: self.store.cast(),
            tok_emb: self.tok_emb,
            enc_pos: self.enc_pos,
            dec_pos: self.dec_pos,
            enc: self.enc.clone(),
            dec: self.dec.clone(),
            enc_norm: self.enc_norm.clone(),
            dec_norm: self.dec_norm.clone(),
            out: self.out.clone(),
            fault: self.fault,
        }
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            Some(&id) => Err(ModelError::TokenOutOfRange { id, vocab: self.vocab_size }),
            None => Ok(()),
        }
    }

    fn embed(&self, ids: &[u32], seg: &[usize], pos: ParamId) -> Vec<T> {
        let d = self.config.d_model;
        let emb = self.store.get(self.tok_emb);
        let pe = self.store.get(pos);
        let mut x = vec![T::zero(); ids.len() * d];
        for b in 0..seg.len() - 1 {
            for (p, r) in (seg[b]..seg[b + 1]).enumerate() {
                let id = ids[r] as usize;
                let row = &mut x[r * d..(r + 1) * d];
                for j in 0..d {
                    row[j] = emb[id * d + j] + pe[p * d + j];
                }
            }
        }
        x
    }

    fn embed_backward(&self, grads: &mut Grads<T>, ids: &[u32], seg: &[usize], pos: ParamId, dx: &[T]) {
        let d = self.config.d_model;
        {
            let ge = grads.get_mut(self.tok_emb);
            for (r, &id) in ids.iter().enumerate() {
                let id = id as usize;
                for j in 0..d {
                    ge[id * d + j] += dx[r * d + j];
                }
            }
        }
        let gp = grads.get_mut(pos);
        for b in 0..seg.len() - 1 {
            for (p, r) in (seg[b]..seg[b + 1]).enumerate() {
                for j in 0..d {
                    gp[p * d + j] += dx[r * d + j];
                }
            }
        }
    }

    /// Batched teacher-forced forward pass. Passing an rng enables dropout.
    pub fn forward<R: Rng>(&self, batch: &Batch, mut rng: Option<&mut R>) -> Result<(ForwardOutput<T>, Tape<T>)> {
        if batch.sources.is_empty() {
            return Err(ModelError::Empty("batch"));
        }
        if batch.sources.len() != batch.targets.len() {
            return Err(ModelError::Config("sources and targets differ in count".into()));
        }
        let cfg = &self.config;
        let p = cfg.dropout;
        let mut src_ids = Vec::new();
        let mut src_seg = vec![0];
        let mut dec_ids = Vec::new();
        let mut labels = Vec::new();
        let mut tgt_seg = vec![0];
        for (i, (s, t)) in batch.sources.iter().zip(&batch.targets).enumerate() {
            let s = unpadded(s);
            let t = unpadded(t);
            if s.is_empty() {
                return Err(ModelError::Empty("source sequence"));
            }
            if t.is_empty() {
                return Err(ModelError::Empty("target sequence"));
            }
            self.check_ids(s)?;
            self.check_ids(t)?;
            if s.len() > cfg.max_source_len {
                return Err(ModelError::TooLong { side: "source", index: i, len: s.len(), max: cfg.max_source_len });
            }
            if t.len() > cfg.max_target_len {
                return Err(ModelError::TooLong { side: "target", index: i, len: t.len(), max: cfg.max_target_len });
            }
            src_ids.extend_from_slice(s);
            src_seg.push(src_ids.len());
            dec_ids.push(BOS_ID);
            dec_ids.extend_from_slice(&t[..t.len() - 1]);
            labels.extend_from_slice(t);
            tgt_seg.push(labels.len());
        }

        // Encoder.
        let mut x = self.embed(&src_ids, &src_seg, self.enc_pos);
        let enc_drop = dropout(&mut x, p, rng.as_deref_mut());
        let ns = src_ids.len();
        let mut enc_layers = Vec::with_capacity(self.enc.len());
        for layer in &self.enc {
            let (h, ln1) = layer.ln1.forward(&self.store, &x);
            let (mut y, attn) = layer.attn.forward(&self.store, h, &src_seg, None, &src_seg, Mask::Full);
            let drop1 = dropout(&mut y, p, rng.as_deref_mut());
            add_in_place(&mut x, &y);
            let (h, ln2) = layer.ln2.forward(&self.store, &x);
            let (mut y, ffn) = layer.ffn.forward(&self.store, h, ns);
            let drop2 = dropout(&mut y, p, rng.as_deref_mut());
            add_in_place(&mut x, &y);
            enc_layers.push(EncCache { ln1, attn, drop1, ln2, ffn, drop2 });
        }
        let (enc_out, enc_norm) = self.enc_norm.forward(&self.store, &x);

        // Decoder.
        let nt = dec_ids.len();
        let mut x = self.embed(&dec_ids, &tgt_seg, self.dec_pos);
        let dec_drop = dropout(&mut x, p, rng.as_deref_mut());
        let mut dec_layers = Vec::with_capacity(self.dec.len());
        for layer in &self.dec {
            let (h, ln1) = layer.ln1.forward(&self.store, &x);
            let (mut y, self_attn) = layer.self_attn.forward(&self.store, h, &tgt_seg, None, &tgt_seg, Mask::Causal);
            let drop1 = dropout(&mut y, p, rng.as_deref_mut());
            add_in_place(&mut x, &y);
            let (h, ln2) = layer.ln2.forward(&self.store, &x);
            let (mut y, cross) =
                layer.cross_attn.forward(&self.store, h, &tgt_seg, Some(enc_out.clone()), &src_seg, Mask::Full);
            let drop2 = dropout(&mut y, p, rng.as_deref_mut());
            add_in_place(&mut x, &y);
            let (h, ln3) = layer.ln3.forward(&self.store, &x);
            let (mut y, ffn) = layer.ffn.forward(&self.store, h, nt);
            let drop3 = dropout(&mut y, p, rng.as_deref_mut());
            add_in_place(&mut x, &y);
            dec_layers.push(DecCache { ln1, self_attn, drop1, ln2, cross, drop2, ln3, ffn, drop3 });
        }
        let (dec_final, dec_norm) = self.dec_norm.forward(&self.store, &x);
        let logits = self.out.forward(&self.store, &dec_final, nt);

        let v = self.vocab_size;
        let mut probs = vec![T::zero(); logits.len()];
        let mut total = T::zero();
        for r in 0..nt {
            let row = &logits[r * v..(r + 1) * v];
            let lse = log_sum_exp(row);
            total += lse - row[labels[r] as usize];
            for j in 0..v {
                probs[r * v + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / T::lit(nt as f64);
        let out = ForwardOutput { loss, logits, offsets: tgt_seg.clone(), vocab: v };
        let tape = Tape {
            src_ids,
            src_seg,
            dec_ids,
            tgt_seg,
            labels,
            enc_drop,
            enc_layers,
            enc_norm,
            dec_drop,
            dec_layers,
            dec_norm,
            dec_final,
            probs,
        };
        Ok((out, tape))
    }

    /// Mean cross-entropy without dropout.
    pub fn loss(&self, batch: &Batch) -> Result<T> {
        Ok(self.forward::<ChaCha8Rng>(batch, None)?.0.loss)
    }

    /// Backpropagates the mean cross-entropy recorded on `tape`.
    pub fn backward(&self, tape: &Tape<T>) -> Grads<T> {
        let mut grads = self.store.zeros_like();
        let v = self.vocab_size;
        let nt = tape.labels.len();
        let inv_n = T::one() / T::lit(nt as f64);
        let mut dlogits = tape.probs.clone();
        for (r, &lab) in tape.labels.iter().enumerate() {
            dlogits[r * v + lab as usize] -= T::one();
        }
        for g in dlogits.iter_mut() {
            *g *= inv_n;
        }
        let dfinal = self.out.backward(&self.store, &mut grads, &tape.dec_final, &dlogits, nt);
        let mut dx = self.dec_norm.backward(&self.store, &mut grads, &tape.dec_norm, &dfinal);
        let mut d_enc = vec![T::zero(); tape.src_ids.len() * self.config.d_model];
        for (layer, c) in self.dec.iter().zip(&tape.dec_layers).rev() {
            let dy = apply_mask(&dx, &c.drop3);
            let dh = layer.ffn.backward(&self.store, &mut grads, &c.ffn, &dy, nt);
            add_in_place(&mut dx, &layer.ln3.backward(&self.store, &mut grads, &c.ln3, &dh));

            let dy = apply_mask(&dx, &c.drop2);
            let (dh, dkv) =
                layer.cross_attn.backward(&self.store, &mut grads, &c.cross, &dy, &tape.tgt_seg, &tape.src_seg, self.fault);
            add_in_place(&mut d_enc, &dkv.expect("cross-attention yields key/value grads"));
            add_in_place(&mut dx, &layer.ln2.backward(&self.store, &mut grads, &c.ln2, &dh));

            let dy = apply_mask(&dx, &c.drop1);
            let (dh, _) =
                layer.self_attn.backward(&self.store, &mut grads, &c.self_attn, &dy, &tape.tgt_seg, &tape.tgt_seg, self.fault);
            add_in_place(&mut dx, &layer.ln1.backward(&self.store, &mut grads, &c.ln1, &dh));
        }
        let dx = apply_mask(&dx, &tape.dec_drop);
        self.embed_backward(&mut grads, &tape.dec_ids, &tape.tgt_seg, self.dec_pos, &dx);

        let ns = tape.src_ids.len();
        let mut dx = self.enc_norm.backward(&self.store, &mut grads, &tape.enc_norm, &d_enc);
        for (layer, c) in self.enc.iter().zip(&tape.enc_layers).rev() {
            let dy = apply_mask(&dx, &c.drop2);
            let dh = layer.ffn.backward(&self.store, &mut grads, &c.ffn, &dy, ns);
            add_in_place(&mut dx, &layer.ln2.backward(&self.store, &mut grads, &c.ln2, &dh));

            let dy = apply_mask(&dx, &c.drop1);
            let (dh, _) = layer.attn.backward(&self.store, &mut grads, &c.attn, &dy, &tape.src_seg, &tape.src_seg, self.fault);
            add_in_place(&mut dx, &layer.ln1.backward(&self.store, &mut grads, &c.ln1, &dh));
        }
        let dx = apply_mask(&dx, &tape.enc_drop);
        self.embed_backward(&mut grads, &tape.src_ids, &tape.src_seg, self.enc_pos, &dx);
        grads
    }

    /// Runs the encoder (no dropout) and precomputes cross-attention keys
    /// and values for every decoder layer.
    pub fn encode(&self, source: &[u32]) -> Result<EncodedSource<T>> {
        let source = unpadded(source);
        if source.is_empty() {
            return Err(ModelError::Empty("source sequence"));
        }
        self.check_ids(source)?;
        if source.len() > self.config.max_source_len {
            return Err(ModelError::TooLong {
                side: "source",
                index: 0,
                len: source.len(),
                max: self.config.max_source_len,
            });
        }
        let n = source.len();
        let seg = [0, n];
        let mut x = self.embed(source, &seg, self.enc_pos);
        for layer in &self.enc {
            let (h, _) = layer.ln1.forward(&self.store, &x);
            let (y, _) = layer.attn.forward(&self.store, h, &seg, None, &seg, Mask::Full);
            add_in_place(&mut x, &y);
            let (h, _) = layer.ln2.forward(&self.store, &x);
            let (y, _) = layer.ffn.forward(&self.store, h, n);
            add_in_place(&mut x, &y);
        }
        let (enc_out, _) = self.enc_norm.forward(&self.store, &x);
        let cross_kv = self
            .dec
            .iter()
            .map(|l| (l.cross_attn.k.forward(&self.store, &enc_out, n), l.cross_attn.v.forward(&self.store, &enc_out, n)))
            .collect();
        Ok(EncodedSource { len: n, cross_kv })
    }

    pub fn start_state(&self) -> DecoderState<T> {
        DecoderState { pos: 0, self_kv: vec![(Vec::new(), Vec::new()); self.dec.len()] }
    }

    /// Feeds one decoder input token and returns next-token logits.
    pub fn decode_step(&self, enc: &EncodedSource<T>, state: &mut DecoderState<T>, token: u32) -> Result<Vec<T>> {
        self.check_ids(&[token])?;
        if state.pos >= self.config.max_target_len {
            return Err(ModelError::TooLong {
                side: "target",
                index: 0,
                len: state.pos + 1,
                max: self.config.max_target_len,
            });
        }
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let emb = self.store.get(self.tok_emb);
        let pe = self.store.get(self.dec_pos);
        let mut x: Vec<T> = (0..d).map(|j| emb[token as usize * d + j] + pe[state.pos * d + j]).collect();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        for (li, layer) in self.dec.iter().enumerate() {
            let (h, _) = layer.ln1.forward(&self.store, &x);
            let att = &layer.self_attn;
            let q = att.q.forward(&self.store, &h, 1);
            let (kc, vc) = &mut state.self_kv[li];
            kc.extend(att.k.forward(&self.store, &h, 1));
            vc.extend(att.v.forward(&self.store, &h, 1));
            let o = attend_one(&q, kc, vc, d, att.heads, scale);
            add_in_place(&mut x, &att.o.forward(&self.store, &o, 1));

            let (h, _) = layer.ln2.forward(&self.store, &x);
            let att = &layer.cross_attn;
            let q = att.q.forward(&self.store, &h, 1);
            let (kc, vc) = &enc.cross_kv[li];
            let o = attend_one(&q, kc, vc, d, att.heads, scale);
            add_in_place(&mut x, &att.o.forward(&self.store, &o, 1));

            let (h, _) = layer.ln3.forward(&self.store, &x);
            let (y, _) = layer.ffn.forward(&self.store, h, 1);
            add_in_place(&mut x, &y);
        }
        state.pos += 1;
        let (h, _) = self.dec_norm.forward(&self.store, &x);
        Ok(self.out.forward(&self.store, &h, 1))
    }
}

fn attend_one<T: Float>(q: &[T], k: &[T], v: &[T], d: usize, heads: usize, scale: T) -> Vec<T> {
    let dh = d / heads;
    let n = k.len() / d;
    let mut o = vec![T::zero(); d];
    let mut s = vec![T::zero(); n];
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        for (j, sj) in s.iter_mut().enumerate() {
            let kj = &k[j * d + h * dh..j * d + (h + 1) * dh];
            *sj = qh.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
        }
        crate::linalg::softmax_in_place(&mut s);
        for (j, &p) in s.iter().enumerate() {
            let vj = &v[j * d + h * dh..j * d + (h + 1) * dh];
            for (acc, &x) in o[h * dh..(h + 1) * dh].iter_mut().zip(vj) {
                *acc += p * x;
            }
        }
    }
    o
}
