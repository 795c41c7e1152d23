//! Autoregressive greedy and beam decoding.
//!
//! Hypotheses are ranked by length-normalised log-probability: the sum of
//! token log-probabilities divided by the number of generated tokens
//! (the terminating `<eos>` included).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::transformer::{DecoderState, EncodedSource, Seq2Seq};
use crate::vocab::{BOS_ID, EOS_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

impl DecodeMode {
    pub fn from_width(width: usize) -> Self {
        if width <= 1 {
            DecodeMode::Greedy
        } else {
            DecodeMode::Beam(width)
        }
    }
}

/// Something that yields next-token logits given a growing prefix.
pub trait StepScorer {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn bos(&self) -> u32;
    fn eos(&self) -> u32;
    fn start(&self) -> Self::State;
    /// Feeds `token` and returns logits over the next token.
    fn step(&self, state: &mut Self::State, token: u32) -> Result<Vec<f32>>;
}

/// Binds a model to one encoded source.
pub struct ModelScorer<'a> {
    pub model: &'a Seq2Seq<f32>,
    pub source: EncodedSource<f32>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Seq2Seq<f32>, source_ids: &[u32]) -> Result<Self> {
        Ok(Self { model, source: model.encode(source_ids)? })
    }
}

impl StepScorer for ModelScorer<'_> {
    type State = DecoderState<f32>;

    fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }
    fn bos(&self) -> u32 {
        BOS_ID
    }
    fn eos(&self) -> u32 {
        EOS_ID
    }
    fn start(&self) -> Self::State {
        self.model.start_state()
    }
    fn step(&self, state: &mut Self::State, token: u32) -> Result<Vec<f32>> {
        self.model.decode_step(&self.source, state, token)
    }
}

/// A finished (or truncated) generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, including the final `<eos>` when one was produced.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
}

impl Hypothesis {
    pub fn score(&self) -> f64 {
        normalized(self.log_prob, self.tokens.len())
    }
}

pub fn normalized(log_prob: f64, len: usize) -> f64 {
    if len == 0 {
        0.0
    } else {
        log_prob / len as f64
    }
}

fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = max + logits.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x as f64 - lse).collect()
}

/// Lowest id wins among equal maxima.
fn argmax(lp: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in lp.iter().enumerate() {
        if v > lp[best] {
            best = i;
        }
    }
    best
}

pub fn greedy<S: StepScorer>(scorer: &S, max_len: usize) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(ModelError::Config("max_len must be >= 1".into()));
    }
    let mut state = scorer.start();
    let mut token = scorer.bos();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < max_len {
        let lp = log_softmax(&scorer.step(&mut state, token)?);
        let next = argmax(&lp);
        log_prob += lp[next];
        tokens.push(next as u32);
        if next as u32 == scorer.eos() {
            break;
        }
        token = next as u32;
    }
    Ok(Hypothesis { tokens, log_prob })
}

struct Live<St> {
    tokens: Vec<u32>,
    log_prob: f64,
    state: St,
}

/// Beam search. The greedy hypothesis is always among the final
/// candidates, so the result never scores below greedy decoding.
pub fn beam<S: StepScorer>(scorer: &S, width: usize, max_len: usize) -> Result<Hypothesis> {
    if width == 0 {
        return Err(ModelError::Config("beam width must be >= 1".into()));
    }
    let greedy_hyp = greedy(scorer, max_len)?;
    if width == 1 {
        return Ok(greedy_hyp);
    }
    let eos = scorer.eos();
    let mut live = vec![Live { tokens: Vec::new(), log_prob: 0.0, state: scorer.start() }];
    let mut finished: Vec<Hypothesis> = vec![greedy_hyp];
    for depth in 0..max_len {
        // (score, parent, token, log_prob)
        let mut cands: Vec<(f64, usize, u32, f64)> = Vec::with_capacity(live.len() * scorer.vocab_size());
        let mut stepped = Vec::with_capacity(live.len());
        for (pi, hyp) in live.iter().enumerate() {
            let mut st = hyp.state.clone();
            let prev = hyp.tokens.last().copied().unwrap_or(scorer.bos());
            let lp = log_softmax(&scorer.step(&mut st, prev)?);
            for (tok, &l) in lp.iter().enumerate() {
                let total = hyp.log_prob + l;
                cands.push((normalized(total, depth + 1), pi, tok as u32, total));
            }
            stepped.push(st);
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1))
        });
        let mut next = Vec::with_capacity(width);
        let mut taken = 0;
        for &(_, pi, tok, total) in &cands {
            if taken == width {
                break;
            }
            taken += 1;
            let mut tokens = live[pi].tokens.clone();
            tokens.push(tok);
            if tok == eos || depth + 1 == max_len {
                finished.push(Hypothesis { tokens, log_prob: total });
            } else {
                next.push(Live { tokens, log_prob: total, state: stepped[pi].clone() });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    let mut best = 0;
    for (i, h) in finished.iter().enumerate() {
        if h.score() > finished[best].score() {
            best = i;
        }
    }
    Ok(finished.swap_remove(best))
}

pub fn decode<S: StepScorer>(scorer: &S, mode: DecodeMode, max_len: usize) -> Result<Hypothesis> {
    match mode {
        DecodeMode::Greedy => greedy(scorer, max_len),
        DecodeMode::Beam(w) => beam(scorer, w, max_len),
    }
}
