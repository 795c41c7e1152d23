//! Glue between the codec and the character-level model: vocabulary,
//! example encoding and on-demand recognition.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use punner_core::codec::{Codec, ParseMode, TypedPair};
use punner_core::corpus::{AnnotatedSentence, Mention};
use punner_core::evalkit::{Evaluation, MatchMode};
use punner_core::ground_pairs;
use punner_core::schema::{NameStyle, Registry};
use punner_model::vocab::EOS_ID;
use punner_model::{decode, Batch, DecodeMode, ModelCheckpoint, ModelScorer, Seq2Seq, Vocab};

use crate::error::{HarnessError, Result};

/// Characters that appear in every target besides payloads.
const TARGET_SYMBOLS: &str = "(),:NULL";

/// Vocabulary over the texts plus every registry name the codec can render.
pub fn build_vocab<'a>(codec: &Codec, texts: impl IntoIterator<Item = &'a str>) -> Vocab {
    let registry = codec.registry();
    let mut all: Vec<String> = vec![TARGET_SYMBOLS.to_string()];
    all.extend(registry.entity_types().iter().map(|e| format!("<{}>", registry.display_name(e, codec.style()))));
    all.extend(texts.into_iter().map(str::to_string));
    Vocab::build(all.iter().map(String::as_str))
}

/// Corpus text plus every sentence, for vocabulary building.
pub fn corpus_texts<'a>(sentences: impl IntoIterator<Item = &'a AnnotatedSentence>) -> impl Iterator<Item = &'a str> {
    sentences.into_iter().map(|s| s.text.as_str())
}

/// Token ids for a source string and a label sequence ending in `<eos>`.
pub fn encode_pair(vocab: &Vocab, source: &str, target: &str) -> (Vec<u32>, Vec<u32>) {
    let src = vocab.encode(source);
    let mut tgt = vocab.encode(target);
    tgt.push(EOS_ID);
    (src, tgt)
}

/// Appends an example if it fits the model's length limits; returns whether
/// it was kept.
pub fn push_example(batch: &mut Batch, model: &Seq2Seq<f32>, vocab: &Vocab, source: &str, target: &str) -> bool {
    let (src, tgt) = encode_pair(vocab, source, target);
    let cfg = model.config();
    if src.is_empty() || src.len() > cfg.max_source_len || tgt.len() > cfg.max_target_len {
        return false;
    }
    batch.sources.push(src);
    batch.targets.push(tgt);
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recognition {
    pub raw_target: String,
    /// The generation satisfies the target grammar exactly.
    pub parse_valid: bool,
    /// Leniently parsed pairs restricted to the prompted types, `NULL`s
    /// included.
    pub pairs: Vec<TypedPair>,
    pub mentions: Vec<Mention>,
    pub ungroundable: Vec<TypedPair>,
    /// Prompted types answered only with `NULL`.
    pub null_types: Vec<String>,
    /// Anchors of any kind found by the lenient parser.
    pub anchors: usize,
    pub dropped: usize,
}

/// A model bound to its vocabulary and codec.
#[derive(Debug, Clone, Copy)]
pub struct Recognizer<'a> {
    pub model: &'a Seq2Seq<f32>,
    pub vocab: &'a Vocab,
    pub codec: &'a Codec,
}

impl<'a> Recognizer<'a> {
    pub fn new(model: &'a Seq2Seq<f32>, vocab: &'a Vocab, codec: &'a Codec) -> Self {
        Self { model, vocab, codec }
    }

    pub fn generate(&self, source: &str, mode: DecodeMode) -> Result<String> {
        let ids = self.vocab.encode(source);
        let max = self.model.config().max_source_len;
        if ids.len() > max {
            return Err(HarnessError::Input(format!("input is {} tokens long; the model accepts at most {max}", ids.len())));
        }
        let scorer = ModelScorer::new(self.model, &ids)?;
        let hyp = decode(&scorer, mode, self.model.config().max_target_len)?;
        Ok(self.vocab.decode(&hyp.tokens))
    }

    /// Serialize, decode, parse leniently, ground.
    pub fn recognize(&self, text: &str, types: &[String], mode: DecodeMode) -> Result<Recognition> {
        let source = self.codec.serialize_input(types, text)?;
        let raw = self.generate(&source, mode)?;
        Ok(self.interpret(text, types, raw))
    }

    pub fn interpret(&self, text: &str, types: &[String], raw: String) -> Recognition {
        let parse_valid = self.codec.parse_target(&raw, types, ParseMode::Strict).is_ok();
        let parsed = self.codec.parse_target(&raw, types, ParseMode::Lenient).expect("types are non-empty");
        let grounding = ground_pairs(text, &parsed.pairs);
        let null_types = types
            .iter()
            .filter(|t| {
                parsed.pairs.iter().any(|p| &p.type_id == *t && p.is_null())
                    && !parsed.pairs.iter().any(|p| &p.type_id == *t && !p.is_null())
            })
            .cloned()
            .collect();
        Recognition {
            raw_target: raw,
            parse_valid,
            pairs: parsed.pairs,
            mentions: grounding.mentions,
            ungroundable: grounding.ungroundable,
            null_types,
            anchors: parsed.anchors,
            dropped: parsed.dropped,
        }
    }

    /// Scores generations for `sentences` prompted with `types`.
    pub fn evaluate(&self, sentences: &[AnnotatedSentence], types: &[String], mode: DecodeMode, match_mode: MatchMode) -> Result<Evaluation> {
        let mut eval = Evaluation::default();
        for s in sentences {
            let r = self.recognize(&s.text, types, mode)?;
            let gold: Vec<Mention> = s.mentions.iter().filter(|m| types.contains(&m.type_id)).cloned().collect();
            let pred = if r.anchors == 0 { Vec::new() } else { r.pairs };
            eval.add(&pred, &gold, &s.text, match_mode, r.parse_valid);
        }
        Ok(eval)
    }
}

/// Path of the registry/name-style file stored next to a checkpoint.
pub fn codec_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".codec.json");
    checkpoint.with_file_name(name)
}

#[derive(Serialize, Deserialize)]
struct CodecFile {
    name_style: NameStyle,
    registry: serde_json::Value,
}

/// Saves a checkpoint together with the codec it was trained with.
pub fn save_model(path: &Path, ckpt: &ModelCheckpoint, codec: &Codec) -> Result<()> {
    ckpt.save(path)?;
    let file = CodecFile { name_style: codec.style(), registry: serde_json::from_str(&codec.registry().to_json_string())? };
    std::fs::write(codec_path(path), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// A checkpoint loaded for inference.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: Seq2Seq<f32>,
    pub vocab: Vocab,
    pub codec: Codec,
}

impl LoadedModel {
    pub fn from_checkpoint(ckpt: ModelCheckpoint, codec: Codec) -> Self {
        Self { model: ckpt.model, vocab: ckpt.vocab, codec }
    }

    /// Loads a checkpoint written by [`save_model`].
    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = ModelCheckpoint::load(path)?;
        let side = codec_path(path);
        let text = std::fs::read_to_string(&side)
            .map_err(|e| HarnessError::Input(format!("cannot read codec file {}: {e}", side.display())))?;
        let file: CodecFile = serde_json::from_str(&text)?;
        let registry = Registry::from_json_str(&file.registry.to_string())?;
        Ok(Self::from_checkpoint(ckpt, Codec::new(Arc::new(registry), file.name_style)))
    }

    pub fn recognizer(&self) -> Recognizer<'_> {
        Recognizer::new(&self.model, &self.vocab, &self.codec)
    }
}
