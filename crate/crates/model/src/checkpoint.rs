//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `PUNERCKP`, little-endian `u32` format version,
//! little-endian `u64` manifest length, UTF-8 JSON manifest, then raw
//! little-endian `f32` tensor data in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, OptimizerConfig};
use crate::error::{ModelError, Result};
use crate::optim::AdamW;
use crate::train::Trainer;
use crate::transformer::Seq2Seq;
use crate::vocab::Vocab;

pub const MAGIC: &[u8; 8] = b"PUNERCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the data section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub config: OptimizerConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub global_step: u64,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub optimizer: Option<OptimizerManifest>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub model: Seq2Seq<f32>,
    pub vocab: Vocab,
    pub global_step: u64,
    pub seed: u64,
    pub optimizer: Option<AdamW<f32>>,
}

impl ModelCheckpoint {
    pub fn from_trainer(t: &Trainer, with_optimizer: bool) -> Self {
        Self {
            model: t.model.clone(),
            vocab: t.vocab.clone(),
            global_step: t.step(),
            seed: t.seed,
            optimizer: with_optimizer.then(|| t.optimizer.clone()),
        }
    }

    /// Resumes training; falls back to a fresh optimizer when none was saved.
    pub fn into_trainer(self, fresh: OptimizerConfig) -> Result<Trainer> {
        match self.optimizer {
            Some(opt) => Ok(Trainer { model: self.model, vocab: self.vocab, optimizer: opt, seed: self.seed }),
            None => Trainer::from_model(self.model, self.vocab, fresh, self.seed),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut data: Vec<f32> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, values: &[f32]| {
            tensors.push(TensorEntry { name, shape, offset: data.len() });
            data.extend_from_slice(values);
        };
        for p in self.model.store().params() {
            push(p.name.clone(), p.shape.clone(), &p.value);
        }
        if let Some(opt) = &self.optimizer {
            for (i, p) in self.model.store().params().iter().enumerate() {
                push(format!("optimizer.m.{}", p.name), p.shape.clone(), &opt.m[i]);
                push(format!("optimizer.v.{}", p.name), p.shape.clone(), &opt.v[i]);
            }
        }
        let manifest = Manifest {
            config: self.model.config().clone(),
            vocab: self.vocab.symbols().to_vec(),
            global_step: self.global_step,
            seed: self.seed,
            tensors,
            optimizer: self
                .optimizer
                .as_ref()
                .map(|o| OptimizerManifest { config: o.config.clone(), step: o.step }),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| ModelError::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(ModelError::Truncated("header shorter than 20 bytes".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(ModelError::Version { found: version, expected: VERSION });
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = 20usize
            .checked_add(mlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| ModelError::Truncated("manifest extends past end of file".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[20..data_start]).map_err(|e| ModelError::Format(e.to_string()))?;
        let vocab = Vocab::from_symbols(manifest.vocab.clone())
            .ok_or_else(|| ModelError::Format("vocabulary must begin with the special tokens".into()))?;
        let raw = &bytes[data_start..];
        if raw.len() % 4 != 0 {
            return Err(ModelError::Truncated("data section is not a whole number of f32 values".into()));
        }
        let n_avail = raw.len() / 4;
        let read = |e: &TensorEntry| -> Result<Vec<f32>> {
            let n: usize = e.shape.iter().product();
            let end = e.offset + n;
            if end > n_avail {
                return Err(ModelError::Truncated(format!("tensor `{}` needs {end} values, file has {n_avail}", e.name)));
            }
            Ok(raw[e.offset * 4..end * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect())
        };
        let find = |name: &str| manifest.tensors.iter().find(|t| t.name == name);

        let mut model = Seq2Seq::<f32>::skeleton(manifest.config.clone(), vocab.len())?;
        let expected: usize = model.store().params().iter().map(|p| p.numel()).sum();
        for p in model.store_mut().params_mut() {
            let entry = find(&p.name).ok_or_else(|| ModelError::Shape {
                name: p.name.clone(),
                detail: "missing from manifest".into(),
            })?;
            if entry.shape != p.shape {
                return Err(ModelError::Shape {
                    name: p.name.clone(),
                    detail: format!("manifest shape {:?}, configuration implies {:?}", entry.shape, p.shape),
                });
            }
            p.value = read(entry)?;
        }
        let param_entries = manifest.tensors.iter().filter(|t| !t.name.starts_with("optimizer.")).count();
        if param_entries != model.store().params().len() {
            return Err(ModelError::Shape {
                name: "<manifest>".into(),
                detail: format!("{param_entries} parameter tensors listed, {} expected ({expected} values)", model.store().params().len()),
            });
        }
        let optimizer = match &manifest.optimizer {
            None => None,
            Some(om) => {
                let mut opt = AdamW::new(om.config.clone(), model.store());
                opt.step = om.step;
                for (i, p) in model.store().params().iter().enumerate() {
                    for (prefix, slot) in [("optimizer.m.", &mut opt.m[i]), ("optimizer.v.", &mut opt.v[i])] {
                        let name = format!("{prefix}{}", p.name);
                        let e = find(&name).ok_or_else(|| ModelError::Shape {
                            name: name.clone(),
                            detail: "missing optimizer tensor".into(),
                        })?;
                        if e.shape != p.shape {
                            return Err(ModelError::Shape { name, detail: "optimizer state shape mismatch".into() });
                        }
                        *slot = read(e)?;
                    }
                }
                Some(opt)
            }
        };
        Ok(Self { model, vocab, global_step: manifest.global_step, seed: manifest.seed, optimizer })
    }

    /// Writes via a temporary file and rename so readers never see a partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
