//! Experiment plans: what to train on, how long, and with which seeds.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use punner_core::corpus::{default_grammars, synthetic_registry};
use punner_core::evalkit::MatchMode;
use punner_core::prompting::{PromptStrategy, StrategyKind};
use punner_core::sampler::SamplingKind;
use punner_core::schema::{load_registry, NameStyle, Registry};
use punner_core::Codec;
use punner_model::{ModelConfig, OptimizerConfig};

use crate::data::{synthetic_suite, Corpus, FileCorpus, SplitSizes};
use crate::error::{HarnessError, Result};
use crate::finetune::{EvalSettings, Metric};

pub const DEFAULT_SEEDS: [u64; 3] = [11, 23, 47];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    /// The bundled grammars with the synthetic registry.
    Synthetic { sizes: Vec<SplitSizes>, seed: u64 },
    Files { registry: Option<PathBuf>, corpora: Vec<FileCorpus> },
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic { sizes: vec![SplitSizes { train: 1500, dev: 100, test: 200 }; 3], seed: 7 }
    }
}

/// How the fine-tuning checkpoint is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Highest mean dev score across datasets, earliest step on ties.
    #[default]
    BestMeanDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptSettings {
    pub steps: u64,
    pub eval_every: u64,
    pub dev_limit: usize,
    /// Snapshots kept for the step ablation.
    pub candidates: Vec<u64>,
    pub peak_lr: Option<f64>,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        Self { steps: 0, eval_every: 100, dev_limit: 100, candidates: Vec::new(), peak_lr: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub id: String,
    pub corpora: CorpusSource,
    pub name_style: NameStyle,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub strategy: PromptStrategy,
    pub sampling: SamplingKind,
    pub adapt: AdaptSettings,
    /// Fine-tuning steps per corpus. A run over `n` corpora gets `n` times
    /// this many steps.
    pub budget: u64,
    pub eval_every: u64,
    pub eval: EvalSettings,
    /// Beam width for the final evaluation on held-out data.
    pub test_beam: usize,
    pub seeds: Vec<u64>,
    pub selection: SelectionRule,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            id: "synthetic".into(),
            corpora: CorpusSource::default(),
            name_style: NameStyle::Alias,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            strategy: PromptStrategy::new(StrategyKind::DatasetDependent),
            sampling: SamplingKind::Proportional,
            adapt: AdaptSettings::default(),
            budget: 500,
            eval_every: 250,
            eval: EvalSettings { dev_limit: 100, beam: 1, match_mode: MatchMode::Surface, metric: Metric::Micro },
            test_beam: 1,
            seeds: DEFAULT_SEEDS.to_vec(),
            selection: SelectionRule::BestMeanDev,
        }
    }
}

/// Corpora and codec resolved from a plan.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub codec: Codec,
    pub corpora: Vec<Corpus>,
}

impl ExperimentPlan {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let plan: Self = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return Err(HarnessError::plan("plan id must be a non-empty path component"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::plan("at least one seed is required"));
        }
        if self.budget == 0 {
            return Err(HarnessError::plan("budget must be positive"));
        }
        if self.eval.beam == 0 || self.test_beam == 0 {
            return Err(HarnessError::plan("beam widths must be at least 1"));
        }
        self.model.validate()?;
        let n = match &self.corpora {
            CorpusSource::Synthetic { sizes, .. } => sizes.len(),
            CorpusSource::Files { corpora, .. } => corpora.len(),
        };
        if n == 0 {
            return Err(HarnessError::plan("the plan names no corpora"));
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<Registry> {
        Ok(match &self.corpora {
            CorpusSource::Synthetic { .. } => synthetic_registry(),
            CorpusSource::Files { registry: Some(p), .. } => load_registry(p)?,
            CorpusSource::Files { registry: None, .. } => Registry::bundled(),
        })
    }

    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let registry = Arc::new(self.registry()?);
        let corpora = match &self.corpora {
            CorpusSource::Synthetic { sizes, seed } => {
                let grammars = default_grammars();
                if sizes.len() > grammars.len() {
                    return Err(HarnessError::plan(format!("only {} synthetic grammars exist", grammars.len())));
                }
                synthetic_suite(&grammars[..sizes.len()], &registry, sizes, *seed)?
            }
            CorpusSource::Files { corpora, .. } => corpora.iter().map(|c| c.load(&registry)).collect::<Result<_>>()?,
        };
        Ok(Resolved { codec: Codec::new(registry, self.name_style), corpora })
    }

    /// Total steps for a run over `n` corpora.
    pub fn steps_for(&self, n: usize) -> u64 {
        self.budget * n as u64
    }

    /// Optimizer settings with the schedule fitted to `steps`.
    pub fn optimizer_for(&self, steps: u64, peak_lr: Option<f64>) -> OptimizerConfig {
        let mut o = self.optimizer.clone();
        o.total_steps = steps;
        o.warmup_steps = o.warmup_steps.min(steps);
        if let Some(lr) = peak_lr {
            o.peak_lr = lr;
        }
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_json_round_trips_and_fills_defaults() {
        let p = ExperimentPlan::default();
        let back: ExperimentPlan = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
        let sparse: ExperimentPlan = serde_json::from_str(r#"{"id":"x","budget":10}"#).unwrap();
        assert_eq!(sparse.seeds, DEFAULT_SEEDS);
        assert_eq!(sparse.budget, 10);
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let mut p = ExperimentPlan { seeds: vec![], ..Default::default() };
        assert!(p.validate().is_err());
        p.seeds = vec![1];
        p.budget = 0;
        assert!(p.validate().is_err());
        p.budget = 1;
        p.corpora = CorpusSource::Synthetic { sizes: vec![], seed: 1 };
        assert!(p.validate().is_err());
    }

    #[test]
    fn schedule_fits_the_run() {
        let p = ExperimentPlan::default();
        let o = p.optimizer_for(50, Some(1e-3));
        assert_eq!((o.total_steps, o.warmup_steps, o.peak_lr), (50, 50, 1e-3));
    }
}
