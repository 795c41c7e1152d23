use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Network shape. Defaults are the desk-scale configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            d_ff: 512,
            dropout: 0.1,
            max_source_len: 192,
            max_target_len: 96,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// The two-layer, width-16 model used for gradient verification.
    pub fn verification() -> Self {
        Self {
            d_model: 16,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_ff: 32,
            dropout: 0.0,
            max_source_len: 16,
            max_target_len: 16,
            init_std: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.max_source_len == 0 || self.max_target_len == 0 {
            return Err(ModelError::Config("max lengths must be >= 1".into()));
        }
        if self.d_ff == 0 {
            return Err(ModelError::Config("d_ff must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} not in [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// AdamW with linear warmup and linear decay to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 3e-4,
            warmup_steps: 200,
            total_steps: 10_000,
            weight_decay: 0.01,
            clip_norm: 1.0,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(ModelError::Config(format!(
                "warmup ({}) exceeds total steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.peak_lr <= 0.0 || self.clip_norm <= 0.0 || self.total_steps == 0 {
            return Err(ModelError::Config("rates and step counts must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(ModelError::Config("weight decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate applied at 1-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return 0.0;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        self.peak_lr * (self.total_steps - step) as f64 / span
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_is_linear() {
        let c = OptimizerConfig { peak_lr: 1e-3, warmup_steps: 100, total_steps: 1000, ..Default::default() };
        assert_eq!(c.lr_at(50), 1e-3 * 50.0 / 100.0);
        assert_eq!(c.lr_at(100), 1e-3);
        assert!((c.lr_at(550) - 0.5e-3).abs() < 1e-15);
        assert_eq!(c.lr_at(1000), 0.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ModelConfig { d_model: 10, n_heads: 4, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { max_target_len: 0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { warmup_steps: 5, total_steps: 4, ..Default::default() }.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::verification().validate().is_ok());
    }
}
