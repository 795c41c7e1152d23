//! Central finite-difference verification of the analytic backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};
use crate::transformer::{Batch, Seq2Seq};

#[derive(Debug, Clone)]
pub struct CoordinateCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checks: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    /// Worst relative error among tensors whose name contains `pattern`.
    pub fn max_for(&self, pattern: &str) -> Option<f64> {
        self.checks
            .iter()
            .filter(|c| c.tensor.contains(pattern))
            .map(|c| c.rel_error)
            .reduce(f64::max)
    }
}

/// `|a - n| / max(|a| + |n|, floor)`: bounded by 1, and the floor keeps
/// vanishing gradients from turning rounding noise into large ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-7;
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(FLOOR)
}

/// Compares analytic gradients against central differences on `samples`
/// coordinates spread over every parameter tensor (each tensor gets at
/// least one). Dropout is disabled.
pub fn grad_check(model: &Seq2Seq<f64>, batch: &Batch, eps: f64, samples: usize, seed: u64) -> Result<GradCheckReport> {
    if samples == 0 {
        return Err(ModelError::Empty("coordinate sample"));
    }
    let (_, tape) = model.forward::<ChaCha8Rng>(batch, None)?;
    let grads = model.backward(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = model.store().params();
    let total: usize = params.iter().map(|p| p.value.len()).sum();
    let mut probe = model.clone();
    let mut checks = Vec::new();
    for (ti, p) in params.iter().enumerate() {
        let n = p.value.len();
        let share = ((samples * n).div_ceil(total)).clamp(1, n);
        for idx in sample(&mut rng, n, share) {
            let orig = p.value[idx];
            probe.store_mut().params_mut()[ti].value[idx] = orig + eps;
            let plus = probe.loss(batch)?;
            probe.store_mut().params_mut()[ti].value[idx] = orig - eps;
            let minus = probe.loss(batch)?;
            probe.store_mut().params_mut()[ti].value[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.tensors()[ti][idx];
            checks.push(CoordinateCheck {
                tensor: p.name.clone(),
                index: idx,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            });
        }
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, checks })
}
