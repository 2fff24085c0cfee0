//! Aggregator-side differential privacy: Laplace noise on trained count
//! statistics, then repair back to valid stochastic matrices.
//!
//! This module never touches per-home sequences; it only sees aggregated
//! counts (and the trained initial distribution, noised the same way).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{HmmParams, TrainingCounts};
use crate::model::ReleaseMetadata;

/// Noise calibration for one release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub epsilon_cdp: f64,
    /// Query sensitivity: how much one record can change any count.
    pub sensitivity: f64,
    /// Lower bound applied to surviving entries before renormalization,
    /// keeping released probabilities strictly positive.
    pub probability_floor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            epsilon_cdp: 1.0,
            sensitivity: 1.0,
            probability_floor: 1e-6,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self, n_symbols: usize) -> Result<()> {
        if !(self.epsilon_cdp > 0.0) || !self.epsilon_cdp.is_finite() {
            return Err(Error::InvalidNoiseConfig {
                reason: format!("epsilon must be positive and finite, got {}", self.epsilon_cdp),
            });
        }
        if !(self.sensitivity > 0.0) || !self.sensitivity.is_finite() {
            return Err(Error::InvalidNoiseConfig {
                reason: format!("sensitivity must be positive, got {}", self.sensitivity),
            });
        }
        if !(self.probability_floor > 0.0) {
            return Err(Error::InvalidNoiseConfig {
                reason: format!(
                    "probability floor must be positive, got {}",
                    self.probability_floor
                ),
            });
        }
        if self.probability_floor * n_symbols as f64 >= 1.0 {
            return Err(Error::InvalidNoiseConfig {
                reason: format!(
                    "probability floor {} times {n_symbols} symbols reaches 1",
                    self.probability_floor
                ),
            });
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon_cdp
    }
}

/// Laplace inverse CDF with location 0: exactly 0 at `u = 0.5`.
pub fn laplace_quantile(u: f64, scale: f64) -> f64 {
    let centered = u - 0.5;
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// One Laplace(0, scale) variate via inverse-CDF sampling.
pub fn laplace_sample<R: Rng>(scale: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return laplace_quantile(u, scale);
        }
    }
}

/// Add Laplace(sensitivity / epsilon) noise to every count, clamped at 0.
pub fn privatize_counts<R: Rng>(counts: &[f64], cfg: &NoiseConfig, rng: &mut R) -> Vec<f64> {
    let scale = cfg.scale();
    counts
        .iter()
        .map(|&c| (c + laplace_sample(scale, rng)).max(0.0))
        .collect()
}

/// A differentially private model release.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleasedModel {
    pub params: HmmParams,
    pub metadata: ReleaseMetadata,
}

/// Noise one count row and repair it to a probability row:
/// clamp at zero, floor surviving entries, renormalize. A row entirely
/// zeroed by clamping becomes uniform and is flagged.
fn release_row<R: Rng>(
    counts: &[f64],
    cfg: &NoiseConfig,
    rng: &mut R,
    label: String,
    repaired: &mut Vec<String>,
) -> Vec<f64> {
    let mut row = privatize_counts(counts, cfg, rng);
    let sum: f64 = row.iter().sum();
    if sum <= 0.0 {
        repaired.push(label);
        return vec![1.0 / row.len() as f64; row.len()];
    }
    for v in &mut row {
        *v = v.max(cfg.probability_floor);
    }
    let sum: f64 = row.iter().sum();
    for v in &mut row {
        *v /= sum;
    }
    row
}

/// Release a trained model: Laplace noise on the transition and emission
/// count accumulators and on the initial distribution, each row repaired
/// to a valid stochastic row.
///
/// Noise application order is fixed (initial row, transition rows,
/// emission rows) so a seeded source gives a reproducible release.
pub fn privatize_hmm<R: Rng>(
    params: &HmmParams,
    counts: &TrainingCounts,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<ReleasedModel> {
    params.validate()?;
    cfg.validate(params.n_symbols())?;
    let n = params.n_states();
    let m = params.n_symbols();
    if counts.transition.len() != n
        || counts.transition.iter().any(|r| r.len() != n)
        || counts.emission.len() != n
        || counts.emission.iter().any(|r| r.len() != m)
    {
        return Err(Error::InvalidParams {
            reason: "count matrices do not match the model dimensions".into(),
        });
    }

    let mut repaired = Vec::new();
    let pi = release_row(&params.pi, cfg, rng, "initial".into(), &mut repaired);
    let trans: Vec<Vec<f64>> = counts
        .transition
        .iter()
        .enumerate()
        .map(|(i, row)| release_row(row, cfg, rng, format!("transition:{i}"), &mut repaired))
        .collect();
    let emit: Vec<Vec<f64>> = counts
        .emission
        .iter()
        .enumerate()
        .map(|(j, row)| release_row(row, cfg, rng, format!("emission:{j}"), &mut repaired))
        .collect();

    let released = HmmParams::new(pi, trans, emit)?;
    Ok(ReleasedModel {
        params: released,
        metadata: ReleaseMetadata {
            epsilon_cdp: cfg.epsilon_cdp,
            sensitivity: cfg.sensitivity,
            repaired_rows: repaired,
        },
    })
}
