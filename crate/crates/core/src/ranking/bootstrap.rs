//! Percentile bootstrap intervals for fitted scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::ModelId;

use super::{bt_fit, Duel, FitConfig, Interval, RankingError, WinMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub intervals: Vec<Interval>,
    /// Resamples whose fit failed (typically a disconnected win graph).
    pub skipped: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Resamples `duels` with replacement, refits each resample and returns
/// per-model percentile intervals.
///
/// The full sample must fit; failed resample fits are skipped and counted.
pub fn bootstrap_ci(
    models: &[ModelId],
    duels: &[Duel],
    fit: &FitConfig,
    config: &BootstrapConfig,
) -> Result<BootstrapResult, RankingError> {
    if !(config.level > 0.0 && config.level < 1.0) || config.resamples == 0 {
        return Err(RankingError::InvalidConfig(format!(
            "bootstrap needs 0 < level < 1 and resamples > 0, got {} and {}",
            config.level, config.resamples
        )));
    }
    bt_fit(&WinMatrix::from_duels(models.to_vec(), duels)?, fit)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(config.resamples); models.len()];
    let mut skipped = 0;
    for _ in 0..config.resamples {
        let mut matrix = WinMatrix::new(models.to_vec())?;
        for _ in 0..duels.len() {
            let d = duels[rng.random_range(0..duels.len())];
            matrix.add_win(d.winner, d.loser)?;
        }
        match bt_fit(&matrix, fit) {
            Ok(result) => {
                for (column, s) in samples.iter_mut().zip(result.scores.as_slice()) {
                    column.push(*s);
                }
            }
            Err(_) => skipped += 1,
        }
    }
    if skipped == config.resamples {
        return Err(RankingError::AllResamplesFailed(skipped));
    }

    let tail = (1.0 - config.level) / 2.0;
    let intervals = samples
        .into_iter()
        .map(|mut column| {
            column.sort_by(f64::total_cmp);
            Interval {
                low: quantile(&column, tail),
                high: quantile(&column, 1.0 - tail),
            }
        })
        .collect();
    Ok(BootstrapResult { intervals, skipped })
}
