use std::f64::consts::TAU;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TimeSeriesDataset;
use crate::error::{Error, Result};

pub const SYNTHETIC_START: NaiveDate = match NaiveDate::from_ymd_opt(2021, 1, 1) {
    Some(d) => d,
    None => unreachable!(),
};

const MIN_DAYS: usize = 60;

/// Parameters of one synthetic cluster:
///
/// `load(t) = base · (1 + a·sin(2πt/365.25 + φ)) · weekly[t mod 7] · exp(ε_t) + spike(t)`
/// with `ε_t ~ Normal(0, σ²)` and `spike(t) = base · spike_scale · U(0,1)`
/// on days where a `Bernoulli(spike_prob)` event fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub base: f64,
    pub seasonal_amplitude: f64,
    pub phase: f64,
    pub weekly: [f64; 7],
    pub noise_sigma: f64,
    pub spike_prob: f64,
    pub spike_scale: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        SyntheticProfile {
            base: 10_000.0,
            seasonal_amplitude: 0.25,
            phase: 0.0,
            weekly: [1.05, 1.06, 1.05, 1.04, 1.02, 0.90, 0.88],
            noise_sigma: 0.03,
            spike_prob: 0.01,
            spike_scale: 0.3,
        }
    }
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.base > 0.0) || !self.base.is_finite() {
            return bad(format!("base load must be positive, got {}", self.base));
        }
        if !(0.0..1.0).contains(&self.seasonal_amplitude) {
            return bad(format!(
                "seasonal amplitude must be in [0, 1), got {}",
                self.seasonal_amplitude
            ));
        }
        if !self.phase.is_finite() {
            return bad("phase must be finite".into());
        }
        if self.weekly.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return bad(format!(
                "weekly factors must be positive, got {:?}",
                self.weekly
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if !(0.0..=1.0).contains(&self.spike_prob) {
            return bad(format!(
                "spike probability must be in [0, 1], got {}",
                self.spike_prob
            ));
        }
        if !(self.spike_scale >= 0.0) || !self.spike_scale.is_finite() {
            return bad(format!(
                "spike scale must be non-negative, got {}",
                self.spike_scale
            ));
        }
        Ok(())
    }
}

/// Daily loads from 2021-01-01, rounded to four decimals so the CSV export
/// reloads to identical values.
pub fn generate_synthetic(
    profile: &SyntheticProfile,
    n_days: usize,
    seed: u64,
) -> Result<TimeSeriesDataset> {
    profile.validate()?;
    if n_days < MIN_DAYS {
        return Err(Error::Config(format!(
            "synthetic series need at least {MIN_DAYS} days, got {n_days}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loads = (0..n_days)
        .map(|t| {
            let season =
                1.0 + profile.seasonal_amplitude * (TAU * t as f64 / 365.25 + profile.phase).sin();
            let eps: f64 = if profile.noise_sigma > 0.0 {
                profile.noise_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let mut load = profile.base * season * profile.weekly[t % 7] * eps.exp();
            if profile.spike_prob > 0.0 && rng.random_bool(profile.spike_prob) {
                load += profile.base * profile.spike_scale * rng.random::<f64>();
            }
            ((load * 1e4).round() / 1e4).max(1e-4)
        })
        .collect();
    TimeSeriesDataset::from_start("synthetic", SYNTHETIC_START, loads)
}

/// `count` varied cluster profiles: commercial clusters dip at weekends,
/// residential ones peak.
pub fn default_profiles(count: usize, seed: u64) -> Vec<SyntheticProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let commercial = rng.random_bool(0.6);
            let mut weekly = [0.0; 7];
            for (i, w) in weekly.iter_mut().enumerate() {
                *w = if i < 5 {
                    1.0 + rng.random_range(-0.04..0.04)
                } else if commercial {
                    rng.random_range(0.65..0.9)
                } else {
                    rng.random_range(1.05..1.2)
                };
            }
            let mean = weekly.iter().sum::<f64>() / 7.0;
            weekly.iter_mut().for_each(|w| *w /= mean);
            SyntheticProfile {
                base: rng.random_range(2_000.0..50_000.0),
                seasonal_amplitude: rng.random_range(0.1..0.4),
                phase: rng.random_range(0.0..TAU),
                weekly,
                noise_sigma: rng.random_range(0.02..0.08),
                spike_prob: rng.random_range(0.005..0.02),
                spike_scale: rng.random_range(0.1..0.5),
            }
        })
        .collect()
}
