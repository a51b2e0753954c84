//! Normal cloud model.
//!
//! A qualitative concept is described by its expectation `ex`, entropy `en`
//! and hyper-entropy `he`. The forward generator turns a descriptor into
//! random drops `(x, u(x))`; the reverse generator estimates the descriptor
//! back from plain samples.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Floor applied to a sampled entropy wherever it is used as a scale.
pub const ENTROPY_FLOOR: f64 = 1e-8;

/// Drops generated from a single RNG stream. Fixed so results do not depend
/// on the execution mode.
const DROPS_PER_STREAM: usize = 4096;

/// Upper bound on rejection resampling of a non-positive entropy draw.
const MAX_RESAMPLE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudDescriptor {
    pub ex: f64,
    pub en: f64,
    pub he: f64,
}

impl CloudDescriptor {
    pub fn new(ex: f64, en: f64, he: f64) -> Result<Self> {
        let desc = CloudDescriptor { ex, en, he };
        desc.validate()?;
        Ok(desc)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.ex.is_finite() || !self.en.is_finite() || !self.he.is_finite() {
            return Err(Error::Argument(format!(
                "non-finite cloud descriptor {self:?}"
            )));
        }
        if self.en < 0.0 || self.he < 0.0 {
            return Err(Error::Argument(format!(
                "cloud entropy and hyper-entropy must be non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One realization of a cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudDrop {
    pub x: f64,
    /// Certainty degree in `(0, 1]`.
    pub u: f64,
    /// The entropy realization the drop was drawn with.
    pub en_prime: f64,
}

/// Denominator used for `S²` in the hyper-entropy estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1`.
    Sample,
}

/// Certainty degree `exp(-(x - ex)² / (2 en'²))`.
pub fn membership(x: f64, ex: f64, en_prime: f64) -> Result<f64> {
    if !(en_prime > 0.0) {
        return Err(Error::Domain(format!(
            "membership needs a positive entropy, got {en_prime}"
        )));
    }
    Ok(membership_unchecked(x, ex, en_prime))
}

#[inline]
pub(crate) fn membership_unchecked(x: f64, ex: f64, en_prime: f64) -> f64 {
    let d = x - ex;
    // exp underflows past ~745; keep the degree strictly positive
    (-(d * d) / (2.0 * en_prime * en_prime))
        .exp()
        .max(f64::MIN_POSITIVE)
}

/// Draws a positive entropy realization from `Normal(en, he²)`.
///
/// Non-positive draws are rejected and redrawn; when `en` is so small that
/// nothing positive turns up the floor is returned instead.
pub fn sample_entropy<R: Rng + ?Sized>(rng: &mut R, en: f64, he: f64) -> f64 {
    if he == 0.0 {
        return en.max(ENTROPY_FLOOR);
    }
    for _ in 0..MAX_RESAMPLE {
        let z: f64 = rng.sample(StandardNormal);
        let draw = en + he * z;
        if draw > 0.0 {
            return draw.max(ENTROPY_FLOOR);
        }
    }
    ENTROPY_FLOOR
}

/// Forward cloud generator: `n` drops from `desc`, deterministic in `seed`.
pub fn forward_generate(desc: &CloudDescriptor, n: usize, seed: u64) -> Result<Vec<CloudDrop>> {
    forward_generate_with(desc, n, seed, Execution::default())
}

/// [`forward_generate`] with an explicit execution mode. Output is identical
/// for both modes.
pub fn forward_generate_with(
    desc: &CloudDescriptor,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<CloudDrop>> {
    desc.validate()?;
    if n == 0 {
        return Err(Error::Argument("forward generator needs n >= 1".into()));
    }
    let streams = n.div_ceil(DROPS_PER_STREAM);
    let chunks = par::map_indexed(streams, exec, |stream| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        let start = stream * DROPS_PER_STREAM;
        let len = DROPS_PER_STREAM.min(n - start);
        (0..len)
            .map(|_| {
                let en_prime = sample_entropy(&mut rng, desc.en, desc.he);
                let z: f64 = rng.sample(StandardNormal);
                let x = desc.ex + en_prime * z;
                CloudDrop {
                    x,
                    u: membership_unchecked(x, desc.ex, en_prime),
                    en_prime,
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Reverse cloud generator.
///
/// `ex` is the sample mean, `en = sqrt(pi/2) * mean|x - ex|` and
/// `he = sqrt(|S² - en²|)`.
pub fn reverse_generate(samples: &[f64], mode: VarianceMode) -> Result<CloudDescriptor> {
    if samples.len() < 2 {
        return Err(Error::Argument(format!(
            "reverse generator needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("non-finite sample {bad}")));
    }
    Ok(reverse_generate_unchecked(samples, mode))
}

pub(crate) fn reverse_generate_unchecked(samples: &[f64], mode: VarianceMode) -> CloudDescriptor {
    let n = samples.len() as f64;
    let ex = samples.iter().sum::<f64>() / n;
    let mut abs_dev = 0.0;
    let mut sq_dev = 0.0;
    for &v in samples {
        let d = v - ex;
        abs_dev += d.abs();
        sq_dev += d * d;
    }
    let en = FRAC_PI_2.sqrt() * abs_dev / n;
    let s2 = match mode {
        VarianceMode::Population => sq_dev / n,
        VarianceMode::Sample => sq_dev / (n - 1.0),
    };
    let he = (s2 - en * en).abs().sqrt();
    CloudDescriptor { ex, en, he }
}
