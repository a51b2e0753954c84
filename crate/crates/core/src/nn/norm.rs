//! Normalization layers: standard layer normalization and cloud
//! normalization, which replaces each entry by its certainty degree under the
//! normal cloud estimated from its own feature vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::Phase;
use crate::cloud::{membership_unchecked, reverse_generate_unchecked, VarianceMode};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNormCache {
    pub fn normalized(&self) -> &Tensor {
        &self.xhat
    }
}

/// Layer normalization over the last axis with an optional affine map.
pub fn layer_norm_forward(
    x: &Tensor,
    gamma: Option<&Tensor>,
    beta: Option<&Tensor>,
) -> Result<Tensor> {
    let (z, _) = layer_norm_normalize(x, LAYER_NORM_EPS)?;
    match (gamma, beta) {
        (Some(g), Some(b)) => affine_forward(&z, g, b),
        (None, None) => Ok(z),
        _ => Err(Error::Argument(
            "layer norm needs both gamma and beta or neither".into(),
        )),
    }
}

/// `(x - mean) / sqrt(var + eps)` per row, population variance.
pub fn layer_norm_normalize(x: &Tensor, eps: f64) -> Result<(Tensor, LayerNormCache)> {
    let d = x.last_dim();
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for row in xhat.data_mut().chunks_exact_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    let cache = LayerNormCache {
        xhat: xhat.clone(),
        inv_std,
    };
    Ok((xhat, cache))
}

pub fn layer_norm_backward(cache: &LayerNormCache, dxhat: &Tensor) -> Result<Tensor> {
    if dxhat.shape() != cache.xhat.shape() {
        return Err(Error::Argument("layer norm gradient shape mismatch".into()));
    }
    let d = dxhat.last_dim();
    let mut dx = Tensor::zeros(dxhat.shape());
    for (((g, xh), out), &is) in dxhat
        .data()
        .chunks_exact(d)
        .zip(cache.xhat.data().chunks_exact(d))
        .zip(dx.data_mut().chunks_exact_mut(d))
        .zip(&cache.inv_std)
    {
        let mean_g = g.iter().sum::<f64>() / d as f64;
        let mean_gx = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xh) {
            *o = is * (gi - mean_g - xi * mean_gx);
        }
    }
    Ok(dx)
}

/// `gamma ⊙ z + beta` broadcast over rows.
pub fn affine_forward(z: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let d = z.last_dim();
    gamma.ensure_shape(&[d], "affine gamma")?;
    beta.ensure_shape(&[d], "affine beta")?;
    let mut y = z.clone();
    for row in y.data_mut().chunks_exact_mut(d) {
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + b;
        }
    }
    Ok(y)
}

/// Accumulates into `dgamma`/`dbeta` and returns the gradient w.r.t. `z`.
pub fn affine_backward(
    z: &Tensor,
    gamma: &Tensor,
    dy: &Tensor,
    dgamma: &mut Tensor,
    dbeta: &mut Tensor,
) -> Tensor {
    let d = z.last_dim();
    let mut dz = dy.clone();
    for ((zrow, gyrow), dzrow) in z
        .data()
        .chunks_exact(d)
        .zip(dy.data().chunks_exact(d))
        .zip(dz.data_mut().chunks_exact_mut(d))
    {
        for j in 0..d {
            dgamma.data_mut()[j] += gyrow[j] * zrow[j];
            dbeta.data_mut()[j] += gyrow[j];
            dzrow[j] = gyrow[j] * gamma.data()[j];
        }
    }
    dz
}

/// Whether entropy noise is drawn once per entry or once per feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseGranularity {
    #[default]
    PerElement,
    PerGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudNormConfig {
    /// The entropy draw uses standard deviation `he / noise_divisor`.
    pub noise_divisor: f64,
    pub train_stochastic: bool,
    pub eval_stochastic: bool,
    /// Floor for the sampled entropy.
    pub epsilon: f64,
    /// Learnable `gamma`/`beta` after the membership map.
    pub affine: bool,
    pub granularity: NoiseGranularity,
    pub variance: VarianceMode,
}

impl Default for CloudNormConfig {
    fn default() -> Self {
        CloudNormConfig {
            noise_divisor: 100.0,
            train_stochastic: true,
            eval_stochastic: false,
            epsilon: 1e-8,
            affine: false,
            granularity: NoiseGranularity::PerElement,
            variance: VarianceMode::Population,
        }
    }
}

impl CloudNormConfig {
    /// Noise switched off in both phases.
    pub fn deterministic() -> Self {
        CloudNormConfig {
            train_stochastic: false,
            eval_stochastic: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_divisor > 0.0) || !self.noise_divisor.is_finite() {
            return Err(Error::Config(format!(
                "cloud norm noise_divisor must be positive, got {}",
                self.noise_divisor
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "cloud norm epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn stochastic(&self, phase: Phase) -> bool {
        match phase {
            Phase::Train => self.train_stochastic,
            Phase::Eval => self.eval_stochastic,
        }
    }
}

/// State saved by [`cloud_norm_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct CloudNormCache {
    x: Tensor,
    ex: Vec<f64>,
    en_prime: Tensor,
    u: Tensor,
}

impl CloudNormCache {
    /// Per-row expectation.
    pub fn ex(&self) -> &[f64] {
        &self.ex
    }

    /// Per-entry entropy actually used (after the floor).
    pub fn en_prime(&self) -> &Tensor {
        &self.en_prime
    }

    pub fn output(&self) -> &Tensor {
        &self.u
    }
}

/// Cloud normalization over the last axis.
///
/// Each row's `(ex, en, he)` comes from the reverse generator; every entry is
/// mapped to `exp(-(x - ex)² / (2 en'²))` with `en' ~ Normal(en, (he/k)²)`
/// when the phase is stochastic, and `en' = en` otherwise.
pub fn cloud_norm_forward(
    x: &Tensor,
    cfg: &CloudNormConfig,
    phase: Phase,
    seed: u64,
) -> Result<(Tensor, CloudNormCache)> {
    cfg.validate()?;
    let d = x.last_dim();
    if d < 2 {
        return Err(Error::Config(format!(
            "cloud norm needs at least 2 features per vector, got {d}"
        )));
    }
    x.check_finite("cloud norm input")?;
    let stochastic = cfg.stochastic(phase);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = x.rows();
    let mut ex = Vec::with_capacity(rows);
    let mut en_prime = Tensor::zeros(x.shape());
    let mut u = Tensor::zeros(x.shape());
    for (r, row) in x.data().chunks_exact(d).enumerate() {
        let desc = reverse_generate_unchecked(row, cfg.variance);
        let scale = desc.he / cfg.noise_divisor;
        let mut group_draw = None;
        for (j, &xi) in row.iter().enumerate() {
            let e = if stochastic {
                let z = match cfg.granularity {
                    NoiseGranularity::PerElement => rng.sample::<f64, _>(StandardNormal),
                    NoiseGranularity::PerGroup => {
                        *group_draw.get_or_insert_with(|| rng.sample::<f64, _>(StandardNormal))
                    }
                };
                desc.en + scale * z
            } else {
                desc.en
            };
            let e = e.max(cfg.epsilon);
            en_prime.data_mut()[r * d + j] = e;
            u.data_mut()[r * d + j] = membership_unchecked(xi, desc.ex, e);
        }
        ex.push(desc.ex);
    }
    let cache = CloudNormCache {
        x: x.clone(),
        ex,
        en_prime,
        u: u.clone(),
    };
    Ok((u, cache))
}

/// The membership map with the row statistics and entropies held fixed.
/// This is the function [`cloud_norm_backward`] differentiates.
pub fn cloud_norm_with_stats(x: &Tensor, ex: &[f64], en_prime: &Tensor) -> Result<Tensor> {
    let d = x.last_dim();
    if ex.len() != x.rows() || en_prime.shape() != x.shape() {
        return Err(Error::Argument(
            "cloud norm statistics do not match input".into(),
        ));
    }
    let mut u = Tensor::zeros(x.shape());
    for (i, (o, (&xi, &e))) in u
        .data_mut()
        .iter_mut()
        .zip(x.data().iter().zip(en_prime.data()))
        .enumerate()
    {
        *o = membership_unchecked(xi, ex[i / d], e);
    }
    Ok(u)
}

/// `du_i/dx_i = -u_i (x_i - ex) / en'²`, statistics treated as constants.
pub fn cloud_norm_backward(dy: &Tensor, cache: &CloudNormCache) -> Result<Tensor> {
    if dy.shape() != cache.x.shape() {
        return Err(Error::Argument(format!(
            "cloud norm upstream gradient shape {:?} vs cached {:?}",
            dy.shape(),
            cache.x.shape()
        )));
    }
    let d = dy.last_dim();
    let mut dx = Tensor::zeros(dy.shape());
    for (i, o) in dx.data_mut().iter_mut().enumerate() {
        let xi = cache.x.data()[i];
        let e = cache.en_prime.data()[i];
        let ui = cache.u.data()[i];
        *o = dy.data()[i] * ui * (-(xi - cache.ex[i / d]) / (e * e));
    }
    Ok(dx)
}

/// Stateful wrapper that keeps the last forward cache.
#[derive(Debug, Clone, Default)]
pub struct CloudNorm {
    pub cfg: CloudNormConfig,
    cache: Option<CloudNormCache>,
}

impl CloudNorm {
    pub fn new(cfg: CloudNormConfig) -> Self {
        CloudNorm { cfg, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor, phase: Phase, seed: u64) -> Result<Tensor> {
        let (u, cache) = cloud_norm_forward(x, &self.cfg, phase, seed)?;
        self.cache = Some(cache);
        Ok(u)
    }

    pub fn backward(&self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("cloud norm backward called before forward".into()))?;
        cloud_norm_backward(dy, cache)
    }
}
