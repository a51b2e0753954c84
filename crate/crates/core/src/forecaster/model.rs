use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    affine_backward, affine_forward, cloud_norm_backward, cloud_norm_forward, layer_norm_backward,
    layer_norm_normalize, AttentionCache, CloudNormCache, CloudNormConfig, FeedForward,
    FeedForwardCache, Gradients, LayerNormCache, Linear, MultiHeadAttention, ParamId, ParamStore,
    Phase, Tensor, LAYER_NORM_EPS,
};
use crate::par::{self, derive_seed, Execution};

/// Which normalization the encoder blocks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Layer,
    Cloud,
}

impl NormKind {
    /// Display name used in evaluation tables.
    pub fn model_name(self) -> &'static str {
        match self {
            NormKind::Layer => "Transformer",
            NormKind::Cloud => "Cloud Transformer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub norm_kind: NormKind,
    /// Learnable `gamma`/`beta` on layer normalization.
    pub layer_norm_affine: bool,
    pub cloud: CloudNormConfig,
    pub lr: f64,
    /// L2 penalty added to every gradient; 0 disables it.
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 14,
            horizon: 1,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            ffn_dim: 64,
            norm_kind: NormKind::Layer,
            layer_norm_affine: true,
            cloud: CloudNormConfig::default(),
            lr: 1e-3,
            weight_decay: 0.0,
            max_epochs: 200,
            batch_size: 32,
            patience: 20,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_norm(mut self, kind: NormKind) -> Self {
        self.norm_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.lookback < 2 {
            return bad(format!(
                "lookback must be at least 2, got {}",
                self.lookback
            ));
        }
        if self.horizon != 1 {
            return bad(format!(
                "only one-step horizons are supported, got {}",
                self.horizon
            ));
        }
        if self.d_model < 2 {
            return bad("d_model must be at least 2".into());
        }
        if self.n_layers == 0 || self.ffn_dim == 0 || self.batch_size == 0 {
            return bad("n_layers, ffn_dim and batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        self.cloud.validate()
    }
}

#[derive(Debug, Clone)]
struct NormNode {
    affine: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
struct Block {
    attn: MultiHeadAttention,
    norm1: NormNode,
    ffn: FeedForward,
    norm2: NormNode,
}

/// Encoder-only transformer mapping a window of `lookback` standardized
/// loads to the next day's standardized load.
#[derive(Debug, Clone)]
pub struct Forecaster {
    cfg: ModelConfig,
    params: ParamStore,
    embed: Linear,
    positional: Tensor,
    blocks: Vec<Block>,
    head: Linear,
}

enum NormCache {
    Layer(LayerNormCache),
    Cloud(CloudNormCache),
}

struct NormStep {
    cache: NormCache,
    /// Normalized output before the affine map.
    z: Tensor,
}

struct BlockCache {
    attn: AttentionCache,
    norm1: NormStep,
    ffn: FeedForwardCache,
    norm2: NormStep,
}

struct SampleCache {
    embed_in: Tensor,
    blocks: Vec<BlockCache>,
    last: Tensor,
}

/// Sinusoidal position encoding `[seq, d]`.
pub fn positional_encoding(seq: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[seq, d], |i| {
        let (t, j) = ((i / d) as f64, i % d);
        let freq = 1.0 / 10_000f64.powf((2 * (j / 2)) as f64 / d as f64);
        if j % 2 == 0 {
            (t * freq).sin()
        } else {
            (t * freq).cos()
        }
    })
}

impl Forecaster {
    /// Builds an untrained model with parameters drawn from `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let d = cfg.d_model;
        let embed = Linear::new(&mut params, "embed", 1, d, &mut rng);
        let affine = match cfg.norm_kind {
            NormKind::Layer => cfg.layer_norm_affine,
            NormKind::Cloud => cfg.cloud.affine,
        };
        let norm = |params: &mut ParamStore, name: String| NormNode {
            affine: affine.then(|| {
                (
                    params.add(format!("{name}.gamma"), Tensor::filled(&[d], 1.0)),
                    params.add(format!("{name}.beta"), Tensor::zeros(&[d])),
                )
            }),
        };
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let attn = MultiHeadAttention::new(
                &mut params,
                &format!("block{l}.attn"),
                d,
                cfg.n_heads,
                &mut rng,
            )?;
            let norm1 = norm(&mut params, format!("block{l}.norm1"));
            let ffn = FeedForward::new(
                &mut params,
                &format!("block{l}.ffn"),
                d,
                cfg.ffn_dim,
                &mut rng,
            );
            let norm2 = norm(&mut params, format!("block{l}.norm2"));
            blocks.push(Block {
                attn,
                norm1,
                ffn,
                norm2,
            });
        }
        let head = Linear::new(&mut params, "head", d, 1, &mut rng);
        Ok(Forecaster {
            positional: positional_encoding(cfg.lookback, d),
            cfg,
            params,
            embed,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn norm_forward(
        &self,
        node: &NormNode,
        x: &Tensor,
        phase: Phase,
        seed: u64,
    ) -> Result<(Tensor, NormStep)> {
        let (z, cache) = match self.cfg.norm_kind {
            NormKind::Layer => {
                let (z, c) = layer_norm_normalize(x, LAYER_NORM_EPS)?;
                (z, NormCache::Layer(c))
            }
            NormKind::Cloud => {
                let (z, c) = cloud_norm_forward(x, &self.cfg.cloud, phase, seed)?;
                (z, NormCache::Cloud(c))
            }
        };
        let y = match node.affine {
            Some((g, b)) => affine_forward(&z, self.params.get(g), self.params.get(b))?,
            None => z.clone(),
        };
        Ok((y, NormStep { cache, z }))
    }

    fn norm_backward(
        &self,
        node: &NormNode,
        step: &NormStep,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let dz = match node.affine {
            Some((g, b)) => {
                let mut dg = Tensor::zeros(&[self.cfg.d_model]);
                let mut db = Tensor::zeros(&[self.cfg.d_model]);
                let dz = affine_backward(&step.z, self.params.get(g), dy, &mut dg, &mut db);
                grads.get_mut(g).add_assign(&dg);
                grads.get_mut(b).add_assign(&db);
                dz
            }
            None => dy.clone(),
        };
        match &step.cache {
            NormCache::Layer(c) => layer_norm_backward(c, &dz),
            NormCache::Cloud(c) => cloud_norm_backward(&dz, c),
        }
    }

    fn forward_sample(
        &self,
        window: &[f64],
        phase: Phase,
        seed: u64,
    ) -> Result<(f64, SampleCache)> {
        let p = self.cfg.lookback;
        let d = self.cfg.d_model;
        if window.len() != p {
            return Err(Error::Argument(format!(
                "window length {} does not match lookback {p}",
                window.len()
            )));
        }
        let embed_in = Tensor::new(vec![1, p, 1], window.to_vec())?;
        let mut h = self.embed.forward(&self.params, &embed_in)?;
        h.data_mut()
            .iter_mut()
            .zip(self.positional.data())
            .for_each(|(a, b)| *a += b);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let (a, attn) = block.attn.forward(&self.params, &h)?;
            let r1 = h.add(&a);
            let (n1, norm1) =
                self.norm_forward(&block.norm1, &r1, phase, derive_seed(seed, 2 * l as u64))?;
            let (f, ffn) = block.ffn.forward(&self.params, &n1)?;
            let r2 = n1.add(&f);
            let (n2, norm2) = self.norm_forward(
                &block.norm2,
                &r2,
                phase,
                derive_seed(seed, 2 * l as u64 + 1),
            )?;
            h = n2;
            caches.push(BlockCache {
                attn,
                norm1,
                ffn,
                norm2,
            });
        }
        let last = Tensor::new(vec![1, d], h.data()[(p - 1) * d..].to_vec())?;
        let y = self.head.forward(&self.params, &last)?.data()[0];
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("forecast output {y}")));
        }
        Ok((
            y,
            SampleCache {
                embed_in,
                blocks: caches,
                last,
            },
        ))
    }

    fn backward_sample(&self, cache: &SampleCache, dy: f64, grads: &mut Gradients) -> Result<()> {
        let p = self.cfg.lookback;
        let d = self.cfg.d_model;
        let dlast = self.head.backward(
            &self.params,
            &cache.last,
            &Tensor::filled(&[1, 1], dy),
            grads,
        )?;
        let mut dh = Tensor::zeros(&[1, p, d]);
        dh.data_mut()[(p - 1) * d..].copy_from_slice(dlast.data());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let dr2 = self.norm_backward(&block.norm2, &bc.norm2, &dh, grads)?;
            let mut dn1 = block.ffn.backward(&self.params, &bc.ffn, &dr2, grads)?;
            dn1.add_assign(&dr2);
            let dr1 = self.norm_backward(&block.norm1, &bc.norm1, &dn1, grads)?;
            let mut dx = block.attn.backward(&self.params, &bc.attn, &dr1, grads)?;
            dx.add_assign(&dr1);
            dh = dx;
        }
        self.embed
            .backward(&self.params, &cache.embed_in, &dh, grads)?;
        Ok(())
    }

    /// Predictions for `[batch, lookback]` windows, standardized units.
    /// Row `i` draws its cloud noise from `derive_seed(seed, i)`.
    pub fn forward(&self, windows: &Tensor, phase: Phase, seed: u64) -> Result<Tensor> {
        self.forward_with(windows, phase, seed, Execution::default())
    }

    pub fn forward_with(
        &self,
        windows: &Tensor,
        phase: Phase,
        seed: u64,
        exec: Execution,
    ) -> Result<Tensor> {
        let p = self.cfg.lookback;
        windows.ensure_shape(&[windows.len() / p, p], "forecaster input")?;
        let rows = windows.len() / p;
        let out = par::map_indexed(rows, exec, |i| {
            self.forward_sample(
                &windows.data()[i * p..(i + 1) * p],
                phase,
                derive_seed(seed, i as u64),
            )
            .map(|(y, _)| y)
        });
        Tensor::new(vec![rows, 1], out.into_iter().collect::<Result<Vec<_>>>()?)
    }

    /// Mean squared error over the batch and its gradient. Per-sample
    /// gradients are summed in index order, so the result does not depend on
    /// `exec`.
    pub fn loss_and_grad(
        &self,
        windows: &Tensor,
        targets: &[f64],
        phase: Phase,
        seed: u64,
        exec: Execution,
    ) -> Result<(f64, Gradients)> {
        let p = self.cfg.lookback;
        let rows = targets.len();
        windows.ensure_shape(&[rows, p], "forecaster input")?;
        let n = rows as f64;
        let per_sample = par::map_indexed(rows, exec, |i| -> Result<(f64, Gradients)> {
            let (y, cache) = self.forward_sample(
                &windows.data()[i * p..(i + 1) * p],
                phase,
                derive_seed(seed, i as u64),
            )?;
            let r = y - targets[i];
            let mut g = self.params.zero_grads();
            self.backward_sample(&cache, 2.0 * r / n, &mut g)?;
            Ok((r * r, g))
        });
        let mut total = self.params.zero_grads();
        let mut loss = 0.0;
        for item in per_sample {
            let (sq, g) = item?;
            loss += sq;
            total.add_assign(&g);
        }
        Ok((loss / n, total))
    }
}
