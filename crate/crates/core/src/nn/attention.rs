use rand::Rng;

use super::activation::{softmax_in_place, softmax_row_backward};
use super::linear::Linear;
use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Unmasked multi-head self-attention over `[batch, seq, d]`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// `[batch, heads, seq, seq]` attention weights.
    probs: Vec<f64>,
    concat: Tensor,
}

impl AttentionCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by n_heads {n_heads}"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, rng),
            key: Linear::new(store, &format!("{name}.key"), d_model, d_model, rng),
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, rng),
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model, rng),
            n_heads,
            d_model,
        })
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        match x.shape() {
            &[b, s, d] if d == self.d_model => Ok((b, s)),
            other => Err(Error::Argument(format!(
                "attention expects [batch, seq, {}], got {other:?}",
                self.d_model
            ))),
        }
    }

    pub fn forward(&self, params: &ParamStore, x: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let (batch, seq) = self.dims(x)?;
        let d = self.d_model;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(params, x)?;
        let k = self.key.forward(params, x)?;
        let v = self.value.forward(params, x)?;
        let mut probs = vec![0.0; batch * self.n_heads * seq * seq];
        let mut concat = Tensor::zeros(x.shape());
        for b in 0..batch {
            let base = b * seq * d;
            for h in 0..self.n_heads {
                let off = h * dh;
                let pbase = (b * self.n_heads + h) * seq * seq;
                for i in 0..seq {
                    let qi = &q.data()[base + i * d + off..base + i * d + off + dh];
                    let row = &mut probs[pbase + i * seq..pbase + (i + 1) * seq];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &k.data()[base + j * d + off..base + j * d + off + dh];
                        *s = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                    }
                    softmax_in_place(row);
                    let out = &mut concat.data_mut()[base + i * d + off..base + i * d + off + dh];
                    for (j, &p) in row.iter().enumerate() {
                        let vj = &v.data()[base + j * d + off..base + j * d + off + dh];
                        for (o, &vv) in out.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let y = self.output.forward(params, &concat)?;
        let cache = AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            concat,
        };
        Ok((y, cache))
    }

    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &AttentionCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let (batch, seq) = self.dims(&cache.x)?;
        let d = self.d_model;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dconcat = self.output.backward(params, &cache.concat, dy, grads)?;
        let mut dq = Tensor::zeros(cache.x.shape());
        let mut dk = Tensor::zeros(cache.x.shape());
        let mut dv = Tensor::zeros(cache.x.shape());
        let mut dp = vec![0.0; seq];
        let mut ds = vec![0.0; seq];
        for b in 0..batch {
            let base = b * seq * d;
            for h in 0..self.n_heads {
                let off = h * dh;
                let pbase = (b * self.n_heads + h) * seq * seq;
                for i in 0..seq {
                    let p = &cache.probs[pbase + i * seq..pbase + (i + 1) * seq];
                    let go = &dconcat.data()[base + i * d + off..base + i * d + off + dh];
                    for j in 0..seq {
                        let vj = &cache.v.data()[base + j * d + off..base + j * d + off + dh];
                        dp[j] = go.iter().zip(vj).map(|(a, c)| a * c).sum();
                        let dvj = &mut dv.data_mut()[base + j * d + off..base + j * d + off + dh];
                        for (o, &g) in dvj.iter_mut().zip(go) {
                            *o += p[j] * g;
                        }
                    }
                    softmax_row_backward(p, &dp, &mut ds);
                    for j in 0..seq {
                        let g = ds[j] * scale;
                        if g == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            let qi = cache.q.data()[base + i * d + off + c];
                            let kj = cache.k.data()[base + j * d + off + c];
                            dq.data_mut()[base + i * d + off + c] += g * kj;
                            dk.data_mut()[base + j * d + off + c] += g * qi;
                        }
                    }
                }
            }
        }
        let mut dx = self.query.backward(params, &cache.x, &dq, grads)?;
        dx.add_assign(&self.key.backward(params, &cache.x, &dk, grads)?);
        dx.add_assign(&self.value.backward(params, &cache.x, &dv, grads)?);
        Ok(dx)
    }
}

/// Position-wise `Linear → GELU → Linear`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub expand: Linear,
    pub project: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl FeedForward {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        FeedForward {
            expand: Linear::new(store, &format!("{name}.expand"), d_model, hidden, rng),
            project: Linear::new(store, &format!("{name}.project"), hidden, d_model, rng),
        }
    }

    pub fn forward(&self, params: &ParamStore, x: &Tensor) -> Result<(Tensor, FeedForwardCache)> {
        let pre = self.expand.forward(params, x)?;
        let mut act = pre.clone();
        act.data_mut()
            .iter_mut()
            .for_each(|v| *v = super::activation::gelu(*v));
        let y = self.project.forward(params, &act)?;
        Ok((
            y,
            FeedForwardCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &FeedForwardCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let mut dact = self.project.backward(params, &cache.act, dy, grads)?;
        for (g, &p) in dact.data_mut().iter_mut().zip(cache.pre.data()) {
            *g *= super::activation::gelu_grad(p);
        }
        self.expand.backward(params, &cache.x, &dact, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_position_returns_projected_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let attn = MultiHeadAttention::new(&mut store, "attn", 8, 2, &mut rng).unwrap();
        let x = Tensor::from_fn(&[3, 1, 8], |i| (i as f64 * 0.37).sin());
        let (y, cache) = attn.forward(&store, &x).unwrap();
        assert!(cache.probs().iter().all(|&p| p == 1.0));
        let v = attn.value.forward(&store, &x).unwrap();
        let expected = attn.output.forward(&store, &v).unwrap();
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn head_divisibility_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        assert!(matches!(
            MultiHeadAttention::new(&mut store, "attn", 10, 3, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn wrong_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let attn = MultiHeadAttention::new(&mut store, "attn", 4, 2, &mut rng).unwrap();
        assert!(attn.forward(&store, &Tensor::zeros(&[1, 2, 5])).is_err());
    }
}
