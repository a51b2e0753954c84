use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_a_bt, matmul_at_b_acc, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Affine map over the last axis: `y = x · W + b`, `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers a Glorot-uniform weight and a zero bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let w = Tensor::from_fn(&[in_dim, out_dim], |_| dist.sample(rng));
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.last_dim() != self.in_dim {
            return Err(Error::Argument(format!(
                "linear layer expects last axis {}, got shape {:?}",
                self.in_dim,
                x.shape()
            )));
        }
        let rows = x.rows();
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = self.out_dim;
        let mut y = Tensor::zeros(&out_shape);
        let b = params.get(self.bias).data();
        for r in 0..rows {
            y.data_mut()[r * self.out_dim..(r + 1) * self.out_dim].copy_from_slice(b);
        }
        matmul_into(
            x.data(),
            params.get(self.weight).data(),
            y.data_mut(),
            rows,
            self.in_dim,
            self.out_dim,
            true,
        );
        Ok(y)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(
        &self,
        params: &ParamStore,
        x: &Tensor,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let rows = x.rows();
        let mut expected = x.shape().to_vec();
        *expected.last_mut().unwrap() = self.out_dim;
        dy.ensure_shape(&expected, "linear upstream gradient")?;

        matmul_at_b_acc(
            x.data(),
            dy.data(),
            grads.get_mut(self.weight).data_mut(),
            rows,
            self.in_dim,
            self.out_dim,
        );
        let db = grads.get_mut(self.bias).data_mut();
        for row in dy.data().chunks_exact(self.out_dim) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        matmul_a_bt(
            dy.data(),
            params.get(self.weight).data(),
            dx.data_mut(),
            rows,
            self.out_dim,
            self.in_dim,
            false,
        );
        Ok(dx)
    }
}
