use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax over the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let n = x.last_dim();
    for row in out.data_mut().chunks_exact_mut(n) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Backward of a row-wise softmax given its output `p`.
pub fn softmax_backward(p: &Tensor, dp: &Tensor) -> Result<Tensor> {
    if p.shape() != dp.shape() {
        return Err(Error::Argument("softmax gradient shape mismatch".into()));
    }
    let n = p.last_dim();
    let mut dx = Tensor::zeros(p.shape());
    for ((prow, grow), out) in p
        .data()
        .chunks_exact(n)
        .zip(dp.data().chunks_exact(n))
        .zip(dx.data_mut().chunks_exact_mut(n))
    {
        softmax_row_backward(prow, grow, out);
    }
    Ok(dx)
}

pub(crate) fn softmax_row_backward(p: &[f64], dp: &[f64], out: &mut [f64]) {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(dp) {
        *o = pi * (gi - dot);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Mean squared error and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Argument(format!(
            "mse: prediction shape {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        let r = p - t;
        loss += r * r;
        *g = 2.0 * r / n;
    }
    Ok((loss / n, grad))
}
