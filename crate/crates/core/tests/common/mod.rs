//! Finite-difference gradient oracle shared by the gradient and acceptance
//! suites. It only evaluates forward passes, never the backward code it is
//! checking.

#![allow(dead_code)]

use cmit::nn::{
    affine_backward, affine_forward, cloud_norm_backward, cloud_norm_forward,
    cloud_norm_with_stats, layer_norm_backward, layer_norm_normalize, mse_loss, softmax,
    softmax_backward, CloudNormConfig, FeedForward, Linear, MultiHeadAttention, ParamStore, Phase,
    Tensor, LAYER_NORM_EPS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Central differences of a scalar function.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise discrepancy relative to the gradient's scale.
///
/// Callers pass a layer's whole gradient (input and every parameter
/// concatenated). Scaling tensor by tensor would divide the rounding noise
/// of an identically zero gradient (the key bias, which softmax cancels) by
/// that tensor's own vanishing scale. The 1e-6 floor covers the degenerate
/// all-zero case.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-6);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], spread: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-spread..spread))
}

/// Like [`random_tensor`] but every last-axis row spans at least
/// `min_spread`. Rows whose entries nearly coincide have entropies (and
/// layer-norm variances) comparable to the finite-difference step, where
/// central differences stop resolving the function.
pub fn well_spread_tensor(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    spread: f64,
    min_spread: f64,
) -> Tensor {
    let d = *shape.last().unwrap();
    let mut t = random_tensor(rng, shape, spread);
    for row in t.data_mut().chunks_exact_mut(d) {
        loop {
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo >= min_spread {
                break;
            }
            row.iter_mut()
                .for_each(|v| *v = rng.random_range(-spread..spread));
        }
    }
    t
}

/// Random `[batch, seq, d]` with batch ≤ 4, seq ≤ 6, even d in 2..=8.
pub fn random_shape(rng: &mut ChaCha8Rng) -> [usize; 3] {
    [
        rng.random_range(1..=4),
        rng.random_range(1..=6),
        2 * rng.random_range(1..=4),
    ]
}

fn with_param(store: &ParamStore, id: cmit::nn::ParamId, values: &[f64]) -> ParamStore {
    let mut s = store.clone();
    s.get_mut(id).data_mut().copy_from_slice(values);
    s
}

/// Checks every parameter of `store` plus the input for a layer whose loss is
/// `L = <r, forward(store, x)>`.
fn check_layer(
    store: &ParamStore,
    x: &Tensor,
    forward: impl Fn(&ParamStore, &Tensor) -> Tensor,
    backward: impl Fn(&ParamStore, &Tensor, &mut cmit::nn::Gradients) -> Tensor,
    r: &Tensor,
) -> f64 {
    let mut grads = store.zero_grads();
    let dx = backward(store, r, &mut grads);
    let loss_x = |v: &[f64]| {
        let xt = Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap();
        forward(store, &xt).dot(r)
    };
    let mut analytic = dx.data().to_vec();
    let mut numeric = central_diff(loss_x, x.data(), FD_STEP);
    for id in store.ids() {
        let loss_p = |v: &[f64]| forward(&with_param(store, id, v), x).dot(r);
        numeric.extend(central_diff(loss_p, store.get(id).data(), FD_STEP));
        analytic.extend_from_slice(grads.get(id).data());
    }
    rel_error(&analytic, &numeric)
}

/// Max relative error per layer for one seed.
pub fn layer_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = random_shape(&mut rng);
    let d = shape[2];
    let x = well_spread_tensor(&mut rng, &shape, 2.0, 0.5);
    let r = random_tensor(&mut rng, &shape, 1.0);
    let mut out = Vec::new();

    // linear, d -> d + 1
    {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", d, d + 1, &mut rng);
        let r_out = random_tensor(&mut rng, &[shape[0], shape[1], d + 1], 1.0);
        let err = check_layer(
            &store,
            &x,
            |p, x| lin.forward(p, x).unwrap(),
            |p, r, g| lin.backward(p, &x, r, g).unwrap(),
            &r_out,
        );
        out.push(("linear", err));
    }

    // layer norm with affine
    {
        let mut store = ParamStore::new();
        let gamma = store.add("gamma", random_tensor(&mut rng, &[d], 1.5));
        let beta = store.add("beta", random_tensor(&mut rng, &[d], 1.0));
        let fwd = |p: &ParamStore, x: &Tensor| {
            let (z, _) = layer_norm_normalize(x, LAYER_NORM_EPS).unwrap();
            affine_forward(&z, p.get(gamma), p.get(beta)).unwrap()
        };
        let err = check_layer(
            &store,
            &x,
            fwd,
            |p, r, g| {
                let (z, cache) = layer_norm_normalize(&x, LAYER_NORM_EPS).unwrap();
                let (mut dg, mut db) = (Tensor::zeros(&[d]), Tensor::zeros(&[d]));
                let dz = affine_backward(&z, p.get(gamma), r, &mut dg, &mut db);
                g.get_mut(gamma).add_assign(&dg);
                g.get_mut(beta).add_assign(&db);
                layer_norm_backward(&cache, &dz).unwrap()
            },
            &r,
        );
        out.push(("layer_norm", err));
    }

    // cloud norm: stochastic forward, then frozen statistics and noise
    {
        let (_, cache) =
            cloud_norm_forward(&x, &CloudNormConfig::default(), Phase::Train, seed).unwrap();
        let ex = cache.ex().to_vec();
        let en = cache.en_prime().clone();
        let dx = cloud_norm_backward(&r, &cache).unwrap();
        let loss = |v: &[f64]| {
            let xt = Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap();
            cloud_norm_with_stats(&xt, &ex, &en).unwrap().dot(&r)
        };
        out.push((
            "cloud_norm",
            rel_error(dx.data(), &central_diff(loss, x.data(), FD_STEP)),
        ));
    }

    // attention
    {
        let mut store = ParamStore::new();
        let heads = if d.is_multiple_of(2) { 2 } else { 1 };
        let attn = MultiHeadAttention::new(&mut store, "attn", d, heads, &mut rng).unwrap();
        let err = check_layer(
            &store,
            &x,
            |p, x| attn.forward(p, x).unwrap().0,
            |p, r, g| {
                let (_, cache) = attn.forward(p, &x).unwrap();
                attn.backward(p, &cache, r, g).unwrap()
            },
            &r,
        );
        out.push(("attention", err));
    }

    // feed-forward
    {
        let mut store = ParamStore::new();
        let ffn = FeedForward::new(&mut store, "ffn", d, 2 * d, &mut rng);
        let err = check_layer(
            &store,
            &x,
            |p, x| ffn.forward(p, x).unwrap().0,
            |p, r, g| {
                let (_, cache) = ffn.forward(p, &x).unwrap();
                ffn.backward(p, &cache, r, g).unwrap()
            },
            &r,
        );
        out.push(("feed_forward", err));
    }

    // softmax
    {
        let p = softmax(&x);
        let dx = softmax_backward(&p, &r).unwrap();
        let loss =
            |v: &[f64]| softmax(&Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap()).dot(&r);
        out.push((
            "softmax",
            rel_error(dx.data(), &central_diff(loss, x.data(), FD_STEP)),
        ));
    }

    // mse loss w.r.t. predictions
    {
        let (_, grad) = mse_loss(&x, &r).unwrap();
        let loss = |v: &[f64]| {
            mse_loss(&Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap(), &r)
                .unwrap()
                .0
        };
        out.push((
            "mse_loss",
            rel_error(grad.data(), &central_diff(loss, x.data(), FD_STEP)),
        ));
    }

    out
}

/// End-to-end check of the layer-normalized forecaster's training loss
/// against every parameter.
pub fn forecaster_gradient_error(seed: u64) -> f64 {
    use cmit::forecaster::{Forecaster, ModelConfig, NormKind};
    use cmit::par::Execution;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        lookback: 5,
        d_model: 4,
        n_heads: 2,
        n_layers: 2,
        ffn_dim: 6,
        seed,
        ..ModelConfig::default()
    }
    .with_norm(NormKind::Layer);
    let model = Forecaster::new(cfg).unwrap();
    let x = random_tensor(&mut rng, &[3, 5], 1.5);
    let y: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grads) = model
        .loss_and_grad(&x, &y, Phase::Train, 0, Execution::Sequential)
        .unwrap();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for id in model.params().ids() {
        let loss = |v: &[f64]| {
            let mut m = model.clone();
            m.params_mut().get_mut(id).data_mut().copy_from_slice(v);
            m.loss_and_grad(&x, &y, Phase::Train, 0, Execution::Sequential)
                .unwrap()
                .0
        };
        numeric.extend(central_diff(loss, model.params().get(id).data(), FD_STEP));
        analytic.extend_from_slice(grads.get(id).data());
    }
    rel_error(&analytic, &numeric)
}
