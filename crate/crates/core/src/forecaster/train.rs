use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::model::{Forecaster, ModelConfig};
use crate::data::{Scaler, WindowedDataset};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Phase, Tensor};
use crate::par::{derive_seed, Execution};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const NOISE_STREAM: u64 = 0x4e4f_4953;
const EVAL_STREAM: u64 = 0x4556_414c;

/// Run-time knobs that are not part of the model definition.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub exec: Execution,
    /// Stop as soon as an epoch's training loss falls to this value.
    pub stop_at_train_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A fitted forecaster: best-validation parameters plus everything needed
/// to predict in load units.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Forecaster,
    pub scaler: Scaler,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: u64,
}

fn as_tensor(ws: &WindowedDataset) -> Result<Tensor> {
    Tensor::new(vec![ws.len(), ws.lookback], ws.inputs.clone())
}

/// Eval-mode MSE in standardized units.
pub fn evaluate_mse(model: &Forecaster, ws: &WindowedDataset, exec: Execution) -> Result<f64> {
    let seed = derive_seed(model.config().seed, EVAL_STREAM);
    let pred = model.forward_with(&as_tensor(ws)?, Phase::Eval, seed, exec)?;
    Ok(pred
        .data()
        .iter()
        .zip(&ws.targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / ws.len() as f64)
}

/// Adam on mean squared error with early stopping on validation loss.
/// Returns the parameters of the best validation epoch.
pub fn train(
    mut model: Forecaster,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    let cfg: ModelConfig = model.config().clone();
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Argument(
            "training and validation windows must be non-empty".into(),
        ));
    }
    for ws in [train_set, val_set] {
        if ws.lookback != cfg.lookback {
            return Err(Error::Argument(format!(
                "windows have lookback {}, model expects {}",
                ws.lookback, cfg.lookback
            )));
        }
    }
    if val_set.scaler != train_set.scaler {
        return Err(Error::Argument(
            "training and validation windows use different scalers".into(),
        ));
    }
    let exec = opts.exec;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        model.params(),
    );

    let initial_train = evaluate_mse(&model, train_set, exec)?;
    let initial_val = evaluate_mse(&model, val_set, exec)?;
    if !initial_train.is_finite() || !initial_val.is_finite() {
        return Err(Error::NonFinite("loss of the untrained model".into()));
    }
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: initial_train,
        val_loss: initial_val,
    }];
    let mut best = (initial_val, 0usize, model.params().clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ SHUFFLE_STREAM, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let sub = train_set.select(batch);
            let noise_seed = derive_seed(cfg.seed ^ NOISE_STREAM, adam.steps());
            let (loss, mut grads) = model.loss_and_grad(
                &as_tensor(&sub)?,
                &sub.targets,
                Phase::Train,
                noise_seed,
                exec,
            )?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} in epoch {epoch}"
                )));
            }
            if cfg.weight_decay > 0.0 {
                for id in model.params().ids() {
                    let p = model.params().get(id).clone();
                    let g = grads.get_mut(id);
                    for (g, w) in g.data_mut().iter_mut().zip(p.data()) {
                        *g += cfg.weight_decay * w;
                    }
                }
            }
            adam.step(model.params_mut(), &grads)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}: {e}")))?;
            epoch_loss += loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = evaluate_mse(&model, val_set, exec)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss {val_loss} in epoch {epoch}"
            )));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::trace!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params().clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if opts.stop_at_train_loss.is_some_and(|t| train_loss <= t) {
            break;
        }
        if since_best >= cfg.patience {
            log::debug!("early stop after epoch {epoch}, best epoch {}", best.1);
            break;
        }
    }

    model.params_mut().load_from(&best.2)?;
    Ok(TrainedModel {
        model,
        scaler: train_set.scaler,
        history,
        best_epoch: best.1,
        steps: adam.steps(),
    })
}

impl TrainedModel {
    /// Forecasts in load units. Windows scaled differently from the training
    /// data are re-expressed in the model's scaling first.
    pub fn predict(&self, windows: &WindowedDataset) -> Result<Vec<f64>> {
        self.predict_with(windows, Execution::default())
    }

    pub fn predict_with(&self, windows: &WindowedDataset, exec: Execution) -> Result<Vec<f64>> {
        let p = self.model.config().lookback;
        if windows.lookback != p {
            return Err(Error::Argument(format!(
                "windows have lookback {}, model expects {p}",
                windows.lookback
            )));
        }
        let mut inputs = windows.inputs.clone();
        if windows.scaler != self.scaler {
            for v in &mut inputs {
                *v = self.scaler.transform(windows.scaler.inverse(*v));
            }
        }
        let x = Tensor::new(vec![windows.len(), p], inputs)?;
        let seed = derive_seed(self.model.config().seed, EVAL_STREAM);
        let z = self.model.forward_with(&x, Phase::Eval, seed, exec)?;
        Ok(z.data().iter().map(|&v| self.scaler.inverse(v)).collect())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, self.scaler)
    }

    /// `epoch,train_mse,val_mse` rows.
    pub fn loss_trace_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for r in &self.history {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
        }
        out
    }

    pub fn best_val_loss(&self) -> f64 {
        self.history[self.best_epoch].val_loss
    }
}
