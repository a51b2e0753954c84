use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::TimeSeriesDataset;
use crate::error::{Error, Result};

/// z-score standardization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    /// Always positive; a constant fitting set falls back to 1.
    pub std: f64,
}

impl Scaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("cannot fit a scaler on no values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let std = if std > 0.0 && std.is_finite() {
            std
        } else {
            1.0
        };
        if !mean.is_finite() {
            return Err(Error::NonFinite("scaler mean".into()));
        }
        Ok(Scaler { mean, std })
    }

    pub fn identity() -> Self {
        Scaler {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn transform(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One-step-ahead supervision: `p` standardized inputs per target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub lookback: usize,
    /// Scaling applied to `inputs` and `targets`.
    pub scaler: Scaler,
    /// Row-major `[len × lookback]`.
    pub inputs: Vec<f64>,
    /// Standardized targets.
    pub targets: Vec<f64>,
    pub target_dates: Vec<NaiveDate>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.lookback..(i + 1) * self.lookback]
    }

    /// The windows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> WindowedDataset {
        let mut inputs = Vec::with_capacity(idx.len() * self.lookback);
        for &i in idx {
            inputs.extend_from_slice(self.window(i));
        }
        WindowedDataset {
            lookback: self.lookback,
            scaler: self.scaler,
            inputs,
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            target_dates: idx.iter().map(|&i| self.target_dates[i]).collect(),
        }
    }
}

/// Every window of the series: targets at positions `p..len`.
pub fn make_windows(ds: &TimeSeriesDataset, p: usize, scaler: &Scaler) -> Result<WindowedDataset> {
    if p == 0 || ds.len() <= p {
        return Err(Error::Argument(format!(
            "series of length {} is too short for lookback {p}",
            ds.len()
        )));
    }
    let targets: Vec<usize> = (p..ds.len()).collect();
    make_split_windows(ds, &targets, p, scaler)
}

/// Windows whose targets are the given positions. Inputs are the `p` days
/// immediately before each target and may reach back into an earlier split;
/// targets with fewer than `p` predecessors are skipped.
pub fn make_split_windows(
    ds: &TimeSeriesDataset,
    targets: &[usize],
    p: usize,
    scaler: &Scaler,
) -> Result<WindowedDataset> {
    if p == 0 {
        return Err(Error::Argument("lookback must be positive".into()));
    }
    let loads = ds.loads();
    let mut out = WindowedDataset {
        lookback: p,
        scaler: *scaler,
        inputs: Vec::new(),
        targets: Vec::new(),
        target_dates: Vec::new(),
    };
    for &t in targets {
        if t >= loads.len() {
            return Err(Error::Argument(format!(
                "target position {t} beyond series end"
            )));
        }
        if t < p {
            continue;
        }
        out.inputs
            .extend(loads[t - p..t].iter().map(|&v| scaler.transform(v)));
        out.targets.push(scaler.transform(loads[t]));
        out.target_dates.push(ds.dates()[t]);
    }
    if out.is_empty() {
        return Err(Error::Argument(format!(
            "no target in dataset `{}` has {p} days of history",
            ds.id
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, SplitSpec};
    use chrono::NaiveDate;

    fn series(n: usize) -> TimeSeriesDataset {
        let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        TimeSeriesDataset::from_start(
            "s",
            start,
            (0..n)
                .map(|i| 50.0 + (i as f64 * 0.7).sin() * 10.0)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn twenty_days_fourteen_lookback() {
        let ds = series(20);
        let w = make_windows(&ds, 14, &Scaler::identity()).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(*w.targets.last().unwrap(), *ds.loads().last().unwrap());
        assert_eq!(w.window(0), &ds.loads()[0..14]);
    }

    #[test]
    fn too_short_series() {
        assert!(make_windows(&series(14), 14, &Scaler::identity()).is_err());
    }

    #[test]
    fn inverse_scaling_recovers_inputs() {
        let ds = series(40);
        let scaler = Scaler::fit(ds.loads()).unwrap();
        let w = make_windows(&ds, 7, &scaler).unwrap();
        for i in 0..w.len() {
            for (k, &z) in w.window(i).iter().enumerate() {
                assert!((scaler.inverse(z) - ds.loads()[i + k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_fit_keeps_unit_scale() {
        let s = Scaler::fit(&[3.0; 5]).unwrap();
        assert_eq!(s.std, 1.0);
        assert_eq!(s.transform(3.0), 0.0);
    }

    #[test]
    fn split_windows_respect_target_boundaries() {
        let ds = series(789);
        let s = split(&ds, &SplitSpec::default()).unwrap();
        let scaler = Scaler::identity();
        let train = make_split_windows(&ds, &s.train, 14, &scaler).unwrap();
        let val = make_split_windows(&ds, &s.validation, 14, &scaler).unwrap();
        let test = make_split_windows(&ds, &s.test, 14, &scaler).unwrap();
        assert_eq!(train.len(), 671 - 14);
        assert_eq!(val.len(), 59);
        assert_eq!(test.len(), 59);
        let spec = SplitSpec::default();
        assert!(val
            .target_dates
            .iter()
            .all(|d| spec.validation.contains(*d)));
        assert!(train
            .target_dates
            .iter()
            .all(|d| spec.train.iter().any(|r| r.contains(*d))));
    }
}
