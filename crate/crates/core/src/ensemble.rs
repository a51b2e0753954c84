//! Simplex-weighted fusion of forecasters, fitted with particle swarm
//! optimization.
//!
//! The fitting set stacks the models' predictions column-wise into `X` and
//! the observations into `Y`; the swarm minimizes `‖Y − X·w‖` over weight
//! vectors `w` on the probability simplex.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a weight vector lies on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Per-model predictions aligned with the observations they target.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTrainingSet {
    columns: Vec<Vec<f64>>,
    r: Vec<f64>,
}

impl EnsembleTrainingSet {
    /// `columns[j][i]` is model `j`'s prediction for observation `i`.
    pub fn new(columns: Vec<Vec<f64>>, r: Vec<f64>) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::Argument(format!(
                "an ensemble needs at least 2 models, got {}",
                columns.len()
            )));
        }
        if r.is_empty() {
            return Err(Error::Argument("ensemble fitting set is empty".into()));
        }
        for (j, c) in columns.iter().enumerate() {
            if c.len() != r.len() {
                return Err(Error::Argument(format!(
                    "model {j} has {} predictions for {} observations",
                    c.len(),
                    r.len()
                )));
            }
            if let Some(i) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::Argument(format!(
                    "model {j} prediction {i} is not finite"
                )));
            }
        }
        if let Some(i) = r.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Argument(format!(
                "observation {i} is {}, loads must be positive",
                r[i]
            )));
        }
        Ok(EnsembleTrainingSet { columns, r })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn n_models(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn a(&self) -> &[f64] {
        &self.columns[0]
    }

    pub fn b(&self) -> &[f64] {
        &self.columns[1]
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    /// Row `i` of `X`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

/// Fitting set for the two-model case.
pub fn build_ensemble_set(f1: &[f64], f2: &[f64], truth: &[f64]) -> Result<EnsembleTrainingSet> {
    EnsembleTrainingSet::new(vec![f1.to_vec(), f2.to_vec()], truth.to_vec())
}

/// `‖Y − X·w‖₂`.
pub fn objective(set: &EnsembleTrainingSet, w: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), set.n_models());
    (0..set.len())
        .map(|i| {
            let fused: f64 = set.columns.iter().zip(w).map(|(c, wj)| c[i] * wj).sum();
            let e = set.r[i] - fused;
            e * e
        })
        .sum::<f64>()
        .sqrt()
}

/// Weighted sum of per-model predictions.
pub fn combine(preds: &[f64], w: &[f64]) -> f64 {
    debug_assert_eq!(preds.len(), w.len());
    preds.iter().zip(w).map(|(p, wj)| p * wj).sum()
}

/// Applies [`combine`] to aligned prediction columns.
pub fn combine_series(columns: &[&[f64]], w: &[f64]) -> Result<Vec<f64>> {
    if columns.len() != w.len() {
        return Err(Error::Argument(format!(
            "{} prediction series for {} weights",
            columns.len(),
            w.len()
        )));
    }
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Argument("prediction series differ in length".into()));
    }
    Ok((0..n)
        .map(|i| columns.iter().zip(w).map(|(c, wj)| c[i] * wj).sum())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RDistribution {
    #[default]
    StandardNormal,
    Uniform01,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PositionUpdate {
    /// `w ← ω·w + v`
    #[default]
    Damped,
    /// `w ← w + v`
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmConfig {
    pub q: usize,
    pub iters: usize,
    pub omega: f64,
    pub c1: f64,
    pub c2: f64,
    pub r_distribution: RDistribution,
    pub position_update: PositionUpdate,
    pub seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            q: 30,
            iters: 100,
            omega: 0.7,
            c1: 1.5,
            c2: 1.5,
            r_distribution: RDistribution::StandardNormal,
            position_update: PositionUpdate::Damped,
            seed: 0,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::Config(format!(
                "swarm needs at least 2 particles, got {}",
                self.q
            )));
        }
        if self.iters < 1 {
            return Err(Error::Config("swarm needs at least 1 iteration".into()));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::Config(format!(
                "inertia {} is outside (0, 1]",
                self.omega
            )));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c1.is_finite() && self.c2.is_finite()) {
            return Err(Error::Config(format!(
                "acceleration coefficients must be positive, got {} and {}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }

    fn draw_r(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.r_distribution {
            RDistribution::StandardNormal => StandardNormal.sample(rng),
            RDistribution::Uniform01 => rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub pbest_w: Vec<f64>,
    pub pbest_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmFit {
    pub w: Vec<f64>,
    pub f_opt: f64,
    /// gbest objective after each iteration's best-position update.
    pub trace: Vec<f64>,
}

/// Clips to `[0, 1]` and rescales to unit sum; an all-zero vector becomes
/// uniform.
pub fn project_to_simplex(w: &mut [f64]) {
    for x in w.iter_mut() {
        *x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    }
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        for x in w.iter_mut() {
            *x /= s;
        }
    } else {
        let u = 1.0 / w.len() as f64;
        w.fill(u);
    }
}

pub fn on_simplex(w: &[f64]) -> bool {
    (w.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE
        && w.iter().all(|x| (0.0..=1.0).contains(x))
}

/// Initial swarm: the first `m` particles sit on the corners of the simplex,
/// the rest are uniform (flat Dirichlet) draws. Velocities start at zero.
fn initial_swarm(
    set: &EnsembleTrainingSet,
    cfg: &SwarmConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Particle> {
    let m = set.n_models();
    (0..cfg.q)
        .map(|i| {
            let w = if i < m {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                e
            } else {
                let mut g: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
                project_to_simplex(&mut g);
                g
            };
            let f = objective(set, &w);
            Particle {
                v: vec![0.0; m],
                pbest_w: w.clone(),
                pbest_f: f,
                w,
            }
        })
        .collect()
}

/// Runs the swarm and also returns its final state, for inspection.
pub fn pso_fit_with_swarm(
    set: &EnsembleTrainingSet,
    cfg: &SwarmConfig,
) -> Result<(SwarmFit, Vec<Particle>)> {
    cfg.validate()?;
    if cfg.q < set.n_models() {
        return Err(Error::Config(format!(
            "{} particles cannot cover the {} simplex corners",
            cfg.q,
            set.n_models()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut swarm = initial_swarm(set, cfg, &mut rng);

    // The global best starts at the best initial position (first on ties).
    let mut g = 0;
    for (i, p) in swarm.iter().enumerate() {
        if p.pbest_f < swarm[g].pbest_f {
            g = i;
        }
    }
    let mut gbest_w = swarm[g].pbest_w.clone();
    let mut gbest_f = swarm[g].pbest_f;
    let mut trace = Vec::with_capacity(cfg.iters);

    for _ in 0..cfg.iters {
        for p in swarm.iter_mut() {
            let f = objective(set, &p.w);
            if f < p.pbest_f {
                p.pbest_f = f;
                p.pbest_w.clone_from(&p.w);
            }
            if p.pbest_f < gbest_f {
                gbest_f = p.pbest_f;
                gbest_w.clone_from(&p.pbest_w);
            }
        }
        trace.push(gbest_f);
        for p in swarm.iter_mut() {
            let r1 = cfg.draw_r(&mut rng);
            let r2 = cfg.draw_r(&mut rng);
            for j in 0..p.w.len() {
                let v = cfg.omega * p.v[j]
                    + cfg.c1 * r1 * (p.pbest_w[j] - p.w[j])
                    + cfg.c2 * r2 * (gbest_w[j] - p.w[j]);
                p.v[j] = v.clamp(-1.0, 1.0);
                p.w[j] = match cfg.position_update {
                    PositionUpdate::Damped => cfg.omega * p.w[j] + p.v[j],
                    PositionUpdate::Standard => p.w[j] + p.v[j],
                };
            }
            project_to_simplex(&mut p.w);
        }
    }
    Ok((
        SwarmFit {
            w: gbest_w,
            f_opt: gbest_f,
            trace,
        },
        swarm,
    ))
}

pub fn pso_fit(set: &EnsembleTrainingSet, cfg: &SwarmConfig) -> Result<SwarmFit> {
    pso_fit_with_swarm(set, cfg).map(|(fit, _)| fit)
}

/// Persisted outcome of a weight fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub w: Vec<f64>,
    pub f_opt: f64,
    /// Objective of each single model (each simplex corner).
    pub corner_objectives: Vec<f64>,
    pub config: SwarmConfig,
    pub seed: u64,
    pub trace: Vec<f64>,
}

impl WeightRecord {
    pub fn new(set: &EnsembleTrainingSet, cfg: &SwarmConfig, fit: SwarmFit) -> Self {
        let m = set.n_models();
        let corner_objectives = (0..m)
            .map(|j| {
                let mut e = vec![0.0; m];
                e[j] = 1.0;
                objective(set, &e)
            })
            .collect();
        WeightRecord {
            w: fit.w,
            f_opt: fit.f_opt,
            corner_objectives,
            config: *cfg,
            seed: cfg.seed,
            trace: fit.trace,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weight record serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn halves() -> EnsembleTrainingSet {
        build_ensemble_set(&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]).unwrap()
    }

    /// Exhaustive search over `(t, 1 − t)` for `t` on a 1e-4 grid.
    fn grid_argmin(set: &EnsembleTrainingSet) -> (f64, f64) {
        (0..=10_000)
            .map(|k| {
                let t = k as f64 * 1e-4;
                (t, objective(set, &[t, 1.0 - t]))
            })
            .fold(
                (0.0, f64::INFINITY),
                |best, c| if c.1 < best.1 { c } else { best },
            )
    }

    fn random_set(seed: u64, n: usize) -> EnsembleTrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..n).map(|_| 100.0 + 20.0 * rng.random::<f64>()).collect();
        let a: Vec<f64> = r
            .iter()
            .map(|v| v + 8.0 * rng.sample::<f64, _>(StandardNormal) + 3.0)
            .collect();
        let b: Vec<f64> = r
            .iter()
            .map(|v| v + 8.0 * rng.sample::<f64, _>(StandardNormal) - 3.0)
            .collect();
        build_ensemble_set(&a, &b, &r).unwrap()
    }

    #[test]
    fn assembly() {
        let s = build_ensemble_set(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]).unwrap();
        assert_eq!(s.row(0), vec![1.0, 3.0]);
        assert_eq!(s.row(1), vec![2.0, 4.0]);
        assert_eq!(s.r(), &[5.0, 6.0]);
        assert!(build_ensemble_set(&[], &[], &[]).is_err());
        assert_eq!(build_ensemble_set(&[1.0], &[2.0], &[3.0]).unwrap().len(), 1);
        assert!(build_ensemble_set(&[1.0], &[2.0, 3.0], &[3.0]).is_err());
        assert!(build_ensemble_set(&[1.0], &[2.0], &[0.0]).is_err());
        assert!(build_ensemble_set(&[f64::NAN], &[2.0], &[1.0]).is_err());
    }

    #[test]
    fn objective_values() {
        let s = halves();
        assert_eq!(objective(&s, &[0.5, 0.5]), 0.0);
        assert_abs_diff_eq!(objective(&s, &[1.0, 0.0]), 0.5f64.sqrt(), epsilon = 1e-12);
        let exact = build_ensemble_set(&[3.0, 4.0], &[1.0, 9.0], &[3.0, 4.0]).unwrap();
        assert_eq!(objective(&exact, &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn combine_values() {
        assert_eq!(combine(&[42.0, 0.0], &[1.0, 0.0]), 42.0);
        assert_eq!(combine(&[10.0, 20.0], &[0.5, 0.5]), 15.0);
        assert_eq!(combine(&[0.0, 7.5], &[0.0, 1.0]), 7.5);
        assert_eq!(
            combine_series(&[&[10.0, 2.0], &[20.0, 4.0]], &[0.5, 0.5]).unwrap(),
            vec![15.0, 3.0]
        );
    }

    #[test]
    fn exact_first_model_is_found() {
        let s = build_ensemble_set(&[3.0, 4.0, 5.0], &[1.0, 9.0, 2.0], &[3.0, 4.0, 5.0]).unwrap();
        let fit = pso_fit(&s, &SwarmConfig::default()).unwrap();
        assert_abs_diff_eq!(fit.w[0], 1.0, epsilon = 1e-6);
        assert!(fit.f_opt <= 1e-9);
    }

    #[test]
    fn symmetric_set_gives_even_weights() {
        let s = halves();
        assert_abs_diff_eq!(grid_argmin(&s).0, 0.5, epsilon = 1e-12);
        let fit = pso_fit(&s, &SwarmConfig::default()).unwrap();
        assert_abs_diff_eq!(fit.w[0], 0.5, epsilon = 1e-2);
    }

    #[test]
    fn matches_grid_oracle_in_both_modes() {
        for seed in 0..10 {
            let s = random_set(seed, 40);
            let (t, _) = grid_argmin(&s);
            for mode in [PositionUpdate::Damped, PositionUpdate::Standard] {
                for dist in [RDistribution::StandardNormal, RDistribution::Uniform01] {
                    let cfg = SwarmConfig {
                        seed,
                        position_update: mode,
                        r_distribution: dist,
                        ..Default::default()
                    };
                    let fit = pso_fit(&s, &cfg).unwrap();
                    assert!(
                        (fit.w[0] - t).abs() <= 1e-2,
                        "{seed} {mode:?} {dist:?}: {} vs {t}",
                        fit.w[0]
                    );
                }
            }
        }
    }

    #[test]
    fn three_models() {
        let r = vec![10.0, 20.0, 30.0, 40.0];
        let s = EnsembleTrainingSet::new(
            vec![
                vec![9.0, 19.0, 29.0, 39.0],
                vec![11.0, 21.0, 31.0, 41.0],
                vec![1.0; 4],
            ],
            r,
        )
        .unwrap();
        let fit = pso_fit(&s, &SwarmConfig::default()).unwrap();
        assert!(on_simplex(&fit.w));
        assert!(fit.w[2] < 0.05);
        assert!(fit.f_opt < objective(&s, &[1.0, 0.0, 0.0]));
    }

    #[test]
    fn projection() {
        let mut w = [1.5, -0.5];
        project_to_simplex(&mut w);
        assert_eq!(w, [1.0, 0.0]);
        let mut w = [-1.0, -2.0];
        project_to_simplex(&mut w);
        assert_eq!(w, [0.5, 0.5]);
        let mut w = [0.2, 0.2];
        project_to_simplex(&mut w);
        assert_eq!(w, [0.5, 0.5]);
    }

    #[test]
    fn invalid_configs() {
        let s = halves();
        for cfg in [
            SwarmConfig {
                q: 1,
                ..Default::default()
            },
            SwarmConfig {
                iters: 0,
                ..Default::default()
            },
            SwarmConfig {
                omega: 0.0,
                ..Default::default()
            },
            SwarmConfig {
                omega: 1.5,
                ..Default::default()
            },
            SwarmConfig {
                c1: 0.0,
                ..Default::default()
            },
            SwarmConfig {
                c2: -1.0,
                ..Default::default()
            },
        ] {
            assert!(pso_fit(&s, &cfg).is_err());
        }
    }

    #[test]
    fn record_roundtrip() {
        let s = halves();
        let cfg = SwarmConfig {
            seed: 9,
            ..Default::default()
        };
        let rec = WeightRecord::new(&s, &cfg, pso_fit(&s, &cfg).unwrap());
        assert_eq!(rec.corner_objectives.len(), 2);
        let back: WeightRecord = serde_json::from_str(&rec.to_json()).unwrap();
        assert_eq!(back, rec);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn swarm_invariants(seed in 0u64..10_000, n in 1usize..30, omega in 0.1f64..1.0, standard in proptest::bool::ANY) {
            let s = random_set(seed, n);
            let cfg = SwarmConfig {
                seed,
                omega,
                iters: 30,
                position_update: if standard { PositionUpdate::Standard } else { PositionUpdate::Damped },
                ..Default::default()
            };
            let (fit, swarm) = pso_fit_with_swarm(&s, &cfg).unwrap();
            prop_assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(on_simplex(&fit.w));
            for p in &swarm {
                prop_assert!(on_simplex(&p.w));
                prop_assert!(p.v.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
            let corners = objective(&s, &[1.0, 0.0]).min(objective(&s, &[0.0, 1.0]));
            prop_assert!(fit.f_opt <= corners + 1e-9);
            prop_assert!((objective(&s, &fit.w) - fit.f_opt).abs() <= 1e-9 * (1.0 + fit.f_opt));
            prop_assert!(pso_fit(&s, &cfg).unwrap() == fit);
        }
    }
}
