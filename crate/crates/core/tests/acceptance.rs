//! Exit criteria. Each test prints one `[PASS]`/`[FAIL]` line to stderr
//! (bypassing libtest's capture) and then asserts the same condition.
//! Tests take a shared lock so that wall-clock limits are not distorted by
//! sibling tests competing for cores.

mod common;

use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use cmit::cloud::{forward_generate, reverse_generate, CloudDescriptor, VarianceMode};
use cmit::data::{generate_synthetic, make_windows, Scaler, SyntheticProfile};
use cmit::ensemble::{build_ensemble_set, objective, pso_fit, EnsembleTrainingSet, SwarmConfig};
use cmit::forecaster::{evaluate_mse, train, Forecaster, ModelConfig, NormKind, TrainOptions};
use cmit::nn::CloudNormConfig;
use cmit::par::Execution;
use cmit::pipeline::{cmd_run, cmd_stats, DatasetSource, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict line and returns whether every check passed.
fn report(criterion: u32, title: &str, checks: &[(String, bool)]) -> bool {
    let ok = checks.iter().all(|c| c.1);
    let mut line = format!(
        "[{}] criterion {criterion}: {title}",
        if ok { "PASS" } else { "FAIL" }
    );
    for (what, pass) in checks {
        line.push_str(&format!(
            "\n    {} {what}",
            if *pass { "ok  " } else { "FAIL" }
        ));
    }
    let _ = writeln!(std::io::stderr(), "{line}");
    ok
}

fn within(actual: f64, expected: f64, tol: f64) -> bool {
    (actual - expected).abs() <= tol
}

#[test]
fn criterion_1_published_table_statistics() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let (table, rep, files) = cmd_stats(None, dir.path(), false).unwrap();
    let elapsed = started.elapsed();
    let mut checks = Vec::new();

    for (j, want) in [24.72, 24.41, 22.01].into_iter().enumerate() {
        let got = rep.mean_mape[j];
        checks.push((
            format!(
                "mean MAPE {}: {got:.4} vs {want} ± 0.01",
                table.model_names()[j]
            ),
            within(got, want, 0.01),
        ));
    }
    let wl: Vec<String> = rep
        .win_loss
        .iter()
        .map(|(w, l)| format!("{w}/{l}"))
        .collect();
    checks.push((
        format!("win/loss {wl:?} vs [1/30, 5/26, 25/6]"),
        wl == ["1/30", "5/26", "25/6"],
    ));
    let ranks = rep
        .friedman
        .as_ref()
        .map(|f| f.avg_ranks.clone())
        .unwrap_or_default();
    for (j, want) in [2.35, 2.32, 1.32].into_iter().enumerate() {
        let got = ranks.get(j).copied().unwrap_or(f64::NAN);
        checks.push((
            format!(
                "average rank {}: {got:.4} vs {want} ± 0.01",
                table.model_names()[j]
            ),
            within(got, want, 0.01),
        ));
    }
    let expected = [
        ("Transformer", 481.0, 15.0, 2.6e-6),
        ("Cloud Transformer", 413.5, 82.5, 6.1e-4),
    ];
    for (other, rp, rm, p) in expected {
        match rep.comparisons.iter().find(|c| c.other == other) {
            Some(c) => {
                let r = &c.result;
                checks.push((
                    format!(
                        "CMIT vs {other}: R+ {} R- {} vs {rp}/{rm}",
                        r.r_plus, r.r_minus
                    ),
                    r.r_plus == rp && r.r_minus == rm,
                ));
                let rel = (r.p_one_sided - p).abs() / p;
                checks.push((
                    format!(
                        "CMIT vs {other}: p {:.3e} vs {p:e} within 20%",
                        r.p_one_sided
                    ),
                    rel <= 0.2,
                ));
            }
            None => checks.push((format!("CMIT vs {other}: comparison missing"), false)),
        }
    }
    let main = std::fs::read_to_string(&files.mape_table).unwrap();
    checks.push((
        "emitted Mean-MAPE row contains 24.72".into(),
        main.contains("Mean-MAPE,24.72"),
    ));
    checks.push((
        format!("runtime {elapsed:.2?} < 1 s"),
        elapsed < Duration::from_secs(1),
    ));
    assert!(report(1, "statistics of the published MAPE table", &checks));
}

#[test]
fn criterion_2_cloud_roundtrip() {
    let _guard = serial();
    let concept = CloudDescriptor::new(10.0, 2.0, 0.2).unwrap();
    let mut checks = Vec::new();
    for seed in [1u64, 2, 3] {
        let started = Instant::now();
        let drops = forward_generate(&concept, 100_000, seed).unwrap();
        let xs: Vec<f64> = drops.iter().map(|d| d.x).collect();
        let est = reverse_generate(&xs, VarianceMode::Population).unwrap();
        let elapsed = started.elapsed();
        checks.push((
            format!(
                "seed {seed}: Ex {:.4} En {:.4} He {:.4} in {elapsed:.2?}",
                est.ex, est.en, est.he
            ),
            within(est.ex, 10.0, 0.05)
                && within(est.en, 2.0, 0.05)
                && within(est.he, 0.2, 0.15)
                && elapsed < Duration::from_secs(5),
        ));
    }
    assert!(report(
        2,
        "forward then reverse cloud generation recovers the concept",
        &checks
    ));
}

#[test]
fn criterion_3_gradient_suite() {
    let _guard = serial();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..20 {
        for (layer, err) in common::layer_gradient_errors(1000 + seed) {
            match worst.iter_mut().find(|w| w.0 == layer) {
                Some(w) => w.1 = w.1.max(err),
                None => worst.push((layer, err)),
            }
        }
    }
    let checks: Vec<(String, bool)> = worst
        .iter()
        .map(|(layer, err)| {
            (
                format!("{layer}: max relative error {err:.2e} over 20 seeds ≤ 1e-4"),
                *err <= common::FD_TOLERANCE,
            )
        })
        .collect();
    assert!(report(
        3,
        "layer gradients match central differences",
        &checks
    ));
}

fn overfit(kind: NormKind) -> (f64, u64) {
    let ds = generate_synthetic(&SyntheticProfile::default(), 78, 5).unwrap();
    let scaler = Scaler::fit(ds.loads()).unwrap();
    let windows = make_windows(&ds, 14, &scaler).unwrap();
    assert_eq!(windows.len(), 64);
    let target = match kind {
        NormKind::Layer => 1e-3,
        NormKind::Cloud => 1e-2,
    };
    let cfg = ModelConfig {
        n_layers: 2,
        lr: 1e-3,
        batch_size: 64,
        max_epochs: 2000,
        patience: usize::MAX,
        cloud: CloudNormConfig::deterministic(),
        seed: 1,
        ..ModelConfig::default()
    }
    .with_norm(kind);
    let opts = TrainOptions {
        exec: Execution::Parallel,
        stop_at_train_loss: Some(target),
    };
    let trained = train(Forecaster::new(cfg).unwrap(), &windows, &windows, &opts).unwrap();
    (
        evaluate_mse(&trained.model, &windows, Execution::Parallel).unwrap(),
        trained.steps,
    )
}

#[test]
fn criterion_4_overfit_oracle() {
    let _guard = serial();
    let started = Instant::now();
    let (layer_mse, layer_steps) = overfit(NormKind::Layer);
    let (cloud_mse, cloud_steps) = overfit(NormKind::Cloud);
    let elapsed = started.elapsed();
    let checks = vec![
        (
            format!(
                "layer norm: train MSE {layer_mse:.3e} ≤ 1e-3 after {layer_steps} steps ≤ 2000"
            ),
            layer_mse <= 1e-3 && layer_steps <= 2000,
        ),
        (
            format!(
                "cloud norm: train MSE {cloud_mse:.3e} ≤ 1e-2 after {cloud_steps} steps ≤ 2000"
            ),
            cloud_mse <= 1e-2 && cloud_steps <= 2000,
        ),
        (
            format!("runtime {elapsed:.1?} < 2 min"),
            elapsed < Duration::from_secs(120),
        ),
    ];
    assert!(report(
        4,
        "two-layer forecaster overfits 64 windows",
        &checks
    ));
}

fn random_set(rng: &mut ChaCha8Rng) -> EnsembleTrainingSet {
    let n = rng.random_range(5..60);
    let level = rng.random_range(10.0..1000.0);
    let r: Vec<f64> = (0..n).map(|_| level * rng.random_range(0.8..1.2)).collect();
    let noisy = |rng: &mut ChaCha8Rng, bias: f64, sd: f64| -> Vec<f64> {
        r.iter()
            .map(|v| v + level * (bias + sd * rng.sample::<f64, _>(StandardNormal)))
            .collect()
    };
    let (b1, s1) = (rng.random_range(-0.1..0.1), rng.random_range(0.02..0.2));
    let (b2, s2) = (rng.random_range(-0.1..0.1), rng.random_range(0.02..0.2));
    let a = noisy(rng, b1, s1);
    let b = noisy(rng, b2, s2);
    build_ensemble_set(&a, &b, &r).unwrap()
}

/// Argmin of the objective over `(t, 1 − t)` with `t` on a 1e-4 grid.
fn grid_oracle(set: &EnsembleTrainingSet) -> f64 {
    let mut best = (0.0, f64::INFINITY);
    for k in 0..=10_000 {
        let t = k as f64 * 1e-4;
        let f = objective(set, &[t, 1.0 - t]);
        if f < best.1 {
            best = (t, f);
        }
    }
    best.0
}

#[test]
fn criterion_5_swarm_correctness() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut monotone, mut corner_ok) = (0, 0);
    let mut worst_gap = 0.0f64;
    for i in 0..100 {
        let set = random_set(&mut rng);
        let fit = pso_fit(
            &set,
            &SwarmConfig {
                seed: i,
                ..Default::default()
            },
        )
        .unwrap();
        if fit.trace.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
        let corners = objective(&set, &[1.0, 0.0]).min(objective(&set, &[0.0, 1.0]));
        if fit.f_opt <= corners + 1e-9 {
            corner_ok += 1;
        }
    }
    let mut within_grid = 0;
    for i in 0..20 {
        let set = random_set(&mut rng);
        let fit = pso_fit(
            &set,
            &SwarmConfig {
                seed: 500 + i,
                ..Default::default()
            },
        )
        .unwrap();
        let gap = (fit.w[0] - grid_oracle(&set)).abs();
        worst_gap = worst_gap.max(gap);
        if gap <= 1e-2 {
            within_grid += 1;
        }
        let corners = objective(&set, &[1.0, 0.0]).min(objective(&set, &[0.0, 1.0]));
        if fit.f_opt <= corners + 1e-9 {
            corner_ok += 1;
        }
    }
    let checks = vec![
        (format!("gbest trace non-increasing on {monotone}/100 sets"), monotone == 100),
        (format!("weight within 1e-2 of grid oracle on {within_grid}/20 sets (worst {worst_gap:.2e})"), within_grid == 20),
        (format!("f_opt ≤ best corner + 1e-9 on {corner_ok}/120 sets"), corner_ok == 120),
    ];
    assert!(report(5, "simplex swarm optimizer", &checks));
}

fn desk_config(out: &Path) -> RunConfig {
    let small = |kind: NormKind| {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            ffn_dim: 16,
            max_epochs: 12,
            batch_size: 64,
            patience: 4,
            ..ModelConfig::default()
        }
        .with_norm(kind)
    };
    RunConfig {
        datasets: DatasetSource::Synthetic {
            count: 5,
            n_days: 789,
        },
        transformer: small(NormKind::Layer),
        cloud_transformer: small(NormKind::Cloud),
        out_dir: out.to_path_buf(),
        seed: 7,
        ..RunConfig::default()
    }
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn criterion_6_end_to_end() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    let summary = cmd_run(&cfg).unwrap();
    let mut checks = vec![(
        format!("exit code {}", summary.exit_code()),
        summary.exit_code() == 0,
    )];
    let table = summary.table.as_ref();
    let shape_ok = table.is_some_and(|t| {
        t.n_datasets() == 5 && t.n_models() == 3 && t.rows().iter().flatten().all(|v| v.is_finite())
    });
    checks.push((
        "evaluation table has 5 rows of 3 finite MAPEs".into(),
        shape_ok,
    ));
    let report_dir = dir.path().join("report");
    let reports = [
        "mape_table.csv",
        "significance.csv",
        "friedman.csv",
        "bar_data.csv",
        "bar_chart.svg",
    ];
    checks.push((
        "report files emitted".into(),
        reports.iter().all(|f| report_dir.join(f).is_file())
            && dir.path().join("eval_table.csv").is_file(),
    ));
    for id in table.map(|t| t.dataset_ids().to_vec()).unwrap_or_default() {
        let w = read_json(&dir.path().join("datasets").join(&id).join("weights.json"));
        let f_opt = w["f_opt"].as_f64().unwrap();
        let corners: Vec<f64> = w["corner_objectives"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        let best = corners.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push((
            format!("{id}: fused fitting objective {f_opt:.3} ≤ single models {corners:.3?}"),
            f_opt <= best,
        ));
    }
    for (model, n) in &summary.manifest.fused_not_worse_on_test {
        let _ = writeln!(
            std::io::stderr(),
            "    info: fused model at least as accurate as {model} on {n}/5 test sets"
        );
    }
    assert!(report(6, "full sweep over 5 synthetic datasets", &checks));
}

#[test]
fn criterion_7_determinism() {
    let _guard = serial();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_b = RunConfig {
        workers: Some(1),
        ..desk_config(b.path())
    };
    let sa = cmd_run(&desk_config(a.path())).unwrap();
    cmd_run(&cfg_b).unwrap();
    let mut files = vec![std::path::PathBuf::from("eval_table.csv")];
    for id in sa.table.as_ref().unwrap().dataset_ids() {
        files.push(Path::new("datasets").join(id).join("weights.json"));
    }
    let checks: Vec<(String, bool)> = files
        .iter()
        .map(|f| {
            let same = std::fs::read(a.path().join(f)).unwrap()
                == std::fs::read(b.path().join(f)).unwrap();
            (format!("{} byte-identical", f.display()), same)
        })
        .collect();
    assert!(report(7, "repeated runs are byte-identical", &checks));
}
