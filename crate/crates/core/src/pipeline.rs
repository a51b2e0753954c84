//! Batch experiments: synthetic data export and the full train, fuse and
//! evaluate sweep over many datasets.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    default_profiles, generate_synthetic, load_csv, make_split_windows, split, Scaler, SplitSpec,
    TimeSeriesDataset,
};
use crate::ensemble::{
    build_ensemble_set, combine_series, pso_fit, PositionUpdate, SwarmConfig, WeightRecord,
};
use crate::error::{Error, Result};
use crate::forecaster::{train, Forecaster, ModelConfig, NormKind, TrainOptions, TrainedModel};
use crate::par::{derive_seed, map_indexed, with_workers, Execution};
use crate::stats::{emit_report, mape, EvalTable, StatsReport};

/// Bumped whenever the layout of an emitted file changes.
pub const ARTIFACT_VERSION: u32 = 1;
pub const FUSED_MODEL_NAME: &str = "CMIT";

/// Where the load series come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// `count` generated clusters starting 2021-01-01.
    Synthetic { count: usize, n_days: usize },
    /// `date,load` CSV files; each file stem becomes the dataset id.
    Files { paths: Vec<PathBuf> },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            count: 31,
            n_days: 789,
        }
    }
}

/// Which forecasters a run trains. Only `Both` produces the fused model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NormSelection {
    Layer,
    Cloud,
    #[default]
    Both,
}

/// Declarative description of a sweep. Model and swarm seeds are derived
/// from `seed` per dataset, so the `seed` fields of the nested configs are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: DatasetSource,
    pub split: SplitSpec,
    /// Layer-normalized forecaster.
    pub transformer: ModelConfig,
    /// Cloud-normalized forecaster.
    pub cloud_transformer: ModelConfig,
    pub norm: NormSelection,
    pub swarm: SwarmConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Datasets processed concurrently; `None` uses every core.
    pub workers: Option<usize>,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            datasets: DatasetSource::default(),
            split: SplitSpec::default(),
            transformer: ModelConfig::default().with_norm(NormKind::Layer),
            cloud_transformer: ModelConfig::default().with_norm(NormKind::Cloud),
            norm: NormSelection::Both,
            swarm: SwarmConfig::default(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            workers: None,
            svg: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match &self.datasets {
            DatasetSource::Synthetic { count, .. } if *count == 0 => {
                return Err(Error::Config(
                    "synthetic dataset count must be positive".into(),
                ))
            }
            DatasetSource::Files { paths } if paths.is_empty() => {
                return Err(Error::Config("no dataset files given".into()))
            }
            _ => {}
        }
        self.split.validate()?;
        for (name, cfg, kind) in [
            ("transformer", &self.transformer, NormKind::Layer),
            (
                "cloud_transformer",
                &self.cloud_transformer,
                NormKind::Cloud,
            ),
        ] {
            cfg.validate()
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
            if cfg.norm_kind != kind {
                return Err(Error::Config(format!(
                    "{name} must use {kind:?} normalization"
                )));
            }
        }
        self.swarm.validate()?;
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every field that affects results.
    /// The output directory and worker count are excluded.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.workers = None;
        sha256_hex(
            serde_json::to_string(&c)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    fn models(&self) -> Vec<&ModelConfig> {
        match self.norm {
            NormSelection::Layer => vec![&self.transformer],
            NormSelection::Cloud => vec![&self.cloud_transformer],
            NormSelection::Both => vec![&self.transformer, &self.cloud_transformer],
        }
    }

    pub fn model_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .models()
            .iter()
            .map(|m| m.norm_kind.model_name().to_string())
            .collect();
        if self.norm == NormSelection::Both {
            names.push(FUSED_MODEL_NAME.to_string());
        }
        names
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub norm: Option<NormSelection>,
    pub position_update: Option<PositionUpdate>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out_dir {
            cfg.out_dir.clone_from(o);
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if let Some(n) = self.norm {
            cfg.norm = n;
        }
        if let Some(p) = self.position_update {
            cfg.swarm.position_update = p;
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Provenance carried by every emitted artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub artifact: String,
    pub artifact_version: u32,
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl ArtifactMeta {
    pub fn new(artifact: &str, config_sha256: &str, seed: u64) -> Self {
        ArtifactMeta {
            artifact: artifact.to_string(),
            artifact_version: ARTIFACT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config_sha256.to_string(),
            seed,
        }
    }

    /// Comment lines for text artifacts.
    pub fn comment_lines(&self) -> Vec<String> {
        vec![format!(
            "artifact={} artifact_version={} tool_version={} config_sha256={} seed={}",
            self.artifact, self.artifact_version, self.tool_version, self.config_sha256, self.seed
        )]
    }

    fn csv_header(&self) -> String {
        self.comment_lines()
            .iter()
            .map(|l| format!("# {l}\n"))
            .collect()
    }
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    meta: &'a ArtifactMeta,
    #[serde(flatten)]
    body: &'a T,
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_stamped<T: Serialize>(path: &Path, meta: &ArtifactMeta, body: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Stamped { meta, body }).expect("artifact serializes");
    write_file(path, &(text + "\n"))
}

/// Generated clusters named `cluster01`, `cluster02`, ...
pub fn synthetic_datasets(
    count: usize,
    n_days: usize,
    seed: u64,
) -> Result<Vec<TimeSeriesDataset>> {
    let width = count.to_string().len().max(2);
    default_profiles(count, seed)
        .iter()
        .enumerate()
        .map(|(i, profile)| {
            let mut ds = generate_synthetic(profile, n_days, derive_seed(seed, i as u64))?;
            ds.id = format!("cluster{:0width$}", i + 1);
            Ok(ds)
        })
        .collect()
}

/// Writes `count` synthetic CSVs into `out_dir` and returns their paths.
pub fn cmd_generate(
    count: usize,
    n_days: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<(TimeSeriesDataset, PathBuf)>> {
    if count == 0 {
        return Err(Error::Config("cluster count must be positive".into()));
    }
    let sets = synthetic_datasets(count, n_days, seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    sets.into_iter()
        .map(|ds| {
            let path = out_dir.join(format!("{}.csv", ds.id));
            ds.write_csv(&path)?;
            Ok((ds, path))
        })
        .collect()
}

/// Per-dataset result of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOutcome {
    pub id: String,
    pub split_days: (usize, usize, usize),
    /// Test MAPE in the order of [`RunConfig::model_names`].
    pub test_mape: Vec<f64>,
    pub validation_mape: Vec<f64>,
    /// Ensemble objective of each single model and of the fused weights on
    /// the validation fitting set, when both forecasters were trained.
    pub fitting_objectives: Option<FittingObjectives>,
    pub best_epochs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittingObjectives {
    pub transformer: f64,
    pub cloud_transformer: f64,
    pub fused: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DatasetStatus {
    Ok { outcome: DatasetOutcome },
    Failed { id: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub models: Vec<String>,
    pub datasets: Vec<DatasetStatus>,
    /// Test-set comparison of the fused model against each single model:
    /// `(model, datasets where the fused MAPE is lower or equal)`.
    pub fused_not_worse_on_test: Vec<(String, usize)>,
    pub stats_issues: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub table: Option<EvalTable>,
}

impl RunSummary {
    pub fn failures(&self) -> usize {
        self.manifest
            .datasets
            .iter()
            .filter(|d| matches!(d, DatasetStatus::Failed { .. }))
            .count()
    }

    /// 0 when every dataset and every statistic succeeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures() == 0 && self.manifest.stats_issues.is_empty() && self.table.is_some() {
            0
        } else {
            1
        }
    }
}

fn file_key(name: &str) -> String {
    name.to_ascii_lowercase().replace(' ', "_")
}

fn fit_model(
    base: &ModelConfig,
    seed: u64,
    train_set: &crate::data::WindowedDataset,
    val_set: &crate::data::WindowedDataset,
) -> Result<TrainedModel> {
    let cfg = ModelConfig {
        seed,
        ..base.clone()
    };
    let model = Forecaster::new(cfg)?;
    train(model, train_set, val_set, &TrainOptions::default())
}

fn predictions_csv(
    meta: &ArtifactMeta,
    names: &[String],
    rows: &[(&str, chrono::NaiveDate, f64, Vec<f64>)],
) -> String {
    let mut out = meta.csv_header();
    let cols: Vec<String> = names.iter().map(|n| file_key(n)).collect();
    let _ = writeln!(out, "split,date,truth,{}", cols.join(","));
    for (split, date, truth, preds) in rows {
        let cells: Vec<String> = preds.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(out, "{split},{date},{truth},{}", cells.join(","));
    }
    out
}

fn run_dataset(
    cfg: &RunConfig,
    fingerprint: &str,
    index: usize,
    ds: &TimeSeriesDataset,
) -> Result<DatasetOutcome> {
    let started = Instant::now();
    let ds_seed = derive_seed(cfg.seed, index as u64);
    let dir = cfg.out_dir.join("datasets").join(&ds.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let meta = |artifact: &str| ArtifactMeta::new(artifact, fingerprint, cfg.seed);

    let parts = split(ds, &cfg.split)?;
    let train_loads: Vec<f64> = parts.train.iter().map(|&i| ds.loads()[i]).collect();
    let scaler = Scaler::fit(&train_loads)?;

    let models = cfg.models();
    let mut names = cfg.model_names();
    let mut val_preds = Vec::new();
    let mut test_preds = Vec::new();
    let mut best_epochs = Vec::new();
    let mut val_truth = Vec::new();
    let mut test_truth = Vec::new();
    let mut val_dates = Vec::new();
    let mut test_dates = Vec::new();
    for (k, mcfg) in models.iter().enumerate() {
        let p = mcfg.lookback;
        let train_w = make_split_windows(ds, &parts.train, p, &scaler)?;
        let val_w = make_split_windows(ds, &parts.validation, p, &scaler)?;
        let test_w = make_split_windows(ds, &parts.test, p, &scaler)?;
        let seed = derive_seed(
            ds_seed,
            1 + match mcfg.norm_kind {
                NormKind::Layer => 0,
                NormKind::Cloud => 1,
            },
        );
        let trained = fit_model(mcfg, seed, &train_w, &val_w)
            .map_err(|e| Error::Degenerate(format!("{}: {e}", names[k])))?;
        let key = file_key(&names[k]);
        let ck_meta = meta(&format!("{key}.checkpoint"));
        write_stamped(
            &dir.join(format!("{key}.checkpoint.json")),
            &ck_meta,
            &trained.checkpoint(),
        )?;
        let trace_meta = meta(&format!("{key}.loss"));
        write_file(
            &dir.join(format!("{key}.loss.csv")),
            &(trace_meta.csv_header() + &trained.loss_trace_csv()),
        )?;
        val_preds.push(trained.predict(&val_w)?);
        test_preds.push(trained.predict(&test_w)?);
        best_epochs.push(trained.best_epoch);
        if k == 0 {
            // Raw loads rather than round-tripped targets.
            let pick = |w: &crate::data::WindowedDataset| -> Vec<f64> {
                w.target_dates
                    .iter()
                    .map(|d| ds.loads()[ds.index_of(*d).expect("window date in dataset")])
                    .collect()
            };
            val_truth = pick(&val_w);
            test_truth = pick(&test_w);
            val_dates = val_w.target_dates.clone();
            test_dates = test_w.target_dates.clone();
        } else if val_w.target_dates != val_dates || test_w.target_dates != test_dates {
            return Err(Error::Config(
                "forecasters with different lookbacks cover different days".into(),
            ));
        }
    }

    let mut fitting = None;
    if cfg.norm == NormSelection::Both {
        let set = build_ensemble_set(&val_preds[0], &val_preds[1], &val_truth)?;
        let swarm = SwarmConfig {
            seed: derive_seed(ds_seed, 3),
            ..cfg.swarm
        };
        let fit = pso_fit(&set, &swarm)?;
        let record = WeightRecord::new(&set, &swarm, fit);
        write_stamped(&dir.join("weights.json"), &meta("weights"), &record)?;
        val_preds.push(combine_series(&[&val_preds[0], &val_preds[1]], &record.w)?);
        test_preds.push(combine_series(
            &[&test_preds[0], &test_preds[1]],
            &record.w,
        )?);
        fitting = Some(FittingObjectives {
            transformer: record.corner_objectives[0],
            cloud_transformer: record.corner_objectives[1],
            fused: record.f_opt,
            weights: record.w.clone(),
        });
    } else {
        names.truncate(models.len());
    }

    let test_mape = test_preds
        .iter()
        .map(|p| mape(&test_truth, p))
        .collect::<Result<Vec<_>>>()?;
    let validation_mape = val_preds
        .iter()
        .map(|p| mape(&val_truth, p))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (split_name, dates, truth, preds) in [
        ("validation", &val_dates, &val_truth, &val_preds),
        ("test", &test_dates, &test_truth, &test_preds),
    ] {
        for (i, d) in dates.iter().enumerate() {
            rows.push((
                split_name,
                *d,
                truth[i],
                preds.iter().map(|p| p[i]).collect::<Vec<_>>(),
            ));
        }
    }
    write_file(
        &dir.join("predictions.csv"),
        &predictions_csv(&meta("predictions"), &names, &rows),
    )?;

    let outcome = DatasetOutcome {
        id: ds.id.clone(),
        split_days: parts.counts(),
        test_mape,
        validation_mape,
        fitting_objectives: fitting,
        best_epochs,
    };
    write_stamped(&dir.join("metrics.json"), &meta("metrics"), &outcome)?;
    log::info!("dataset {} done in {:.1?}", ds.id, started.elapsed());
    Ok(outcome)
}

fn load_datasets(cfg: &RunConfig) -> Result<Vec<Result<TimeSeriesDataset>>> {
    let sets: Vec<Result<TimeSeriesDataset>> = match &cfg.datasets {
        DatasetSource::Synthetic { count, n_days } => {
            synthetic_datasets(*count, *n_days, cfg.seed)?
                .into_iter()
                .map(Ok)
                .collect()
        }
        DatasetSource::Files { paths } => paths.iter().map(|p| load_csv(p)).collect(),
    };
    let mut seen = HashSet::new();
    for ds in sets.iter().flatten() {
        if !seen.insert(ds.id.clone()) {
            return Err(Error::Config(format!(
                "dataset id `{}` occurs twice",
                ds.id
            )));
        }
    }
    Ok(sets)
}

fn dataset_label(cfg: &RunConfig, i: usize) -> String {
    match &cfg.datasets {
        DatasetSource::Files { paths } => paths[i].display().to_string(),
        DatasetSource::Synthetic { .. } => format!("synthetic #{i}"),
    }
}

/// Trains, fuses and evaluates every dataset, then writes the evaluation
/// table, the statistics report and a manifest under `cfg.out_dir`.
/// A failing dataset is recorded and the sweep continues.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let fingerprint = cfg.fingerprint();
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let datasets = load_datasets(cfg)?;
    log::info!(
        "running {} datasets, config {}",
        datasets.len(),
        &fingerprint[..12]
    );

    let results: Vec<Result<DatasetOutcome>> = with_workers(cfg.workers, || {
        map_indexed(datasets.len(), Execution::Parallel, |i| {
            match &datasets[i] {
                Ok(ds) => run_dataset(cfg, &fingerprint, i, ds),
                Err(e) => Err(Error::Argument(e.to_string())),
            }
        })
    });

    let names = cfg.model_names();
    let mut statuses = Vec::new();
    let mut ok = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(outcome) => {
                ok.push(outcome.clone());
                statuses.push(DatasetStatus::Ok { outcome });
            }
            Err(e) => {
                let id = match &datasets[i] {
                    Ok(ds) => ds.id.clone(),
                    Err(_) => dataset_label(cfg, i),
                };
                log::error!("dataset {id} failed: {e}");
                statuses.push(DatasetStatus::Failed {
                    id,
                    error: e.to_string(),
                });
            }
        }
    }

    let mut stats_issues = Vec::new();
    let mut fused_not_worse = Vec::new();
    let table = if ok.is_empty() {
        stats_issues.push("no dataset completed".to_string());
        None
    } else {
        let mut table = EvalTable::new(
            ok.iter().map(|o| o.id.clone()).collect(),
            names.clone(),
            ok.iter().map(|o| o.test_mape.clone()).collect(),
        )?;
        let meta = ArtifactMeta::new("eval_table", &fingerprint, cfg.seed);
        table.provenance = meta.comment_lines();
        table.save(&cfg.out_dir.join("eval_table.csv"))?;
        if names.len() >= 2 {
            let report = StatsReport::compute(&table);
            let stamp = ArtifactMeta::new("report", &fingerprint, cfg.seed).comment_lines();
            emit_report(
                &table,
                &report,
                &cfg.out_dir.join("report"),
                cfg.svg,
                &stamp,
            )?;
            stats_issues.extend(report.issues);
        }
        if cfg.norm == NormSelection::Both {
            let fused = names.len() - 1;
            for j in 0..fused {
                let n = table.rows().iter().filter(|r| r[fused] <= r[j]).count();
                fused_not_worse.push((names[j].clone(), n));
            }
        }
        Some(table)
    };

    let manifest = RunManifest {
        models: names,
        datasets: statuses,
        fused_not_worse_on_test: fused_not_worse,
        stats_issues,
    };
    write_stamped(
        &cfg.out_dir.join("manifest.json"),
        &ArtifactMeta::new("manifest", &fingerprint, cfg.seed),
        &manifest,
    )?;
    Ok(RunSummary {
        out_dir: cfg.out_dir.clone(),
        manifest,
        table,
    })
}

/// Statistics of an evaluation table file, or of the embedded published
/// table when `table` is `None`, written under `out_dir`. Reports are stamped
/// with the SHA-256 of the table text.
pub fn cmd_stats(
    table: Option<&Path>,
    out_dir: &Path,
    svg: bool,
) -> Result<(EvalTable, StatsReport, crate::stats::ReportFiles)> {
    let (text, origin) = match table {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            p.display().to_string(),
        ),
        None => (
            crate::stats::PUBLISHED_MAPE_TABLE.to_string(),
            "published MAPE table".to_string(),
        ),
    };
    let table = EvalTable::parse(&text, &origin)?;
    let report = StatsReport::compute(&table);
    let stamp = ArtifactMeta::new("stats", &sha256_hex(text.as_bytes()), 0).comment_lines();
    let files = emit_report(&table, &report, out_dir, svg, &stamp)?;
    Ok((table, report, files))
}

/// Rebuilds the statistics report of a finished run from its evaluation
/// table.
pub fn cmd_report(run_dir: &Path, svg: bool) -> Result<StatsReport> {
    let table = EvalTable::load(&run_dir.join("eval_table.csv"))?;
    let report = StatsReport::compute(&table);
    emit_report(
        &table,
        &report,
        &run_dir.join("report"),
        svg,
        &table.provenance,
    )?;
    Ok(report)
}
