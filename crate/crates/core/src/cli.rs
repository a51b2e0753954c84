//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::ensemble::PositionUpdate;
use crate::error::{Error, Result};
use crate::pipeline::{
    cmd_generate, cmd_report, cmd_run, cmd_stats, NormSelection, Overrides, RunConfig,
};
use crate::stats::{report::mape_table_csv, report::significance_csv, StatsReport};

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Some datasets or statistics failed; the rest were written.
pub const EXIT_PARTIAL: i32 = 1;
/// Invalid input, configuration or output location.
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cmit",
    version,
    about = "Cloud-normalized transformer ensembles for daily load forecasting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic cluster load series as `date,load` CSV files.
    Generate {
        #[arg(long, default_value_t = 31)]
        count: usize,
        #[arg(long, default_value_t = 789)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train both forecasters on every dataset, fuse them and evaluate.
    Run(RunArgs),
    /// Summary statistics and significance tests for an evaluation table.
    Stats {
        /// CSV with a `dataset,<model>,...` header; defaults to the bundled
        /// published table.
        table: Option<PathBuf>,
        #[arg(long, default_value = "stats")]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
    },
    /// Rebuild the statistics report of a finished run.
    Report {
        #[arg(long = "run-dir", default_value = "out")]
        run_dir: PathBuf,
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub norm: Option<NormSelection>,
    #[arg(long = "position-update", value_enum)]
    pub position_update: Option<PositionUpdate>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Overrides {
            seed: self.seed,
            out_dir: self.out.clone(),
            workers: self.workers,
            norm: self.norm,
            position_update: self.position_update,
        }
        .apply(&mut cfg);
        Ok(cfg)
    }
}

/// Maps an error to the exit status contract.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) | Error::Degenerate(_) => EXIT_PARTIAL,
        _ => EXIT_INVALID,
    }
}

fn print_stats(table: &crate::stats::EvalTable, report: &StatsReport) {
    print!("{}", mape_table_csv(table, report));
    println!();
    print!("{}", significance_csv(report));
    if let Some(f) = &report.friedman {
        println!(
            "Friedman chi-square {:.4}, p = {:.3e}",
            f.statistic, f.p_value
        );
    }
    for issue in &report.issues {
        eprintln!("warning: {issue}");
    }
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Generate {
            count,
            days,
            seed,
            out,
        } => {
            for (ds, path) in cmd_generate(count, days, seed, &out)? {
                println!("{}\t{}\t{}", ds.id, ds.len(), path.display());
            }
            Ok(EXIT_OK)
        }
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let summary = cmd_run(&cfg)?;
            if let Some(t) = &summary.table {
                print!("{}", t.to_csv());
            }
            for (model, n) in &summary.manifest.fused_not_worse_on_test {
                if let Some(t) = &summary.table {
                    println!(
                        "fused model at least as accurate as {model} on {n}/{} test sets",
                        t.n_datasets()
                    );
                }
            }
            if summary.failures() > 0 {
                eprintln!(
                    "{} dataset(s) failed, see {}",
                    summary.failures(),
                    summary.out_dir.join("manifest.json").display()
                );
            }
            for issue in &summary.manifest.stats_issues {
                eprintln!("warning: {issue}");
            }
            Ok(summary.exit_code())
        }
        Command::Stats { table, out, svg } => {
            let (table, report, _) = cmd_stats(table.as_deref(), &out, svg)?;
            print_stats(&table, &report);
            Ok(if report.is_complete() {
                EXIT_OK
            } else {
                EXIT_PARTIAL
            })
        }
        Command::Report { run_dir, svg } => {
            let report = cmd_report(&run_dir, svg)?;
            for issue in &report.issues {
                eprintln!("warning: {issue}");
            }
            Ok(if report.is_complete() {
                EXIT_OK
            } else {
                EXIT_PARTIAL
            })
        }
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("CMIT_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("g");
        let args = [
            "cmit",
            "generate",
            "--count",
            "2",
            "--days",
            "60",
            "--out",
            out.to_str().unwrap(),
        ];
        assert_eq!(main_with_args(args), EXIT_OK);
        assert_eq!(std::fs::read_dir(&out).unwrap().count(), 2);
        let args = [
            "cmit",
            "generate",
            "--count",
            "2",
            "--days",
            "10",
            "--out",
            out.to_str().unwrap(),
        ];
        assert_eq!(main_with_args(args), EXIT_INVALID);
        assert_eq!(main_with_args(["cmit", "bogus"]), EXIT_INVALID);
    }

    #[test]
    fn stats_on_bundled_and_tiny_tables() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s");
        assert_eq!(
            main_with_args(["cmit", "stats", "--out", out.to_str().unwrap()]),
            EXIT_OK
        );
        let main = std::fs::read_to_string(out.join("mape_table.csv")).unwrap();
        assert!(main.contains("Win/Loss,1/30,5/26,25/6"));
        let tiny = dir.path().join("tiny.csv");
        std::fs::write(&tiny, "dataset,A,B\nD1,1,2\n").unwrap();
        let args = [
            "cmit",
            "stats",
            tiny.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        assert_eq!(main_with_args(args), EXIT_PARTIAL);
        std::fs::write(&tiny, "dataset,A,B\nD1,1\n").unwrap();
        let args = [
            "cmit",
            "stats",
            tiny.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        assert_eq!(main_with_args(args), EXIT_INVALID);
    }

    #[test]
    fn run_flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("cfg.json");
        std::fs::write(&cfg, r#"{"seed": 3, "norm": "cloud"}"#).unwrap();
        let cli = Cli::try_parse_from([
            "cmit",
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "8",
            "--norm",
            "both",
            "--position-update",
            "standard",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else {
            panic!("expected run")
        };
        let resolved = args.resolve().unwrap();
        assert_eq!(resolved.seed, 8);
        assert_eq!(resolved.norm, NormSelection::Both);
        assert_eq!(resolved.swarm.position_update, PositionUpdate::Standard);
    }
}
