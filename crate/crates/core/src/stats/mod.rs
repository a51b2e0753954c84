//! Evaluation statistics: MAPE, win/loss counts, Friedman ranks and the
//! Wilcoxon signed-rank test, plus the tabular reports built from them.

pub mod report;
mod table;

pub use report::{emit_report, Comparison, ReportFiles, StatsReport};
pub use table::EvalTable;

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Absolute differences closer than this (relative to the compared values)
/// are treated as tied, so that decimal inputs such as `0.3 − 0.2` and
/// `1.3 − 1.2` rank together despite binary rounding.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Published per-dataset MAPE values of the three forecasters on 31 real
/// load datasets, shipped as a fixture for the statistics commands.
pub const PUBLISHED_MAPE_TABLE: &str = include_str!("../../data/table2_mape.csv");

pub fn published_table() -> EvalTable {
    EvalTable::parse(PUBLISHED_MAPE_TABLE, "published MAPE table").expect("embedded table is valid")
}

/// Mean absolute percentage error in percent.
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(Error::Argument(format!(
            "MAPE needs equal non-empty series, got {} truths and {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut acc = 0.0;
    for (i, (&y, &p)) in truth.iter().zip(pred).enumerate() {
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::Argument(format!(
                "truth {i} is {y}, MAPE needs positive truths"
            )));
        }
        if !p.is_finite() {
            return Err(Error::Argument(format!("prediction {i} is not finite")));
        }
        acc += (p - y).abs() / y;
    }
    Ok(100.0 * acc / truth.len() as f64)
}

/// Per model: datasets on which it attains the smallest MAPE (ties all win),
/// and the remaining datasets.
pub fn win_loss(table: &EvalTable) -> Vec<(usize, usize)> {
    let mut wins = vec![0; table.n_models()];
    for row in table.rows() {
        let best = row.iter().copied().fold(f64::INFINITY, f64::min);
        for (j, v) in row.iter().enumerate() {
            if *v == best {
                wins[j] += 1;
            }
        }
    }
    wins.into_iter()
        .map(|w| (w, table.n_datasets() - w))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    pub avg_ranks: Vec<f64>,
    pub statistic: f64,
    pub p_value: f64,
}

/// Ascending ranks starting at 1 with tied values sharing their average rank.
/// `same(a, b)` decides ties between neighbours in sorted order.
fn average_ranks(values: &[f64], same: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && same(values[order[end - 1]], values[order[end]]) {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let r = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

fn tie_group_sizes(values: &[f64], same: impl Fn(f64, f64) -> bool) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut run = 1;
    for w in sorted.windows(2) {
        if same(w[0], w[1]) {
            run += 1;
        } else {
            groups.push(run);
            run = 1;
        }
    }
    if !sorted.is_empty() {
        groups.push(run);
    }
    groups
}

/// Friedman test over the datasets of `table`; lower MAPE ranks first.
pub fn friedman(table: &EvalTable) -> Result<FriedmanResult> {
    let (n, k) = (table.n_datasets(), table.n_models());
    if n < 2 || k < 2 {
        return Err(Error::Argument(format!(
            "Friedman test needs at least 2 datasets and 2 models, got {n} and {k}"
        )));
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in table.rows() {
        for (s, r) in rank_sums.iter_mut().zip(average_ranks(row, |a, b| a == b)) {
            *s += r;
        }
        tie_term += tie_group_sizes(row, |a, b| a == b)
            .into_iter()
            .map(|t| (t * t * t - t) as f64)
            .sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let avg_ranks: Vec<f64> = rank_sums.iter().map(|s| s / nf).collect();
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * rank_sums.iter().map(|s| s * s).sum::<f64>()
        - 3.0 * nf * (kf + 1.0);
    let correction = 1.0 - tie_term / (nf * (kf * kf * kf - kf));
    let (statistic, p_value) = if correction <= 0.0 {
        // Every row fully tied: no evidence of any difference.
        (0.0, 1.0)
    } else {
        let stat = (raw / correction).max(0.0);
        let chi = ChiSquared::new(kf - 1.0).expect("k ≥ 2 gives positive degrees of freedom");
        (stat, chi.sf(stat))
    };
    Ok(FriedmanResult {
        avg_ranks,
        statistic,
        p_value,
    })
}

/// How zero differences enter the signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroMethod {
    /// Discard zero differences before ranking.
    #[default]
    Wilcox,
    /// Rank zeros with the rest, then leave their ranks out of both sums.
    Pratt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    pub r_plus: f64,
    pub r_minus: f64,
    /// Number of differences that were ranked.
    pub n_effective: usize,
    pub z: f64,
    pub p_one_sided: f64,
}

/// Signed-rank test on `d = x − y`. `r_plus` collects the ranks of positive
/// differences. The p-value is the upper normal tail of
/// `(max(R+, R−) − μ) / σ` without continuity or tie correction.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(x, y, ZeroMethod::Wilcox)
}

pub fn wilcoxon_signed_rank_with(
    x: &[f64],
    y: &[f64],
    zeros: ZeroMethod,
) -> Result<WilcoxonResult> {
    if x.len() != y.len() || x.len() < 5 {
        return Err(Error::Argument(format!(
            "signed-rank test needs paired samples of length at least 5, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Argument(
            "signed-rank test input is not finite".into(),
        ));
    }
    let scale = |a: f64, b: f64| TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0);
    let d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            if (a - b).abs() <= scale(a, b) {
                0.0
            } else {
                a - b
            }
        })
        .collect();
    let n_zero = d.iter().filter(|v| **v == 0.0).count();
    if n_zero == d.len() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let ranked: Vec<f64> = match zeros {
        ZeroMethod::Wilcox => d.iter().copied().filter(|v| *v != 0.0).collect(),
        ZeroMethod::Pratt => d.clone(),
    };
    let mags: Vec<f64> = ranked.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&mags, |a, b| (a - b).abs() <= scale(a, b));
    let mut r_plus = 0.0;
    let mut r_minus = 0.0;
    for (v, r) in ranked.iter().zip(&ranks) {
        if *v > 0.0 {
            r_plus += r;
        } else if *v < 0.0 {
            r_minus += r;
        }
    }
    let n = ranked.len() as f64;
    let mut mean = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    if zeros == ZeroMethod::Pratt {
        let z0 = n_zero as f64;
        mean -= z0 * (z0 + 1.0) / 4.0;
        var -= z0 * (z0 + 1.0) * (2.0 * z0 + 1.0) / 24.0;
    }
    let z = (r_plus.max(r_minus) - mean) / var.sqrt();
    Ok(WilcoxonResult {
        r_plus,
        r_minus,
        n_effective: ranked.len(),
        z,
        p_one_sided: Normal::standard().sf(z),
    })
}
