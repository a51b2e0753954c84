use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{friedman, wilcoxon_signed_rank, win_loss, EvalTable, FriedmanResult, WilcoxonResult};
use crate::error::{Error, Result};

/// Signed-rank comparison of `reference` against `other`; `R+` collects the
/// datasets on which `reference` has the lower MAPE.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub reference: String,
    pub other: String,
    pub result: WilcoxonResult,
}

/// Everything the statistics commands report. Tests that cannot run on the
/// given table are left out and explained in `issues`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub model_names: Vec<String>,
    pub mean_mape: Vec<f64>,
    pub win_loss: Vec<(usize, usize)>,
    pub friedman: Option<FriedmanResult>,
    pub comparisons: Vec<Comparison>,
    pub issues: Vec<String>,
}

impl StatsReport {
    /// All statistics, comparing the last model against each of the others.
    pub fn compute(table: &EvalTable) -> Self {
        Self::compute_against(table, table.n_models() - 1)
    }

    pub fn compute_against(table: &EvalTable, reference: usize) -> Self {
        assert!(
            reference < table.n_models(),
            "no model with index {reference}"
        );
        let names = table.model_names();
        let mut issues = Vec::new();
        let friedman = friedman(table)
            .map_err(|e| issues.push(format!("Friedman test skipped: {e}")))
            .ok();
        let ref_col = table.column(reference);
        let mut comparisons = Vec::new();
        for j in (0..table.n_models()).filter(|&j| j != reference) {
            match wilcoxon_signed_rank(&table.column(j), &ref_col) {
                Ok(result) => comparisons.push(Comparison {
                    reference: names[reference].clone(),
                    other: names[j].clone(),
                    result,
                }),
                Err(e) => issues.push(format!(
                    "{} vs. {} skipped: {e}",
                    names[reference], names[j]
                )),
            }
        }
        StatsReport {
            model_names: names.to_vec(),
            mean_mape: table.column_means(),
            win_loss: win_loss(table),
            friedman,
            comparisons,
            issues,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.issues.is_empty()
    }

    /// `"24.72,24.41,22.01"`-style cells of the summary rows.
    pub fn mean_mape_row(&self) -> String {
        let cells: Vec<String> = self.mean_mape.iter().map(|v| format!("{v:.2}")).collect();
        format!("Mean-MAPE,{}", cells.join(","))
    }

    pub fn win_loss_row(&self) -> String {
        let cells: Vec<String> = self
            .win_loss
            .iter()
            .map(|(w, l)| format!("{w}/{l}"))
            .collect();
        format!("Win/Loss,{}", cells.join(","))
    }

    pub fn rank_row(&self) -> String {
        let cells: Vec<String> = match &self.friedman {
            Some(f) => f.avg_ranks.iter().map(|v| format!("{v:.2}")).collect(),
            None => vec!["-".to_string(); self.model_names.len()],
        };
        format!("F-rank,{}", cells.join(","))
    }

    /// The signed-rank p-value against the reference model under each other
    /// model; the reference's own cell is `-`.
    pub fn p_value_row(&self) -> String {
        let cells: Vec<String> = self
            .model_names
            .iter()
            .map(|m| match self.comparisons.iter().find(|c| &c.other == m) {
                Some(c) => format_p(c.result.p_one_sided),
                None => "-".to_string(),
            })
            .collect();
        format!("p-value,{}", cells.join(","))
    }
}

fn format_p(p: f64) -> String {
    format!("{p:.2e}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportFiles {
    pub mape_table: PathBuf,
    pub significance: PathBuf,
    pub friedman: PathBuf,
    pub bar_data: PathBuf,
    pub bar_chart: Option<PathBuf>,
}

impl ReportFiles {
    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![
            self.mape_table.as_path(),
            self.significance.as_path(),
            self.friedman.as_path(),
            self.bar_data.as_path(),
        ];
        v.extend(self.bar_chart.as_deref());
        v
    }
}

fn write(path: PathBuf, body: &str) -> Result<PathBuf> {
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn mape_table_csv(table: &EvalTable, report: &StatsReport) -> String {
    let mut out = format!("Dataset,{}\n", table.model_names().join(","));
    for (id, row) in table.dataset_ids().iter().zip(table.rows()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
        let _ = writeln!(out, "{id},{}", cells.join(","));
    }
    for row in [
        report.mean_mape_row(),
        report.win_loss_row(),
        report.rank_row(),
        report.p_value_row(),
    ] {
        let _ = writeln!(out, "{row}");
    }
    out
}

pub fn significance_csv(report: &StatsReport) -> String {
    let mut out = String::from("comparison,r_plus,r_minus,n,z,p_one_sided\n");
    for c in &report.comparisons {
        let r = &c.result;
        let _ = writeln!(
            out,
            "{} vs. {},{},{},{},{:.4},{}",
            c.reference,
            c.other,
            r.r_plus,
            r.r_minus,
            r.n_effective,
            r.z,
            format_p(r.p_one_sided)
        );
    }
    out
}

pub fn friedman_csv(report: &StatsReport) -> String {
    let mut out = String::from("model,average_rank\n");
    if let Some(f) = &report.friedman {
        for (m, r) in report.model_names.iter().zip(&f.avg_ranks) {
            let _ = writeln!(out, "{m},{r:.4}");
        }
        let _ = writeln!(
            out,
            "# chi_square={:.4} p_value={}",
            f.statistic,
            format_p(f.p_value)
        );
    }
    out
}

pub fn bar_data_csv(table: &EvalTable) -> String {
    let mut out = String::from("dataset,model,mape\n");
    for (id, row) in table.dataset_ids().iter().zip(table.rows()) {
        for (m, v) in table.model_names().iter().zip(row) {
            let _ = writeln!(out, "{id},{m},{v}");
        }
    }
    out
}

const PALETTE: [&str; 6] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Grouped bar chart of MAPE per dataset.
pub fn bar_chart_svg(table: &EvalTable) -> String {
    let (n, k) = (table.n_datasets(), table.n_models());
    let bar = 8.0;
    let group = bar * k as f64 + 6.0;
    let (left, top, plot_h) = (50.0, 30.0, 240.0);
    let width = left + group * n as f64 + 20.0;
    let height = top + plot_h + 50.0;
    let max = table
        .rows()
        .iter()
        .flatten()
        .copied()
        .fold(0.0, f64::max)
        .max(1e-9);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" font-family=\"sans-serif\" font-size=\"9\">\n"
    );
    let base = top + plot_h;
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{base}\" x2=\"{:.1}\" y2=\"{base}\" stroke=\"black\"/>",
        width - 10.0
    );
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{base}\" stroke=\"black\"/>"
    );
    for t in 0..=4 {
        let v = max * t as f64 / 4.0;
        let y = base - plot_h * t as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>",
            left - 4.0,
            y + 3.0
        );
    }
    let _ = writeln!(s, "<text x=\"12\" y=\"{:.1}\" transform=\"rotate(-90 12 {:.1})\" text-anchor=\"middle\">MAPE (%)</text>", top + plot_h / 2.0, top + plot_h / 2.0);
    for (i, (id, row)) in table.dataset_ids().iter().zip(table.rows()).enumerate() {
        let x0 = left + 3.0 + group * i as f64;
        for (j, v) in row.iter().enumerate() {
            let h = plot_h * v / max;
            let _ = writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar}\" height=\"{h:.1}\" fill=\"{}\"/>",
                x0 + bar * j as f64,
                base - h,
                PALETTE[j % PALETTE.len()]
            );
        }
        let cx = x0 + bar * k as f64 / 2.0;
        let _ = writeln!(
            s,
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            base + 12.0,
            escape(id)
        );
    }
    for (j, m) in table.model_names().iter().enumerate() {
        let x = left + 10.0 + 130.0 * j as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.1}\" y=\"8\" width=\"10\" height=\"10\" fill=\"{}\"/>",
            PALETTE[j % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"17\">{}</text>",
            x + 14.0,
            escape(m)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the MAPE table with summary rows, the signed-rank table, the
/// Friedman ranks, the bar-chart data and optionally an SVG chart.
/// Each CSV starts with `stamp` as `#` comment lines; the SVG carries it as
/// an XML comment.
pub fn emit_report(
    table: &EvalTable,
    report: &StatsReport,
    dir: &Path,
    svg: bool,
    stamp: &[String],
) -> Result<ReportFiles> {
    if report.model_names.is_empty() || report.model_names.as_slice() != table.model_names() {
        return Err(Error::Argument(
            "report does not match the evaluation table".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header: String = stamp.iter().map(|l| format!("# {l}\n")).collect();
    let csv = |name: &str, body: String| write(dir.join(name), &format!("{header}{body}"));
    Ok(ReportFiles {
        mape_table: csv("mape_table.csv", mape_table_csv(table, report))?,
        significance: csv("significance.csv", significance_csv(report))?,
        friedman: csv("friedman.csv", friedman_csv(report))?,
        bar_data: csv("bar_data.csv", bar_data_csv(table))?,
        bar_chart: if svg {
            let mut body = bar_chart_svg(table);
            if !stamp.is_empty() {
                let comment = format!("<!-- {} -->\n", stamp.join("; ").replace("--", "- -"));
                let at = body.find('\n').map_or(body.len(), |i| i + 1);
                body.insert_str(at, &comment);
            }
            Some(write(dir.join("bar_chart.svg"), &body)?)
        } else {
            None
        },
    })
}
