use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// MAPE (percent) of every model on every dataset.
///
/// On disk: optional `#` comment lines, a header `dataset,<model>,...`, then
/// one row per dataset. Comments are kept as provenance and written back.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    dataset_ids: Vec<String>,
    model_names: Vec<String>,
    mape: Vec<Vec<f64>>,
    pub provenance: Vec<String>,
}

fn check_label(kind: &str, s: &str) -> Result<()> {
    if s.trim().is_empty() || s.contains([',', '\n', '\r']) {
        return Err(Error::Argument(format!("invalid {kind} label {s:?}")));
    }
    Ok(())
}

impl EvalTable {
    pub fn new(
        dataset_ids: Vec<String>,
        model_names: Vec<String>,
        mape: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if dataset_ids.is_empty() || model_names.is_empty() {
            return Err(Error::Argument(
                "evaluation table has no datasets or no models".into(),
            ));
        }
        if mape.len() != dataset_ids.len() {
            return Err(Error::Argument(format!(
                "{} rows for {} datasets",
                mape.len(),
                dataset_ids.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &dataset_ids {
            check_label("dataset", id)?;
            if !seen.insert(id.trim().to_ascii_lowercase()) {
                return Err(Error::Argument(format!("duplicate dataset id {id:?}")));
            }
        }
        for m in &model_names {
            check_label("model", m)?;
        }
        for (id, row) in dataset_ids.iter().zip(&mape) {
            if row.len() != model_names.len() {
                return Err(Error::Argument(format!(
                    "dataset {id} has {} values for {} models",
                    row.len(),
                    model_names.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Argument(format!("dataset {id} has MAPE {v}")));
            }
        }
        Ok(EvalTable {
            dataset_ids,
            model_names,
            mape,
            provenance: Vec::new(),
        })
    }

    pub fn dataset_ids(&self) -> &[String] {
        &self.dataset_ids
    }

    pub fn model_names(&self) -> &[String] {
        &self.model_names
    }

    pub fn n_datasets(&self) -> usize {
        self.dataset_ids.len()
    }

    pub fn n_models(&self) -> usize {
        self.model_names.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.mape
    }

    pub fn get(&self, dataset: usize, model: usize) -> f64 {
        self.mape[dataset][model]
    }

    pub fn column(&self, model: usize) -> Vec<f64> {
        self.mape.iter().map(|r| r[model]).collect()
    }

    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.model_names.iter().position(|m| m == name)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n_datasets() as f64;
        (0..self.n_models())
            .map(|j| self.mape.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Argument(format!("{origin}:{line}: {msg}"));
        let mut provenance = Vec::new();
        let mut header: Option<Vec<String>> = None;
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if let Some(c) = line.strip_prefix('#') {
                provenance.push(c.trim().to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            match &header {
                None => {
                    if fields.len() < 2 {
                        return Err(bad(
                            k + 1,
                            "header needs a dataset column and at least one model".into(),
                        ));
                    }
                    header = Some(fields[1..].iter().map(|s| s.to_string()).collect());
                }
                Some(h) => {
                    if fields.len() != h.len() + 1 {
                        return Err(bad(
                            k + 1,
                            format!("expected {} fields, found {}", h.len() + 1, fields.len()),
                        ));
                    }
                    ids.push(fields[0].to_string());
                    let row = fields[1..]
                        .iter()
                        .map(|f| {
                            f.parse::<f64>()
                                .map_err(|_| bad(k + 1, format!("{f:?} is not a number")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    rows.push(row);
                }
            }
        }
        let header = header.ok_or_else(|| bad(0, "no header line".into()))?;
        let mut table = EvalTable::new(ids, header, rows)
            .map_err(|e| Error::Argument(format!("{origin}: {e}")))?;
        table.provenance = provenance;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Full-precision values so that a parse of the output is lossless.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for p in &self.provenance {
            let _ = writeln!(out, "# {p}");
        }
        let _ = writeln!(out, "dataset,{}", self.model_names.join(","));
        for (id, row) in self.dataset_ids.iter().zip(&self.mape) {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{id},{}", vals.join(","));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
