//! Daily load series: CSV ingestion, chronological splits, standardization,
//! sliding windows and a synthetic cluster-load generator.

mod split;
mod synthetic;
mod window;

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Days, NaiveDate};

use crate::error::{DataErrorKind, Error, Result};

pub use split::{split, DateRange, SplitIndices, SplitSpec};
pub use synthetic::{default_profiles, generate_synthetic, SyntheticProfile, SYNTHETIC_START};
pub use window::{make_split_windows, make_windows, Scaler, WindowedDataset};

pub const CSV_HEADER: &str = "date,load";

/// A contiguous daily load series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub id: String,
    dates: Vec<NaiveDate>,
    loads: Vec<f64>,
}

impl TimeSeriesDataset {
    /// A series of `loads` starting at `start`, one value per day.
    pub fn from_start(id: impl Into<String>, start: NaiveDate, loads: Vec<f64>) -> Result<Self> {
        if loads.is_empty() {
            return Err(Error::Argument("a dataset needs at least one day".into()));
        }
        if let Some((i, v)) = loads
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::Argument(format!(
                "load on day {i} is not positive: {v}"
            )));
        }
        let dates = (0..loads.len())
            .map(|i| {
                start
                    .checked_add_days(Days::new(i as u64))
                    .ok_or_else(|| Error::Argument("date range overflows the calendar".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TimeSeriesDataset {
            id: id.into(),
            dates,
            loads,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn loads(&self) -> &[f64] {
        &self.loads
    }

    pub fn len(&self) -> usize {
        self.loads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loads.is_empty()
    }

    pub fn start(&self) -> NaiveDate {
        self.dates[0]
    }

    pub fn end(&self) -> NaiveDate {
        *self.dates.last().unwrap()
    }

    /// Index of `date`, if the series covers it.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start()).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    /// The `date,load` CSV text. Loads are written with four decimals.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(24 * (self.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for (d, v) in self.dates.iter().zip(&self.loads) {
            let _ = writeln!(out, "{},{v:.4}", d.format("%Y-%m-%d"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a `date,load` file. The dataset id is the file stem.
pub fn load_csv(path: &Path) -> Result<TimeSeriesDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_csv(&id, &text).map_err(|(line, kind)| Error::Data {
        path: path.to_path_buf(),
        line,
        kind,
    })
}

fn parse_csv(
    id: &str,
    text: &str,
) -> std::result::Result<TimeSeriesDataset, (usize, DataErrorKind)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h.replace(' ', "").eq_ignore_ascii_case(CSV_HEADER) => {}
        Some((n, h)) => {
            return Err((
                n,
                DataErrorKind::Malformed(format!("expected header `{CSV_HEADER}`, got `{h}`")),
            ))
        }
        None => return Err((1, DataErrorKind::Empty)),
    }
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut loads = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(d), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err((
                n,
                DataErrorKind::Malformed(format!("expected 2 columns: `{line}`")),
            ));
        };
        let date = NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").map_err(|e| {
            (
                n,
                DataErrorKind::Malformed(format!("bad date `{}`: {e}", d.trim())),
            )
        })?;
        let load: f64 = v.trim().parse().map_err(|_| {
            (
                n,
                DataErrorKind::Malformed(format!("bad load `{}`", v.trim())),
            )
        })?;
        if !load.is_finite() {
            return Err((
                n,
                DataErrorKind::Malformed(format!("non-finite load `{}`", v.trim())),
            ));
        }
        if load <= 0.0 {
            return Err((n, DataErrorKind::NonPositiveLoad(v.trim().to_string())));
        }
        if let Some(&prev) = dates.last() {
            if date == prev {
                return Err((n, DataErrorKind::DuplicateDate(date.to_string())));
            }
            if date < prev {
                return Err((n, DataErrorKind::OutOfOrder(format!("{date} after {prev}"))));
            }
            let expected = prev.succ_opt().expect("date in calendar range");
            if date != expected {
                return Err((
                    n,
                    DataErrorKind::Gap {
                        expected: expected.to_string(),
                        found: date.to_string(),
                    },
                ));
            }
        }
        dates.push(date);
        loads.push(load);
    }
    if dates.is_empty() {
        return Err((1, DataErrorKind::Empty));
    }
    Ok(TimeSeriesDataset {
        id: id.to_string(),
        dates,
        loads,
    })
}
