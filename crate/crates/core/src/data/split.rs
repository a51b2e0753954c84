use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::TimeSeriesDataset;
use crate::error::{Error, Result};

/// Inclusive calendar interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::Config(format!(
                "date range {start}..{end} is reversed"
            )));
        }
        Ok(DateRange { start, end })
    }

    pub fn days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    fn overlaps(&self, other: &DateRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Train, validation and test date ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<DateRange>,
    pub validation: DateRange,
    pub test: DateRange,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

impl Default for SplitSpec {
    /// 2021 plus Mar–Dec 2022 for training, Jan–Feb 2022 for validation and
    /// Jan–Feb 2023 for testing.
    fn default() -> Self {
        SplitSpec {
            train: vec![
                DateRange {
                    start: ymd(2021, 1, 1),
                    end: ymd(2021, 12, 31),
                },
                DateRange {
                    start: ymd(2022, 3, 1),
                    end: ymd(2022, 12, 31),
                },
            ],
            validation: DateRange {
                start: ymd(2022, 1, 1),
                end: ymd(2022, 2, 28),
            },
            test: DateRange {
                start: ymd(2023, 1, 1),
                end: ymd(2023, 2, 28),
            },
        }
    }
}

impl SplitSpec {
    fn all(&self) -> impl Iterator<Item = (&'static str, &DateRange)> {
        self.train
            .iter()
            .map(|r| ("train", r))
            .chain([("validation", &self.validation), ("test", &self.test)])
    }

    /// Checks ordering and disjointness of the ranges.
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Config(
                "split needs at least one training range".into(),
            ));
        }
        let ranges: Vec<_> = self.all().collect();
        for (name, r) in &ranges {
            if r.end < r.start {
                return Err(Error::Config(format!(
                    "{name} range {}..{} is reversed",
                    r.start, r.end
                )));
            }
        }
        for (i, (a_name, a)) in ranges.iter().enumerate() {
            for (b_name, b) in &ranges[i + 1..] {
                if a.overlaps(b) {
                    return Err(Error::Config(format!(
                        "{a_name} range {}..{} overlaps {b_name} range {}..{}",
                        a.start, a.end, b.start, b.end
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Positions of each split inside a dataset, in chronological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Chronological partition of `ds` per `spec`. Every range must lie inside
/// the dataset span.
pub fn split(ds: &TimeSeriesDataset, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let indices = |name: &str, r: &DateRange| -> Result<Vec<usize>> {
        match (ds.index_of(r.start), ds.index_of(r.end)) {
            (Some(a), Some(b)) => Ok((a..=b).collect()),
            _ => Err(Error::Config(format!(
                "{name} range {}..{} is outside dataset `{}` ({}..{})",
                r.start,
                r.end,
                ds.id,
                ds.start(),
                ds.end()
            ))),
        }
    };
    let mut train = Vec::new();
    for r in &spec.train {
        train.extend(indices("train", r)?);
    }
    train.sort_unstable();
    let out = SplitIndices {
        train,
        validation: indices("validation", &spec.validation)?,
        test: indices("test", &spec.test)?,
    };
    let used = out.train.len() + out.validation.len() + out.test.len();
    if used < ds.len() {
        log::debug!(
            "dataset `{}`: {} days fall outside every split",
            ds.id,
            ds.len() - used
        );
    }
    Ok(out)
}
