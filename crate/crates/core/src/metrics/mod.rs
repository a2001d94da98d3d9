//! Evaluation metrics and the per-example report.
//!
//! The report is written as CSV with the column order
//! `row,index,sdr_db,si_sdr_db,stoi,noisy_sdr_db,noisy_si_sdr_db,noisy_stoi`:
//! one `example` row per test item in evaluation order, then a `mean` row and
//! a `std` row (population standard deviation). The `noisy_*` columns score
//! the unprocessed mixture against the clean reference.

pub mod stoi;

use std::fmt::Write as _;
use std::path::Path;

pub use self::stoi::stoi;
pub use crate::losses::{sdr, si_sdr};

use crate::dsp::AudioSignal;
use crate::error::{Error, Result};

/// Scores of one signal against its clean reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub sdr_db: f64,
    pub si_sdr_db: f64,
    pub stoi: f64,
}

impl Scores {
    pub fn compute(clean: &AudioSignal, estimate: &AudioSignal) -> Result<Self> {
        Ok(Self {
            sdr_db: sdr(&clean.samples, &estimate.samples)?,
            si_sdr_db: si_sdr(&clean.samples, &estimate.samples)?,
            stoi: stoi(clean, estimate)?,
        })
    }

    fn values(&self) -> [f64; 3] {
        [self.sdr_db, self.si_sdr_db, self.stoi]
    }

    fn from_values(v: &[f64]) -> Self {
        Self {
            sdr_db: v[0],
            si_sdr_db: v[1],
            stoi: v[2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExampleMetrics {
    pub index: usize,
    pub enhanced: Scores,
    pub noisy: Scores,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Summed in slice order, so a fixed order gives bit-identical results.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        // Shifted by the first value, so identical values give exactly zero spread.
        let n = values.len() as f64;
        let d: Vec<f64> = values.iter().map(|v| v - values[0]).collect();
        let shift = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - shift) * (x - shift)).sum::<f64>() / n;
        Self {
            mean: values[0] + shift,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub sdr_db: Stat,
    pub si_sdr_db: Stat,
    pub stoi: Stat,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub examples: Vec<ExampleMetrics>,
}

const HEADER: &str = "row,index,sdr_db,si_sdr_db,stoi,noisy_sdr_db,noisy_si_sdr_db,noisy_stoi";

impl MetricsReport {
    pub fn new(examples: Vec<ExampleMetrics>) -> Self {
        Self { examples }
    }

    fn aggregate_by(&self, pick: impl Fn(&ExampleMetrics) -> Scores) -> Aggregate {
        let col = |f: fn(&Scores) -> f64| Stat::of(&self.examples.iter().map(|e| f(&pick(e))).collect::<Vec<_>>());
        Aggregate {
            sdr_db: col(|s| s.sdr_db),
            si_sdr_db: col(|s| s.si_sdr_db),
            stoi: col(|s| s.stoi),
        }
    }

    pub fn aggregate(&self) -> Aggregate {
        self.aggregate_by(|e| e.enhanced)
    }

    /// The same statistics for the unprocessed mixtures.
    pub fn baseline(&self) -> Aggregate {
        self.aggregate_by(|e| e.noisy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for e in &self.examples {
            let v: Vec<String> = e.enhanced.values().iter().chain(&e.noisy.values()).map(|v| v.to_string()).collect();
            let _ = writeln!(out, "example,{},{}", e.index, v.join(","));
        }
        let (a, b) = (self.aggregate(), self.baseline());
        for (label, pick) in [("mean", (|s: &Stat| s.mean) as fn(&Stat) -> f64), ("std", |s: &Stat| s.std)] {
            let v: Vec<String> = [a.sdr_db, a.si_sdr_db, a.stoi, b.sdr_db, b.si_sdr_db, b.stoi]
                .iter()
                .map(|s| pick(s).to_string())
                .collect();
            let _ = writeln!(out, "{label},,{}", v.join(","));
        }
        out
    }

    /// Parses the `example` rows back; aggregate rows are recomputed.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::InvalidArgument("metrics report header not recognised".into()));
        }
        let mut examples = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.first() != Some(&"example") {
                continue;
            }
            let bad = || Error::InvalidArgument(format!("metrics report line {}: `{line}`", n + 2));
            if fields.len() != 8 {
                return Err(bad());
            }
            let index = fields[1].parse().map_err(|_| bad())?;
            let v: Vec<f64> = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad())?;
            examples.push(ExampleMetrics {
                index,
                enhanced: Scores::from_values(&v[..3]),
                noisy: Scores::from_values(&v[3..]),
            });
        }
        Ok(Self { examples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
