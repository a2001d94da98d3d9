//! Repeated runs with distinct seeds, summarized as mean and population
//! standard deviation of the per-run test means.

use std::fmt::Write as _;

use crate::error::Result;
use crate::metrics::{Aggregate, MetricsReport, Stat};

#[derive(Clone, Debug, PartialEq)]
pub struct RepeatSummary {
    pub seeds: Vec<u64>,
    /// Test-set statistics of each run, in seed order.
    pub runs: Vec<Aggregate>,
    pub sdr_db: Stat,
    pub si_sdr_db: Stat,
    pub stoi: Stat,
}

/// Seeds `base, base + stride, ...`.
pub fn repeat_seeds(n: usize, base: u64, stride: u64) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i.wrapping_mul(stride))).collect()
}

/// Calls `run` once per seed and pools the per-run means.
pub fn run_repeats(
    seeds: &[u64],
    mut run: impl FnMut(usize, u64) -> Result<MetricsReport>,
) -> Result<RepeatSummary> {
    let mut runs = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        runs.push(run(i, seed)?.aggregate());
    }
    Ok(summarize(seeds.to_vec(), runs))
}

pub fn summarize(seeds: Vec<u64>, runs: Vec<Aggregate>) -> RepeatSummary {
    let pool = |f: fn(&Aggregate) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
    RepeatSummary {
        sdr_db: pool(|a| a.sdr_db.mean),
        si_sdr_db: pool(|a| a.si_sdr_db.mean),
        stoi: pool(|a| a.stoi.mean),
        seeds,
        runs,
    }
}

impl RepeatSummary {
    /// Plain-text table, one row per metric, four decimals.
    pub fn table(&self, label: &str) -> String {
        let mut out = format!("Mean/STD of evaluation metrics ({label}, {} runs)\n", self.runs.len());
        let _ = writeln!(out, "{:<8} {:>10} {:>10}", "metric", "mean", "std");
        for (name, s) in [("SDR", self.sdr_db), ("SI-SDR", self.si_sdr_db), ("STOI", self.stoi)] {
            let _ = writeln!(out, "{name:<8} {:>10.4} {:>10.4}", s.mean, s.std);
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let stat = |s: Stat| serde_json::json!({ "mean": s.mean, "std": s.std });
        serde_json::json!({
            "seeds": self.seeds,
            "runs": self.runs.iter().map(|a| serde_json::json!({
                "sdr_db": a.sdr_db.mean,
                "si_sdr_db": a.si_sdr_db.mean,
                "stoi": a.stoi.mean,
            })).collect::<Vec<_>>(),
            "sdr_db": stat(self.sdr_db),
            "si_sdr_db": stat(self.si_sdr_db),
            "stoi": stat(self.stoi),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(v: f64) -> Aggregate {
        let s = Stat { mean: v, std: 0.0 };
        Aggregate {
            sdr_db: s,
            si_sdr_db: s,
            stoi: s,
        }
    }

    #[test]
    fn pools_run_means() {
        let s = summarize(repeat_seeds(3, 10, 7), vec![agg(1.0), agg(2.0), agg(3.0)]);
        assert_eq!(s.seeds, vec![10, 17, 24]);
        assert_eq!(s.sdr_db.mean, 2.0);
        assert!((s.sdr_db.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(s.table("x").contains("SDR          2.0000     0.8165"));
    }
}
