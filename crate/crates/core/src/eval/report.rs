use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AlphaPoint;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotPoint {
    pub r: usize,
    pub error: f64,
    pub se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionPoint {
    pub threshold: f64,
    pub fraction: f64,
    pub se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariancePair {
    pub x_side: f64,
    pub y_side: f64,
}

/// Equal-width histogram; `edges` has one more entry than `counts`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `bins` equal bins over the observed range of `values`. The last bin is
    /// closed on the right.
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() || bins == 0 {
            return Err(Error::DegenerateInput("histogram needs values and bins".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        Self::with_range(values, bins, lo, hi)
    }

    pub fn with_range(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) || bins == 0 {
            return Err(Error::DegenerateInput("histogram needs hi > lo and bins > 0".into()));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            if v < lo || v > hi {
                continue;
            }
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Evaluation summary, written as `report.json` plus companion CSVs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top_r_error: Vec<ZeroShotPoint>,
    pub margin_histogram: Option<Histogram>,
    pub alpha_curve: Vec<AlphaPoint>,
    pub conditional_variance: Option<VariancePair>,
    pub margin_of_correct_fraction: Vec<FractionPoint>,
    pub soft_margin_expectation: Option<f64>,
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

impl EvalReport {
    /// Writes `report.json`, `zeroshot.csv`, `alpha.csv` and, when margins
    /// are given, `margins.csv`, each under `dir` with `prefix` prepended.
    /// Returns the written paths.
    pub fn write(&self, dir: &Path, prefix: &str, margins: Option<&[f64]>) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let path = dir.join(format!("{prefix}report.json"));
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let path = dir.join(format!("{prefix}zeroshot.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["r", "error", "se"])?;
        for p in &self.top_r_error {
            w.write_record([p.r.to_string(), fmt(p.error), fmt(p.se)])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let path = dir.join(format!("{prefix}alpha.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["gamma", "alpha_hat", "alpha_exact", "se"])?;
        for p in &self.alpha_curve {
            w.write_record([fmt(p.gamma), fmt(p.alpha_hat), fmt(p.alpha_exact), fmt(p.se_hat)])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);

        if let Some(m) = margins {
            let path = dir.join(format!("{prefix}margins.csv"));
            write_margins_csv(&path, m)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Single-column `value` CSV.
pub fn write_margins_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["value"])?;
    for v in values {
        w.write_record([fmt(*v)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
