//! Accuracy matrix, average accuracy and backward transfer.
//!
//! `R[i][j]` is the test accuracy on task `j` after training through task
//! `i` (both 1-based in the public API, `j ≤ i`). Accuracies are fractions
//! in `[0, 1]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const RMATRIX_FILE: &str = "rmatrix.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";

/// Lower-triangular accuracy matrix, built one row per training step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RMatrix {
    rows: Vec<Vec<f64>>,
}

impl RMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut r = Self::new();
        for row in rows {
            r.push_row(row)?;
        }
        Ok(r)
    }

    /// Appends row `i` (1-based), which must hold exactly `i` accuracies.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let i = self.rows.len() + 1;
        if row.len() != i {
            return Err(Error::InvalidArgument(format!(
                "row {i} needs {i} entries, got {}",
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    /// `R_{i,j}`, 1-based.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i.checked_sub(1)?)?.get(j.checked_sub(1)?).copied()
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        self.rows.get(i.checked_sub(1)?).map(Vec::as_slice)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Mean accuracy over tasks `1..=T` after training task `T`.
pub fn acc_at(r: &RMatrix, t: usize) -> Result<f64> {
    let row = r
        .row(t)
        .ok_or_else(|| Error::InvalidArgument(format!("row {t} of the accuracy matrix is missing")))?;
    Ok(row.iter().sum::<f64>() / t as f64)
}

/// Mean change `R_{T,t} − R_{t,t}` over earlier tasks `t < T`.
pub fn bwf_at(r: &RMatrix, t: usize) -> Result<f64> {
    if t < 2 {
        return Err(Error::InvalidArgument("backward transfer needs T ≥ 2".into()));
    }
    let last = r
        .row(t)
        .ok_or_else(|| Error::InvalidArgument(format!("row {t} of the accuracy matrix is missing")))?;
    let total: f64 = (1..t)
        .map(|j| last[j - 1] - r.rows[j - 1][j - 1])
        .sum();
    Ok(total / (t - 1) as f64)
}

/// One metrics line per step: `(step, ACC, BWF)` with no BWF at step 1.
pub fn metric_curve(r: &RMatrix) -> Result<Vec<(usize, f64, Option<f64>)>> {
    (1..=r.steps())
        .map(|t| Ok((t, acc_at(r, t)?, if t >= 2 { Some(bwf_at(r, t)?) } else { None })))
        .collect()
}

pub fn format_rmatrix(r: &RMatrix) -> String {
    let mut s = String::new();
    for row in &r.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&cells.join("\t"));
        s.push('\n');
    }
    s
}

pub fn format_metrics(r: &RMatrix) -> Result<String> {
    let mut s = String::from("step\tacc\tbwf\n");
    for (t, acc, bwf) in metric_curve(r)? {
        match bwf {
            Some(b) => writeln!(s, "{t}\t{acc:.6}\t{b:.6}").unwrap(),
            None => writeln!(s, "{t}\t{acc:.6}\t").unwrap(),
        }
    }
    Ok(s)
}

/// Writes `rmatrix.tsv` and `metrics.tsv` into `dir`.
pub fn emit_report(r: &RMatrix, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(RMATRIX_FILE);
    fs::write(&p, format_rmatrix(r)).map_err(|e| Error::io(&p, e))?;
    let p = dir.join(METRICS_FILE);
    fs::write(&p, format_metrics(r)?).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

pub fn parse_rmatrix(path: &Path) -> Result<RMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = RMatrix::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split('\t')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::data(path, i + 1, format!("`{v}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        r.push_row(row).map_err(|e| Error::data(path, i + 1, e.to_string()))?;
    }
    Ok(r)
}
