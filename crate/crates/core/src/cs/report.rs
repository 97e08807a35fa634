use std::fmt::Write as _;

use crate::scalar::Real;
use crate::tensor::TensorBase;
use crate::CoreError;

/// Per-row reconstruction error `||x - x_hat||_2 / sqrt(n)`, accumulated in
/// f64. For pixels in `[0, 1]` this is a per-pixel RMS-style score.
pub fn recon_error<T: Real>(
    x: &TensorBase<T>,
    x_hat: &TensorBase<T>,
) -> Result<Vec<f64>, CoreError> {
    if x.shape() != x_hat.shape() {
        return Err(CoreError::Dimension(format!(
            "signal batch {:?} vs reconstruction batch {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    let (rows, cols) = x.rows_cols();
    let sqrt_n = (cols as f64).sqrt();
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let sum: f64 = x
            .row(r)
            .iter()
            .zip(x_hat.row(r))
            .map(|(a, b)| {
                let d = a.to_f64_lossy() - b.to_f64_lossy();
                d * d
            })
            .sum();
        out.push(sum.sqrt() / sqrt_n);
    }
    Ok(out)
}

/// One reconstructed image.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconRow {
    pub method: String,
    pub m: usize,
    pub image_index: usize,
    pub error: f64,
}

/// One (method, measurement count) cell of the experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconSummary {
    pub method: String,
    pub m: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub seconds: f64,
}

/// Accumulates per-image errors and per-cell summaries across an experiment
/// run, and renders both as CSV.
#[derive(Debug, Clone, Default)]
pub struct ReconReport {
    pub rows: Vec<ReconRow>,
    pub summaries: Vec<ReconSummary>,
}

impl ReconReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one method/m cell: per-image rows plus a summary with sample
    /// standard deviation.
    pub fn add_batch(&mut self, method: &str, m: usize, errors: &[f64], seconds: f64) {
        for (i, &e) in errors.iter().enumerate() {
            self.rows.push(ReconRow {
                method: method.to_string(),
                m,
                image_index: i,
                error: e,
            });
        }
        let count = errors.len() as f64;
        let mean = if errors.is_empty() {
            0.0
        } else {
            errors.iter().sum::<f64>() / count
        };
        let std = if errors.len() < 2 {
            0.0
        } else {
            let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                / (count - 1.0);
            var.sqrt()
        };
        self.summaries.push(ReconSummary {
            method: method.to_string(),
            m,
            mean_error: mean,
            std_error: std,
            seconds,
        });
    }

    pub fn summary(&self, method: &str, m: usize) -> Option<&ReconSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.m == m)
    }

    /// `method,m,mean_error,std_error,seconds` with one row per cell.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,m,mean_error,std_error,seconds\n");
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.3}",
                s.method, s.m, s.mean_error, s.std_error, s.seconds
            );
        }
        out
    }

    /// `method,m,image_index,error` with one row per reconstructed image.
    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("method,m,image_index,error\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6}", r.method, r.m, r.image_index, r.error);
        }
        out
    }
}
