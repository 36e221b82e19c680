//! Scoring an estimate report against simulated ground truth.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::EstimateReport;
use crate::synth::Truth;

/// Header line written at the top of every evaluation CSV.
pub const TRUTH_NOTE: &str =
    "# sigma_true per slice is the mean of tau*sigma_g over the true background voxels of that slice";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub slice_index: usize,
    pub sigma_est: f64,
    pub sigma_true: f64,
    pub pct_error_sigma: f64,
    pub n_est: f64,
    pub n_true: f64,
    pub converged: bool,
}

/// Mean and sample standard deviation of the percentage error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub n_slices: usize,
    /// Slices whose estimation failed; they are left out of the records.
    pub failed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub summary: EvalSummary,
}

pub fn pct_error(estimate: f64, truth: f64) -> f64 {
    100.0 * (estimate - truth) / truth
}

/// Per-slice σ error of `report` against `truth`.
pub fn evaluate(report: &EstimateReport, truth: &Truth) -> Result<EvalReport> {
    if report.input.dims != truth.noisy.dims {
        return Err(Error::Mismatch(format!(
            "report dims {:?} but truth dims {:?}",
            report.input.dims, truth.noisy.dims
        )));
    }
    if report.input.sha256 != truth.noisy.sha256 {
        return Err(Error::Mismatch(
            "report and truth fingerprints differ".into(),
        ));
    }
    let sigma_true = truth.slice_sigma(report.config.slice_axis);
    if sigma_true.len() != report.slices.len() {
        return Err(Error::Mismatch(format!(
            "report has {} slices, truth has {}",
            report.slices.len(),
            sigma_true.len()
        )));
    }

    let mut records = Vec::new();
    let mut failed = Vec::new();
    for (s, &st) in report.slices.iter().zip(&sigma_true) {
        if s.failure.is_some() {
            failed.push(s.slice_index);
            continue;
        }
        records.push(EvalRecord {
            slice_index: s.slice_index,
            sigma_est: s.sigma_g,
            sigma_true: st,
            pct_error_sigma: pct_error(s.sigma_g, st),
            n_est: s.n_dof,
            n_true: truth.n_true,
            converged: s.converged,
        });
    }
    let n = records.len();
    let mean = records.iter().map(|r| r.pct_error_sigma).sum::<f64>() / n as f64;
    let std = if n > 1 {
        (records
            .iter()
            .map(|r| (r.pct_error_sigma - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    Ok(EvalReport {
        records,
        summary: EvalSummary {
            mean,
            std,
            n_slices: n,
            failed,
        },
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRUTH_NOTE);
        out.push('\n');
        out.push_str("slice_index,sigma_est,sigma_true,pct_error_sigma,n_est,n_true,converged\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.slice_index,
                r.sigma_est,
                r.sigma_true,
                r.pct_error_sigma,
                r.n_est,
                r.n_true,
                r.converged
            );
        }
        out
    }
}

pub fn write_eval_csv(eval: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, eval.to_csv()).map_err(|e| Error::io(path, e))
}
