use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::volume::{Fingerprint, Volume4D};
use crate::error::{Error, Result};
use crate::identify::{SearchConfig, VolumeEstimate};

/// One line of the estimate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub slice_index: usize,
    pub sigma_g: f64,
    pub n_dof: f64,
    pub n_identified: usize,
    pub converged: bool,
    pub outer_iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// JSON document written by `chisigma estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub config: SearchConfig,
    pub input: Fingerprint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_max: Option<f64>,
    pub slices: Vec<SliceRecord>,
}

impl EstimateReport {
    pub fn new(config: &SearchConfig, data: &Volume4D, estimate: &VolumeEstimate) -> Self {
        EstimateReport {
            config: config.clone(),
            input: data.fingerprint(),
            sigma_max: Some(estimate.sigma_max),
            slices: estimate
                .slices
                .iter()
                .map(|s| SliceRecord {
                    slice_index: s.slice_index,
                    sigma_g: s.sigma_g,
                    n_dof: s.n_dof,
                    n_identified: s.n_identified,
                    converged: s.converged,
                    outer_iters: s.outer_iters,
                    failure: s.failure.clone(),
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.config
            .validate()
            .map_err(|e| Error::Schema(format!("config: {e}")))?;
        for (i, s) in self.slices.iter().enumerate() {
            if s.slice_index != i {
                return Err(Error::Schema(format!(
                    "record {i} carries slice_index {}",
                    s.slice_index
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EstimateReport =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        report.validate()?;
        Ok(report)
    }
}

pub fn write_report(report: &EstimateReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EstimateReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EstimateReport::from_json(&text)
}

/// `slice_index,sigma_g,n_dof` per slice, for plotting.
pub fn write_slice_csv(report: &EstimateReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("slice_index,sigma_g,n_dof\n");
    for s in &report.slices {
        out.push_str(&format!("{},{},{}\n", s.slice_index, s.sigma_g, s.n_dof));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::Axis;
    use crate::model::Estimator;
    use crate::specfun::ProbLevel;

    fn sample_report(slices: usize) -> EstimateReport {
        EstimateReport {
            config: SearchConfig {
                p: ProbLevel::new(0.01).unwrap(),
                estimator: Estimator::Mle,
                fixed_n: Some(0.5),
                slice_axis: Axis::Y,
                ..SearchConfig::default()
            },
            input: Fingerprint {
                dims: [3, 4, slices, 7],
                sha256: "ab".repeat(32),
            },
            sigma_max: Some(411.123_456_789_012_3),
            slices: (0..slices)
                .map(|i| SliceRecord {
                    slice_index: i,
                    sigma_g: 171.0 + (i as f64) / 3.0,
                    n_dof: 4.0 - 1e-13 * i as f64,
                    n_identified: 1000 + i,
                    converged: i % 7 != 0,
                    outer_iters: 3 + i % 5,
                    failure: (i == 5).then(|| "no candidate noise level".to_string()),
                })
                .collect(),
        }
    }

    #[test]
    fn roundtrip_is_identity() {
        let report = sample_report(60);
        let back = EstimateReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let mut value: serde_json::Value =
            serde_json::from_str(&sample_report(2).to_json().unwrap()).unwrap();
        value["producer"] = serde_json::json!("someone else");
        value["slices"][0]["extra"] = serde_json::json!(1);
        let back = EstimateReport::from_json(&value.to_string()).unwrap();
        assert_eq!(back, sample_report(2));
    }

    #[test]
    fn missing_fields_are_schema_errors() {
        let mut value: serde_json::Value =
            serde_json::from_str(&sample_report(2).to_json().unwrap()).unwrap();
        value["slices"][1]
            .as_object_mut()
            .unwrap()
            .remove("sigma_g");
        assert!(matches!(
            EstimateReport::from_json(&value.to_string()),
            Err(Error::Schema(_))
        ));

        let mut value: serde_json::Value =
            serde_json::from_str(&sample_report(2).to_json().unwrap()).unwrap();
        value["config"]["p"] = serde_json::json!(1.5);
        assert!(matches!(
            EstimateReport::from_json(&value.to_string()),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            EstimateReport::from_json("[]"),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn csv_has_one_row_per_slice() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_slice_csv(&sample_report(4), &path).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "slice_index,sigma_g,n_dof");
        assert!(lines[2].starts_with("1,171.333"));
    }
}
