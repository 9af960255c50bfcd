use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Direction;

use super::{SsimParams, PSNR_CAP_DB};

/// Scores of one evaluated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    /// Summed in the given order, so equal inputs give bit-equal results.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Aggregate { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Aggregate { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregates {
    pub l1: Aggregate,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
}

/// Everything needed to recompute a report's numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    /// How model tensors are mapped before scoring.
    pub intensity_space: String,
    pub data_range: f64,
    pub psnr_cap_db: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub ssim_covariance: String,
    pub ssim_border: String,
    pub std: String,
}

impl Default for MetricParams {
    fn default() -> Self {
        let s = SsimParams::default();
        MetricParams {
            intensity_space: "[0,1] = (v + 1) / 2".into(),
            data_range: s.data_range,
            psnr_cap_db: PSNR_CAP_DB,
            ssim_window: s.window,
            ssim_sigma: s.sigma,
            ssim_k1: s.k1,
            ssim_k2: s.k2,
            ssim_covariance: "population".into(),
            ssim_border: "valid windows only".into(),
            std: "population".into(),
        }
    }
}

impl MetricParams {
    pub fn ssim(&self) -> SsimParams {
        SsimParams {
            window: self.ssim_window,
            sigma: self.ssim_sigma,
            k1: self.ssim_k1,
            k2: self.ssim_k2,
            data_range: self.data_range,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Model identity, usually the SHA-256 of the checkpoint file.
    pub checkpoint_id: Option<String>,
    /// Content hash of the evaluated dataset's manifest.
    pub dataset_hash: Option<String>,
    /// Free-form model label (`one2one`, a stub name, ...).
    pub model: Option<String>,
    pub metrics: MetricParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `A2B` or `B2A`.
    pub direction: String,
    pub metadata: ReportMetadata,
    pub per_sample: Vec<SampleMetrics>,
    pub aggregates: MetricAggregates,
}

impl MetricReport {
    pub fn from_rows(direction: Direction, per_sample: Vec<SampleMetrics>, metadata: ReportMetadata) -> Self {
        let aggregates = MetricAggregates {
            l1: Aggregate::of(per_sample.iter().map(|r| r.l1)),
            psnr: Aggregate::of(per_sample.iter().map(|r| r.psnr)),
            ssim: Aggregate::of(per_sample.iter().map(|r| r.ssim)),
        };
        MetricReport {
            direction: direction.label().to_string(),
            metadata,
            per_sample,
            aggregates,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.per_sample.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// `id,l1,psnr,ssim` rows; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,l1,psnr,ssim\n");
        for r in &self.per_sample {
            let _ = writeln!(s, "{},{},{},{}", r.id, r.l1, r.psnr, r.ssim);
        }
        s
    }

    /// Write `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&json, self.to_json()? + "\n").map_err(|e| Error::io(&json, e))?;
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        Ok([json, csv])
    }
}
