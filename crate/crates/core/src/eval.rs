//! Held-out evaluation of a trained model.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::formats::write_file;
use crate::metrics::{chamfer, mse};
use crate::net::{denoise, load_checkpoint, NetConfig, NetParams, TrainSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub mse_noisy: f64,
    pub mse_denoised: f64,
    pub cd_noisy: f64,
    pub cd_denoised: f64,
}

/// Mean and population standard deviation of one column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mse_noisy: ColumnStats,
    pub mse_denoised: ColumnStats,
    pub cd_noisy: ColumnStats,
    pub cd_denoised: ColumnStats,
}

impl Aggregates {
    pub fn of(rows: &[EvalRow]) -> Self {
        Self {
            mse_noisy: ColumnStats::of(rows.iter().map(|r| r.mse_noisy)),
            mse_denoised: ColumnStats::of(rows.iter().map(|r| r.mse_denoised)),
            cd_noisy: ColumnStats::of(rows.iter().map(|r| r.cd_noisy)),
            cd_denoised: ColumnStats::of(rows.iter().map(|r| r.cd_denoised)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub dataset: String,
    /// Points left in place because their predicted plane was degenerate.
    pub degenerate_points: usize,
    pub rows: Vec<EvalRow>,
    pub aggregates: Aggregates,
}

/// Denoises every sample and scores both the noisy input and the output
/// against the clean cloud. Rows keep the order of `samples`.
pub fn evaluate_samples(
    samples: &[TrainSample],
    params: &NetParams,
    config: &NetConfig,
    checkpoint: &str,
    dataset: &str,
) -> Result<EvalReport> {
    let per: Vec<(EvalRow, usize)> = samples
        .par_iter()
        .map(|s| {
            let d = denoise(&s.noisy, params, config)?;
            let row = EvalRow {
                id: s.id.clone(),
                mse_noisy: mse(&s.noisy, &s.clean)?,
                mse_denoised: mse(&d.cloud, &s.clean)?,
                cd_noisy: chamfer(&s.noisy, &s.clean)?,
                cd_denoised: chamfer(&d.cloud, &s.clean)?,
            };
            Ok((row, d.degenerate))
        })
        .collect::<Result<_>>()?;
    let degenerate_points = per.iter().map(|p| p.1).sum();
    let rows: Vec<EvalRow> = per.into_iter().map(|p| p.0).collect();
    Ok(EvalReport {
        checkpoint: checkpoint.to_string(),
        dataset: dataset.to_string(),
        degenerate_points,
        aggregates: Aggregates::of(&rows),
        rows,
    })
}

pub fn evaluate(manifest: &DatasetManifest, checkpoint: impl AsRef<Path>) -> Result<EvalReport> {
    let checkpoint = checkpoint.as_ref();
    let (params, config) = load_checkpoint(checkpoint)?;
    let samples = manifest.load_samples()?;
    evaluate_samples(
        &samples,
        &params,
        &config,
        &checkpoint.display().to_string(),
        &manifest.path().display().to_string(),
    )
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Dataset(e.to_string()))
    }

    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.rows)
    }

    /// Writes `<stem>.json` and `<stem>.csv` next to each other.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        write_file(&stem.with_extension("json"), self.to_json()?.as_bytes())?;
        write_file(&stem.with_extension("csv"), self.to_csv()?.as_bytes())
    }
}

/// Serializes rows with a header taken from the field names.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Dataset(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Dataset(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Dataset(format!("csv: {e}")))
}
