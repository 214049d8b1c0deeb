//! Dataset construction and manifests.
//!
//! A dataset directory holds, per source mesh, a clean cloud, its reference
//! planes and a noisy copy, plus `manifest.json` listing them with relative
//! paths.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_cloud, read_file, read_planes, write_cloud, write_file, write_planes};
use crate::geom::{add_gaussian_noise, normalize_unit_cube, NoiseModel};
use crate::mesh::{sample_surface, MeshSource};
use crate::net::TrainSample;
use crate::planefit::{compute_reference_planes, PlaneFitParams, PlaneFitStats};
use crate::rng::{self, tag};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    pub n_points: usize,
    pub sigma: f64,
    pub plane_fit: PlaneFitParams,
    pub seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            n_points: 2048,
            sigma: 0.01,
            plane_fit: PlaneFitParams::default(),
            seed: 0,
        }
    }
}

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 4 {
            return Err(Error::config(format!("n_points must be at least 4, got {}", self.n_points)));
        }
        NoiseModel::new(self.sigma, 0)?;
        self.plane_fit.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntrySeeds {
    pub sample: u64,
    pub noise: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_path: PathBuf,
    pub noisy_path: PathBuf,
    pub planes_path: PathBuf,
    pub source_mesh: String,
    pub n_points: usize,
    pub sigma: f64,
    pub seeds: EntrySeeds,
    pub plane_fit: PlaneFitStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatVersions {
    pub cloud: String,
    pub planes: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedMesh {
    pub source: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub formats: FormatVersions,
    pub params: DatasetParams,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` wins when set.
    pub created: u64,
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<SkippedMesh>,
    /// Directory the relative paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

fn creation_time() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

fn build_one(index: usize, src: &MeshSource, out_dir: &Path, params: &DatasetParams) -> Result<ManifestEntry> {
    let id = format!("{index:04}_{}", src.name);
    let seeds = EntrySeeds {
        sample: rng::derive_seed(params.seed, &[tag::SAMPLE, index as u64]),
        noise: rng::derive_seed(params.seed, &[tag::NOISE, index as u64]),
    };
    let raw = sample_surface(&src.mesh, params.n_points, seeds.sample)?;
    let (clean, _) = normalize_unit_cube(&raw);
    // Stored clouds are f32, so every later step works from the stored values.
    let clean = clean.to_f32_precision();
    let planes = compute_reference_planes(&clean, &params.plane_fit)?;
    let noisy = add_gaussian_noise(&clean, &NoiseModel::new(params.sigma, seeds.noise)?);

    let entry = ManifestEntry {
        clean_path: PathBuf::from(format!("clean/{id}.pcb")),
        noisy_path: PathBuf::from(format!("noisy/{id}.pcb")),
        planes_path: PathBuf::from(format!("planes/{id}.pln")),
        id,
        source_mesh: src.source.clone(),
        n_points: params.n_points,
        sigma: params.sigma,
        seeds,
        plane_fit: planes.stats,
    };
    write_cloud(out_dir.join(&entry.clean_path), &clean)?;
    write_planes(out_dir.join(&entry.planes_path), &planes.planes)?;
    write_cloud(out_dir.join(&entry.noisy_path), &noisy)?;
    Ok(entry)
}

/// Samples, normalizes, fits reference planes and adds noise for every
/// source, then writes `manifest.json` under `out_dir`. Sources that fail
/// are logged and listed under `skipped`; it is an error only if all fail.
pub fn build_dataset(sources: &[MeshSource], out_dir: impl AsRef<Path>, params: &DatasetParams) -> Result<DatasetManifest> {
    build_dataset_with_skips(sources, Vec::new(), out_dir, params)
}

/// [`build_dataset`] with sources that already failed to load.
pub fn build_dataset_with_skips(
    sources: &[MeshSource],
    mut skipped: Vec<SkippedMesh>,
    out_dir: impl AsRef<Path>,
    params: &DatasetParams,
) -> Result<DatasetManifest> {
    params.validate()?;
    let out_dir = out_dir.as_ref();
    let results: Vec<Result<ManifestEntry>> = sources
        .par_iter()
        .enumerate()
        .map(|(i, s)| build_one(i, s, out_dir, params))
        .collect();
    let mut entries = Vec::new();
    for (src, r) in sources.iter().zip(results) {
        match r {
            Ok(e) => entries.push(e),
            Err(e @ Error::Io { .. }) => return Err(e),
            Err(e) => {
                log::warn!("skipping {}: {e}", src.source);
                skipped.push(SkippedMesh {
                    source: src.source.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Dataset(format!("all {} mesh(es) failed", sources.len() + skipped.len())));
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        formats: FormatVersions {
            cloud: "PCB1".into(),
            planes: "PLN1".into(),
        },
        params: params.clone(),
        created: creation_time(),
        entries,
        skipped,
        root: out_dir.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn save(&self) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self).map_err(|e| Error::Dataset(e.to_string()))?;
        json.push('\n');
        write_file(&self.path(), json.as_bytes())
    }

    /// Reads a manifest from a file or from a dataset directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let bytes = read_file(&file)?;
        let mut m: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            path: Some(file.clone()),
            msg: format!("manifest: {e}"),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format {
                path: Some(file),
                msg: format!("unsupported manifest version {}", m.version),
            });
        }
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    /// Checks that ids are unique, `n_points` is uniform and every
    /// referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Dataset("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        let n = self.entries[0].n_points;
        for e in &self.entries {
            if !seen.insert(&e.id) {
                return Err(Error::Dataset(format!("duplicate id {}", e.id)));
            }
            if e.n_points != n {
                return Err(Error::Dataset(format!("{} has {} points, expected {n}", e.id, e.n_points)));
            }
            for p in [&e.clean_path, &e.noisy_path, &e.planes_path] {
                let full = self.root.join(p);
                if !full.is_file() {
                    return Err(Error::Dataset(format!("{}: missing file {}", e.id, full.display())));
                }
            }
        }
        Ok(())
    }

    /// Loads every entry's clouds and planes.
    pub fn load_samples(&self) -> Result<Vec<TrainSample>> {
        self.validate()?;
        self.entries
            .par_iter()
            .map(|e| {
                let s = TrainSample {
                    id: e.id.clone(),
                    clean: read_cloud(self.root.join(&e.clean_path))?,
                    noisy: read_cloud(self.root.join(&e.noisy_path))?,
                    planes: read_planes(self.root.join(&e.planes_path))?,
                    sigma: e.sigma,
                };
                for (what, len) in [("clean", s.clean.len()), ("noisy", s.noisy.len()), ("planes", s.planes.len())] {
                    if len != e.n_points {
                        return Err(Error::Dataset(format!(
                            "{}: {what} file has {len} rows, manifest says {}",
                            e.id, e.n_points
                        )));
                    }
                }
                Ok(s)
            })
            .collect()
    }
}
