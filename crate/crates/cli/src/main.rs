use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use npd_core::ablation::{alpha_sweep, global_feature_ablation};
use npd_core::data::{build_dataset_with_skips, DatasetManifest, DatasetParams, SkippedMesh};
use npd_core::eval::{evaluate_samples, to_csv};
use npd_core::formats::{read_cloud, write_cloud, write_planes};
use npd_core::geom::normalize_unit_cube;
use npd_core::mesh::{analytic_corpus, load_mesh, load_sources, sample_surface, write_off};
use npd_core::net::{denoise, load_checkpoint, save_checkpoint, train, NetConfig, TrainSample};
use npd_core::planefit::compute_reference_planes;
use npd_core::{Error, ErrorKind, Result};

#[derive(Parser, Debug)]
#[command(name = "npd", version, about = "Point-cloud denoising by projection onto learned local planes")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write analytic test meshes (planes, spheres, cylinders, cubes and mixes) as OFF files.
    Corpus {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Position in the shape cycle to start from.
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample point clouds from meshes and normalize them to the unit cube.
    Sample {
        #[arg(required = true)]
        meshes: Vec<PathBuf>,
        #[arg(long, default_value_t = 2048)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit reference planes to clean clouds.
    Preprocess {
        #[arg(required = true)]
        clouds: Vec<PathBuf>,
        #[arg(long)]
        eps_scale: Option<f64>,
        #[arg(long)]
        max_k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a dataset (clean, planes, noisy, manifest) from meshes.
    Build {
        #[arg(required = true)]
        meshes: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Dataset scored after every epoch.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Denoise one cloud with a trained model.
    Denoise {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the predicted planes.
        #[arg(long)]
        planes: Option<PathBuf>,
    },
    /// Score a model on a dataset; writes <report>.json and <report>.csv.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Paired training runs for the alpha and global-feature studies.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        /// Held-out dataset; without it the last fifth of the dataset is held out.
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: AblateMode,
        /// Comma-separated alpha values for the sweep.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetFlags,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum AblateMode {
    AlphaSweep,
    GlobalFeature,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DataFlags {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    eps_scale: Option<f64>,
    #[arg(long)]
    max_k: Option<usize>,
}

#[derive(Args, Debug)]
struct NetFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha_start: Option<f64>,
    #[arg(long)]
    alpha_end: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    local_widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    head_widths: Option<Vec<usize>>,
    #[arg(long)]
    batch_clouds: Option<usize>,
    /// Train the local-only variant.
    #[arg(long)]
    no_global: bool,
    #[arg(long)]
    resample_noise: bool,
}

/// Everything a run can be configured with. Every field is optional in the
/// JSON file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    net: NetConfig,
    dataset: DatasetParams,
    alphas: Option<Vec<f64>>,
}

impl RunConfig {
    fn load(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.net.seed = s;
            cfg.dataset.seed = s;
        }
        Ok(cfg)
    }

    fn apply_data(&mut self, f: &DataFlags) {
        let d = &mut self.dataset;
        d.n_points = f.n.unwrap_or(d.n_points);
        d.sigma = f.sigma.unwrap_or(d.sigma);
        d.plane_fit.eps_scale = f.eps_scale.unwrap_or(d.plane_fit.eps_scale);
        d.plane_fit.max_k = f.max_k.unwrap_or(d.plane_fit.max_k);
    }

    fn apply_net(&mut self, f: &NetFlags) {
        let n = &mut self.net;
        n.alpha_schedule.epochs = f.epochs.unwrap_or(n.alpha_schedule.epochs);
        n.alpha_schedule.start = f.alpha_start.unwrap_or(n.alpha_schedule.start);
        n.alpha_schedule.end = f.alpha_end.unwrap_or(n.alpha_schedule.end);
        n.optimizer.lr = f.lr.unwrap_or(n.optimizer.lr);
        if let Some(w) = &f.local_widths {
            n.local_widths = w.clone();
        }
        if let Some(w) = &f.head_widths {
            n.head_widths = w.clone();
        }
        n.batch_clouds = f.batch_clouds.unwrap_or(n.batch_clouds);
        n.use_global_feature &= !f.no_global;
        n.resample_noise |= f.resample_noise;
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(sha256_hex(&bytes))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Dataset(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    tool_version: &'a str,
    formats: [&'a str; 4],
    config: serde_json::Value,
    config_sha256: String,
    seeds: Vec<u64>,
    /// Input path to SHA-256 of its contents.
    inputs: Vec<(String, String)>,
}

/// Writes `run.json` describing what produced the outputs next to it.
fn write_provenance<T: Serialize>(path: &Path, command: &str, config: &T, seeds: Vec<u64>, inputs: &[&Path]) -> Result<()> {
    let value = serde_json::to_value(config).map_err(|e| Error::Dataset(e.to_string()))?;
    let canonical = serde_json::to_vec(&value).map_err(|e| Error::Dataset(e.to_string()))?;
    let inputs = inputs
        .iter()
        .map(|p| Ok((p.display().to_string(), file_hash(p)?)))
        .collect::<Result<_>>()?;
    write_json(
        path,
        &Provenance {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            formats: ["PCB1", "PLN1", "NPD1", "manifest-v1"],
            config_sha256: sha256_hex(&canonical),
            config: value,
            seeds,
            inputs,
        },
    )
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}

fn manifest_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(npd_core::data::MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus { count, seed, offset, out } => {
            let corpus = analytic_corpus(count, seed, offset);
            for m in &corpus {
                write_off(&m.mesh, out.join(format!("{}.off", m.name)))?;
            }
            write_provenance(&out.join("run.json"), "corpus", &(count, seed, offset), vec![seed], &[])?;
            log::info!("wrote {} meshes to {}", corpus.len(), out.display());
        }
        Command::Sample { meshes, n, seed, out } => {
            for (i, path) in meshes.iter().enumerate() {
                let mesh = load_mesh(path)?;
                let s = npd_core::rng::derive_seed(seed, &[npd_core::rng::tag::SAMPLE, i as u64]);
                let (cloud, _) = normalize_unit_cube(&sample_surface(&mesh, n, s)?);
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                write_cloud(out.join(format!("{i:04}_{stem}.pcb")), &cloud)?;
            }
            let inputs: Vec<&Path> = meshes.iter().map(PathBuf::as_path).collect();
            write_provenance(&out.join("run.json"), "sample", &(n, seed), vec![seed], &inputs)?;
        }
        Command::Preprocess { clouds, eps_scale, max_k, out } => {
            let mut params = npd_core::planefit::PlaneFitParams::default();
            params.eps_scale = eps_scale.unwrap_or(params.eps_scale);
            params.max_k = max_k.unwrap_or(params.max_k);
            params.validate()?;
            let mut stats = Vec::new();
            for path in &clouds {
                let cloud = read_cloud(path)?;
                let r = compute_reference_planes(&cloud, &params)?;
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                write_planes(out.join(format!("{stem}.pln")), &r.planes)?;
                stats.push(serde_json::json!({ "cloud": path.display().to_string(), "stats": r.stats }));
            }
            write_json(&out.join("stats.json"), &stats)?;
            let inputs: Vec<&Path> = clouds.iter().map(PathBuf::as_path).collect();
            write_provenance(&out.join("run.json"), "preprocess", &params, vec![], &inputs)?;
        }
        Command::Build { meshes, common, data, out } => {
            let mut cfg = RunConfig::load(&common)?;
            cfg.apply_data(&data);
            cfg.dataset.validate()?;
            let mut sources = Vec::new();
            let mut skipped = Vec::new();
            for (path, r) in load_sources(&meshes) {
                match r {
                    Ok(s) => sources.push(s),
                    Err(e) => {
                        log::warn!("skipping {}: {e}", path.display());
                        skipped.push(SkippedMesh {
                            source: path.display().to_string(),
                            error: e.to_string(),
                        });
                    }
                }
            }
            let m = build_dataset_with_skips(&sources, skipped, &out, &cfg.dataset)?;
            log::info!("built {} entries ({} skipped)", m.entries.len(), m.skipped.len());
            let inputs: Vec<&Path> = meshes.iter().map(PathBuf::as_path).filter(|p| p.is_file()).collect();
            write_provenance(&out.join("run.json"), "build", &cfg.dataset, vec![cfg.dataset.seed], &inputs)?;
        }
        Command::Train { dataset, validation, common, net, out } => {
            let mut cfg = RunConfig::load(&common)?;
            cfg.apply_net(&net);
            cfg.net.validate()?;
            let manifest = DatasetManifest::load(&dataset)?;
            let samples = manifest.load_samples()?;
            let val = match &validation {
                Some(v) => Some(DatasetManifest::load(v)?.load_samples()?),
                None => None,
            };
            let (params, history) = train(&samples, val.as_deref(), &cfg.net)?;
            save_checkpoint(&params, &cfg.net, out.join("model.npd"))?;
            write_json(&out.join("history.json"), &history)?;
            write_text(&out.join("history.csv"), &to_csv(&history.records).map_err(|e| Error::Dataset(e.to_string()))?)?;
            let mut inputs = vec![manifest_file(&dataset)];
            inputs.extend(validation.as_deref().map(manifest_file));
            let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            write_provenance(&out.join("run.json"), "train", &cfg.net, vec![cfg.net.seed], &refs)?;
        }
        Command::Denoise { checkpoint, input, out, planes } => {
            let (params, config) = load_checkpoint(&checkpoint)?;
            let cloud = read_cloud(&input)?;
            let d = denoise(&cloud, &params, &config)?;
            write_cloud(&out, &d.cloud)?;
            if let Some(p) = &planes {
                write_planes(p, &d.filled_planes())?;
            }
            if d.degenerate > 0 {
                log::warn!("{} point(s) had degenerate planes and were left in place", d.degenerate);
            }
            write_provenance(&sidecar(&out), "denoise", &config, vec![config.seed], &[&checkpoint, &input])?;
        }
        Command::Eval { dataset, checkpoint, report } => {
            let manifest = DatasetManifest::load(&dataset)?;
            let (params, config) = load_checkpoint(&checkpoint)?;
            let samples = manifest.load_samples()?;
            let id = format!("{} sha256:{}", checkpoint.display(), file_hash(&checkpoint)?);
            let r = evaluate_samples(&samples, &params, &config, &id, &manifest.path().display().to_string())?;
            r.write(&report)?;
            let a = &r.aggregates;
            log::info!(
                "mse {:.4e} -> {:.4e}, cd {:.4e} -> {:.4e}",
                a.mse_noisy.mean,
                a.mse_denoised.mean,
                a.cd_noisy.mean,
                a.cd_denoised.mean
            );
            write_provenance(&sidecar(&report), "eval", &config, vec![config.seed], &[&checkpoint, &manifest.path()])?;
        }
        Command::Ablate { dataset, holdout, mode, alphas, common, net, out } => {
            let mut cfg = RunConfig::load(&common)?;
            cfg.apply_net(&net);
            if let Some(a) = alphas {
                cfg.alphas = Some(a);
            }
            cfg.net.validate()?;
            let manifest = DatasetManifest::load(&dataset)?;
            let mut train_set = manifest.load_samples()?;
            let test_set: Vec<TrainSample> = match &holdout {
                Some(h) => DatasetManifest::load(h)?.load_samples()?,
                None => {
                    if train_set.len() < 2 {
                        return Err(Error::Dataset("need at least 2 clouds to hold some out".into()));
                    }
                    let k = (train_set.len() / 5).max(1);
                    train_set.split_off(train_set.len() - k)
                }
            };
            let csv = match mode {
                AblateMode::AlphaSweep => {
                    let alphas = cfg.alphas.clone().unwrap_or_else(|| vec![0.1, 0.3, 0.5, 0.7, 0.9]);
                    to_csv(&alpha_sweep(&train_set, &test_set, &cfg.net, &alphas)?)?
                }
                AblateMode::GlobalFeature => to_csv(&global_feature_ablation(&train_set, &test_set, &cfg.net)?)?,
            };
            let name = match mode {
                AblateMode::AlphaSweep => "alpha_sweep.csv",
                AblateMode::GlobalFeature => "global_feature.csv",
            };
            write_text(&out.join(name), &csv)?;
            let mut inputs = vec![manifest_file(&dataset)];
            inputs.extend(holdout.as_deref().map(manifest_file));
            let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            write_provenance(&out.join("run.json"), "ablate", &(mode, &cfg), vec![cfg.net.seed], &refs)?;
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("NPD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("NPD_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
