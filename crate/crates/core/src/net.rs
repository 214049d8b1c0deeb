//! Plane-regression network, losses, training loop, inference and
//! checkpoints.
//!
//! The network is a PointNet-style shared MLP: every point's coordinates go
//! through the same local layers, a column-wise max gives one global feature
//! row, the global row is concatenated to each local row, and a head MLP maps
//! every row to an unnormalized plane `(a, c)`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_file, write_file, Reader};
use crate::geom::{add_gaussian_noise, plane_from_raw, NoiseModel, Plane, PlaneSet, Point3, PointCloud};
use crate::metrics;
use crate::optim::{Adam, OptimizerConfig};
use crate::rng::{self, tag};
use crate::tensor::{Tape, Tensor, Var};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NPD1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaSchedule {
    pub start: f64,
    pub end: f64,
    pub epochs: usize,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self {
            start: 0.1,
            end: 0.9,
            epochs: 100,
        }
    }
}

impl AlphaSchedule {
    pub fn constant(alpha: f64, epochs: usize) -> Self {
        Self {
            start: alpha,
            end: alpha,
            epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub local_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub alpha_schedule: AlphaSchedule,
    pub optimizer: OptimizerConfig,
    pub batch_clouds: usize,
    pub seed: u64,
    /// When false the head sees local features only. The last local layer
    /// is then twice as wide so the head input width stays the same.
    pub use_global_feature: bool,
    /// Draw fresh noise around the clean cloud every epoch instead of
    /// reusing the stored noisy cloud.
    pub resample_noise: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            local_widths: vec![64, 128, 512],
            head_widths: vec![256, 64, 4],
            alpha_schedule: AlphaSchedule::default(),
            optimizer: OptimizerConfig::default(),
            batch_clouds: 1,
            seed: 0,
            use_global_feature: true,
            resample_noise: false,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.local_widths.is_empty() || self.local_widths.contains(&0) {
            return bad(format!("local_widths must be non-empty and positive, got {:?}", self.local_widths));
        }
        if self.head_widths.last() != Some(&4) || self.head_widths.contains(&0) {
            return bad(format!("head_widths must be positive and end in 4, got {:?}", self.head_widths));
        }
        let s = &self.alpha_schedule;
        for a in [s.start, s.end] {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("alpha must lie in [0, 1], got {a}"));
            }
        }
        if s.epochs == 0 {
            return bad("alpha_schedule.epochs must be at least 1".into());
        }
        if self.batch_clouds == 0 {
            return bad("batch_clouds must be at least 1".into());
        }
        self.optimizer.validate()
    }

    /// Widths of the local layers as built, including the local-only widening.
    pub fn effective_local_widths(&self) -> Vec<usize> {
        let mut w = self.local_widths.clone();
        if !self.use_global_feature {
            if let Some(last) = w.last_mut() {
                *last *= 2;
            }
        }
        w
    }

    pub fn global_width(&self) -> usize {
        *self.local_widths.last().unwrap_or(&0)
    }

    /// `(name, [in, out])` for every weight matrix in forward order.
    fn layer_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut fan_in = 3;
        for (i, &w) in self.effective_local_widths().iter().enumerate() {
            out.push((format!("local.{i}"), fan_in, w));
            fan_in = w;
        }
        fan_in = 2 * self.global_width();
        for (i, &w) in self.head_widths.iter().enumerate() {
            out.push((format!("head.{i}"), fan_in, w));
            fan_in = w;
        }
        out
    }
}

/// Named parameter tensors in forward order: `local.{i}.weight` (`[in, out]`),
/// `local.{i}.bias` (`[out]`), then the same for `head.{i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    entries: Vec<(String, Tensor)>,
}

impl NetParams {
    /// He-uniform weights for hidden layers, Glorot-uniform for the final
    /// linear layer, zero biases. Drawn from the `INIT` stream of `config.seed`.
    pub fn init(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let mut entries = Vec::with_capacity(2 * shapes.len());
        for (k, (name, fan_in, fan_out)) in shapes.into_iter().enumerate() {
            let bound = if k == last {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            let mut r = rng::stream(config.seed, &[tag::INIT, k as u64]);
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| r.random_range(-bound..bound) as f32 as f64)
                .collect();
            entries.push((format!("{name}.weight"), Tensor::new(vec![fan_in, fan_out], w)?));
            entries.push((format!("{name}.bias"), Tensor::zeros(vec![fan_out])?));
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checks names and shapes against `config`.
    pub fn check(&self, config: &NetConfig) -> Result<()> {
        let shapes = config.layer_shapes();
        if self.entries.len() != 2 * shapes.len() {
            return Err(Error::config(format!(
                "parameters have {} tensors, config needs {}",
                self.entries.len(),
                2 * shapes.len()
            )));
        }
        for (k, (name, i, o)) in shapes.iter().enumerate() {
            let expect = [
                (format!("{name}.weight"), vec![*i, *o]),
                (format!("{name}.bias"), vec![*o]),
            ];
            for (j, (en, es)) in expect.iter().enumerate() {
                let (n, t) = &self.entries[2 * k + j];
                if n != en || t.shape() != es.as_slice() {
                    return Err(Error::config(format!(
                        "parameter {n} {:?} does not match config ({en} {es:?})",
                        t.shape()
                    )));
                }
            }
        }
        Ok(())
    }

    fn round_to_f32(&mut self) {
        for (_, t) in &mut self.entries {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

fn cloud_tensor(cloud: &PointCloud) -> Result<Tensor> {
    Tensor::matrix(cloud.len(), 3, cloud.to_flat())
}

fn planes_tensor(planes: &PlaneSet) -> Result<Tensor> {
    Tensor::matrix(planes.len(), 4, planes.to_flat())
}

/// Records the network on `tape`. Returns the parameter variables (same
/// order as [`NetParams::entries`]) and the `N×4` output.
pub fn forward_on_tape(tape: &mut Tape, points: Var, params: &NetParams, config: &NetConfig) -> Result<(Vec<Var>, Var)> {
    params.check(config)?;
    let vars: Vec<Var> = params
        .entries
        .iter()
        .map(|(_, t)| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = network_on_tape(tape, points, &vars, config)?;
    Ok((vars, out))
}

/// Records the network on `tape` with parameters already on the tape as
/// `vars`, in [`NetParams::entries`] order.
pub fn network_on_tape(tape: &mut Tape, points: Var, vars: &[Var], config: &NetConfig) -> Result<Var> {
    let n = tape.shape(points)[0];
    let n_local = config.local_widths.len();

    let mut h = points;
    for i in 0..n_local {
        h = tape.matmul(h, vars[2 * i])?;
        h = tape.add_bias(h, vars[2 * i + 1])?;
        h = tape.relu(h)?;
    }
    if config.use_global_feature {
        let g = tape.maxpool_cols(h)?;
        let g = tape.broadcast_row(g, n)?;
        h = tape.concat_cols(h, g)?;
    }
    let n_head = config.head_widths.len();
    for j in 0..n_head {
        let k = n_local + j;
        h = tape.matmul(h, vars[2 * k])?;
        h = tape.add_bias(h, vars[2 * k + 1])?;
        if j + 1 < n_head {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Raw `N×4` plane predictions for `noisy`.
pub fn forward(noisy: &PointCloud, params: &NetParams, config: &NetConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let pts = tape.leaf(cloud_tensor(noisy)?);
    let (_, out) = forward_on_tape(&mut tape, pts, params, config)?;
    Ok(tape.value(out).clone())
}

/// Column-wise max of the local features, the network's global feature.
pub fn global_feature(noisy: &PointCloud, params: &NetParams, config: &NetConfig) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut h = tape.leaf(cloud_tensor(noisy)?);
    params.check(config)?;
    for i in 0..config.local_widths.len() {
        let w = tape.leaf(params.entries[2 * i].1.clone());
        let b = tape.leaf(params.entries[2 * i + 1].1.clone());
        h = tape.matmul(h, w)?;
        h = tape.add_bias(h, b)?;
        h = tape.relu(h)?;
    }
    let g = tape.maxpool_cols(h)?;
    Ok(tape.data(g).to_vec())
}

/// `(1/N) Σ ‖p̂ᵢ − pᵢ‖²` on the tape.
pub fn loss1_on_tape(tape: &mut Tape, denoised: Var, clean: Var) -> Result<Var> {
    let n = tape.shape(denoised).first().copied().unwrap_or(1);
    let d = tape.sub(denoised, clean)?;
    let sq = tape.square(d)?;
    let s = tape.sum_all(sq)?;
    tape.scale(s, 1.0 / n as f64)
}

/// `(1/N) Σ |1 − cos(predᵢ, refᵢ)|` over 4-vectors, on the tape.
pub fn loss2_on_tape(tape: &mut Tape, pred: Var, refs: Var) -> Result<Var> {
    let cos = tape.cosine_sim_rows(pred, refs)?;
    let neg = tape.scale(cos, -1.0)?;
    let gap = tape.add_scalar(neg, 1.0)?;
    let a = tape.abs(gap)?;
    tape.mean_all(a)
}

pub fn loss1(denoised: &Tensor, clean: &Tensor) -> Result<f64> {
    if denoised.shape() != clean.shape() {
        return Err(Error::usage(format!(
            "loss1 shapes differ: {:?} vs {:?}",
            denoised.shape(),
            clean.shape()
        )));
    }
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(denoised.clone()), tape.leaf(clean.clone()));
    let l = loss1_on_tape(&mut tape, a, b)?;
    tape.value(l).item()
}

pub fn loss2(pred_raw: &Tensor, refs: &PlaneSet) -> Result<f64> {
    let (n, k) = pred_raw.dims2()?;
    if k != 4 || n != refs.len() {
        return Err(Error::usage(format!(
            "loss2 needs N×4 predictions for {} planes, got {:?}",
            refs.len(),
            pred_raw.shape()
        )));
    }
    let mut tape = Tape::new();
    let p = tape.leaf(pred_raw.clone());
    let r = tape.leaf(planes_tensor(refs)?);
    let l = loss2_on_tape(&mut tape, p, r)?;
    tape.value(l).item()
}

pub fn combined_loss(l1: f64, l2: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * l1 + (1.0 - alpha) * l2)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Linear interpolation from `start` at epoch 0 to `end` at the last epoch.
pub fn alpha_at(epoch: usize, schedule: &AlphaSchedule) -> f64 {
    if schedule.epochs <= 1 {
        return schedule.start;
    }
    let t = epoch.min(schedule.epochs - 1) as f64 / (schedule.epochs - 1) as f64;
    schedule.start + (schedule.end - schedule.start) * t
}

/// One training example: noisy input, clean target, reference planes.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub id: String,
    pub noisy: PointCloud,
    pub clean: PointCloud,
    pub planes: PlaneSet,
    /// Noise level, used when `resample_noise` is on.
    pub sigma: f64,
}

impl TrainSample {
    fn check(&self) -> Result<()> {
        let n = self.clean.len();
        if self.noisy.len() != n || self.planes.len() != n {
            return Err(Error::Dataset(format!(
                "{}: noisy/clean/planes sizes {}/{}/{} differ",
                self.id,
                self.noisy.len(),
                n,
                self.planes.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha: f64,
    pub loss: f64,
    pub loss1: f64,
    pub loss2: f64,
    pub val_mse: Option<f64>,
    pub val_cd: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

struct CloudPass {
    loss: f64,
    loss1: f64,
    loss2: f64,
    grads: Vec<Vec<f64>>,
}

fn cloud_pass(
    noisy: &PointCloud,
    sample: &TrainSample,
    params: &NetParams,
    config: &NetConfig,
    alpha: f64,
) -> Result<CloudPass> {
    let mut tape = Tape::new();
    let pts = tape.leaf(cloud_tensor(noisy)?);
    let (vars, raw) = forward_on_tape(&mut tape, pts, params, config)?;
    let proj = tape.project_planes(pts, raw)?;
    let clean = tape.leaf(cloud_tensor(&sample.clean)?);
    let refs = tape.leaf(planes_tensor(&sample.planes)?);
    let l1 = loss1_on_tape(&mut tape, proj, clean)?;
    let l2 = loss2_on_tape(&mut tape, raw, refs)?;
    let a = tape.scale(l1, alpha)?;
    let b = tape.scale(l2, 1.0 - alpha)?;
    let loss = tape.add(a, b)?;
    tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(&params.entries)
        .map(|(&v, (_, t))| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok(CloudPass {
        loss: tape.value(loss).item()?,
        loss1: tape.value(l1).item()?,
        loss2: tape.value(l2).item()?,
        grads,
    })
}

/// Trains from a fresh initialization. The optimizer runs
/// `alpha_schedule.epochs` epochs; each epoch visits the samples in a
/// seeded shuffled order, in batches of `batch_clouds` whose gradients are
/// averaged in a fixed order. Final parameters are rounded to `f32` so they
/// survive a checkpoint round trip unchanged.
pub fn train(
    samples: &[TrainSample],
    validation: Option<&[TrainSample]>,
    config: &NetConfig,
) -> Result<(NetParams, TrainHistory)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    for s in samples.iter().chain(validation.unwrap_or(&[])) {
        s.check()?;
    }
    let mut params = NetParams::init(config)?;
    let mut opt = Adam::new(config.optimizer, params.entries.iter().map(|(_, t)| t.numel()));
    let mut history = TrainHistory::default();

    for epoch in 0..config.alpha_schedule.epochs {
        let alpha = alpha_at(epoch, &config.alpha_schedule);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, &[tag::SHUFFLE, epoch as u64]));

        let (mut sum, mut sum1, mut sum2) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_clouds) {
            let passes: Vec<Result<CloudPass>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let noisy = if config.resample_noise {
                        let seed = rng::derive_seed(config.seed, &[tag::RESAMPLE, epoch as u64, i as u64]);
                        add_gaussian_noise(&s.clean, &NoiseModel::new(s.sigma, seed)?)
                    } else {
                        s.noisy.clone()
                    };
                    cloud_pass(&noisy, s, &params, config, alpha)
                })
                .collect();

            let mut acc: Vec<Vec<f64>> = params.entries.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            for (&i, pass) in batch.iter().zip(passes) {
                let id = &samples[i].id;
                let pass = pass.map_err(|e| match e {
                    Error::Usage(m) => Error::NonFinite(format!("epoch {epoch}, cloud {id}: {m}")),
                    other => other,
                })?;
                let finite = pass.loss.is_finite() && pass.grads.iter().flatten().all(|g| g.is_finite());
                if !finite {
                    return Err(Error::NonFinite(format!(
                        "epoch {epoch}, cloud {id}: loss {} or its gradient is not finite",
                        pass.loss
                    )));
                }
                sum += pass.loss;
                sum1 += pass.loss1;
                sum2 += pass.loss2;
                for (a, g) in acc.iter_mut().zip(&pass.grads) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            let k = 1.0 / batch.len() as f64;
            for a in &mut acc {
                for x in a.iter_mut() {
                    *x *= k;
                }
            }
            let mut slots: Vec<&mut [f64]> = params.entries.iter_mut().map(|(_, t)| t.data_mut()).collect();
            opt.step(&mut slots, &acc);
        }

        let m = samples.len() as f64;
        let (val_mse, val_cd) = match validation {
            Some(v) if !v.is_empty() => {
                let (a, b) = validation_metrics(v, &params, config)?;
                (Some(a), Some(b))
            }
            _ => (None, None),
        };
        let rec = EpochRecord {
            epoch,
            alpha,
            loss: sum / m,
            loss1: sum1 / m,
            loss2: sum2 / m,
            val_mse,
            val_cd,
        };
        log::info!(
            "epoch {epoch} alpha {alpha:.3} loss {:.6} loss1 {:.3e} loss2 {:.4}",
            rec.loss,
            rec.loss1,
            rec.loss2
        );
        history.records.push(rec);
    }

    params.round_to_f32();
    Ok((params, history))
}

fn validation_metrics(samples: &[TrainSample], params: &NetParams, config: &NetConfig) -> Result<(f64, f64)> {
    let per: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let d = denoise(&s.noisy, params, config)?;
            Ok((metrics::mse(&d.cloud, &s.clean)?, metrics::chamfer(&d.cloud, &s.clean)?))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

#[derive(Clone, Debug)]
pub struct Denoised {
    pub cloud: PointCloud,
    /// Normalized predicted plane per point; `None` where the predicted
    /// normal part was too small to normalize and the point passed through.
    pub planes: Vec<Option<Plane>>,
    pub degenerate: usize,
}

impl Denoised {
    /// Predicted planes with degenerate rows replaced by a plane through the
    /// unchanged point, for writing a complete plane file.
    pub fn filled_planes(&self) -> PlaneSet {
        self.planes
            .iter()
            .zip(self.cloud.iter())
            .map(|(p, &pt)| p.unwrap_or_else(|| Plane::through(Point3::new(0.0, 0.0, 1.0), pt).expect("unit normal")))
            .collect()
    }
}

/// Predicts planes for `noisy` and projects every point onto its plane.
pub fn denoise(noisy: &PointCloud, params: &NetParams, config: &NetConfig) -> Result<Denoised> {
    let raw = forward(noisy, params, config)?;
    let mut planes = Vec::with_capacity(noisy.len());
    let mut points = Vec::with_capacity(noisy.len());
    let mut degenerate = 0;
    for (i, &p) in noisy.iter().enumerate() {
        let r = raw.row(i);
        match plane_from_raw([r[0], r[1], r[2], r[3]]) {
            Ok(plane) => {
                points.push(crate::geom::project_point(p, &plane));
                planes.push(Some(plane));
            }
            Err(Error::DegeneratePlane { .. }) => {
                degenerate += 1;
                points.push(p);
                planes.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} degenerate predicted plane(s); points passed through");
    }
    let cloud = PointCloud::new(points).map_err(|_| Error::NonFinite("denoised cloud has non-finite points".into()))?;
    Ok(Denoised {
        cloud,
        planes,
        degenerate,
    })
}

pub fn encode_checkpoint(params: &NetParams, config: &NetConfig) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(config).map_err(|e| Error::config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.entries.len() as u32).to_le_bytes());
    for (name, t) in &params.entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetParams, NetConfig)> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(format!("bad checkpoint magic {magic:02x?}")));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")? as usize;
    let json = r.take(len, "config")?;
    let config: NetConfig =
        serde_json::from_slice(json).map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut entries = Vec::new();
    for k in 0..count {
        let nlen = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|_| Error::format(format!("tensor {k} name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::format(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dim")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::format(format!("tensor {name} data is truncated")))?;
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f32("tensor data")? as f64);
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::format(format!("tensor {name}: {e}")))?;
        entries.push((name, t));
    }
    r.finish()?;
    let params = NetParams { entries };
    params
        .check(&config)
        .map_err(|e| Error::format(format!("checkpoint tensors: {e}")))?;
    Ok((params, config))
}

pub fn save_checkpoint(params: &NetParams, config: &NetConfig, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(params, config)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NetParams, NetConfig)> {
    let path = path.as_ref();
    decode_checkpoint(&read_file(path)?).map_err(|e| e.with_path(path))
}
