//! Trains on a small analytic corpus and prints held-out metrics.
//!
//! `cargo run --release -p npd-core --example desk -- <epochs> <seed> [local-only|alpha=<a>]`

use std::time::Instant;

use npd_core::data::{build_dataset, DatasetParams};
use npd_core::eval::evaluate_samples;
use npd_core::mesh::analytic_corpus;
use npd_core::net::{train, AlphaSchedule, NetConfig};
use npd_core::optim::OptimizerConfig;

fn main() -> npd_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let variant = args.get(3).cloned().unwrap_or_default();
    let env = |k: &str, d: &str| std::env::var(k).unwrap_or_else(|_| d.to_string());
    let widths = |s: String| s.split(',').map(|v| v.parse().unwrap()).collect::<Vec<usize>>();

    let dir = tempfile::tempdir().unwrap();
    let params = DatasetParams { n_points: 512, sigma: 0.02, seed, ..Default::default() };
    let t = Instant::now();
    let tr = build_dataset(&analytic_corpus(20, seed, 0), dir.path().join("train"), &params)?;
    let te = build_dataset(&analytic_corpus(5, seed, 20), dir.path().join("test"), &params)?;
    let (tr, te) = (tr.load_samples()?, te.load_samples()?);
    eprintln!("data {:.2}s", t.elapsed().as_secs_f64());

    let mut cfg = NetConfig {
        local_widths: widths(env("LOCAL", "32,64,128")),
        head_widths: widths(env("HEAD", "64,32,4")),
        alpha_schedule: AlphaSchedule { start: 0.1, end: 0.9, epochs },
        optimizer: OptimizerConfig { lr: env("LR", "0.001").parse().unwrap(), ..Default::default() },
        batch_clouds: env("BATCH", "1").parse().unwrap(),
        resample_noise: env("RESAMPLE", "0") == "1",
        seed,
        ..Default::default()
    };
    if variant == "local-only" {
        cfg.use_global_feature = false;
    }
    if let Some(a) = variant.strip_prefix("alpha=") {
        let a: f64 = a.parse().unwrap();
        cfg.alpha_schedule = AlphaSchedule::constant(a, epochs);
    }
    let t = Instant::now();
    let (p, h) = train(&tr, None, &cfg)?;
    let secs = t.elapsed().as_secs_f64();
    let last = h.records.last().unwrap();
    let rt = evaluate_samples(&tr, &p, &cfg, "", "")?;
    eprintln!(
        "train-set mse ratio {:.3} cd ratio {:.3}",
        rt.aggregates.mse_denoised.mean / rt.aggregates.mse_noisy.mean,
        rt.aggregates.cd_denoised.mean / rt.aggregates.cd_noisy.mean
    );
    let r = evaluate_samples(&te, &p, &cfg, "", "")?;
    let a = &r.aggregates;
    println!(
        "train {secs:.1}s ({:.3}s/epoch) loss {:.4} l1 {:.3e} l2 {:.4} | mse {:.3e}/{:.3e} = {:.3} cd {:.3e}/{:.3e} = {:.3} degenerate {}",
        secs / epochs as f64,
        last.loss,
        last.loss1,
        last.loss2,
        a.mse_denoised.mean,
        a.mse_noisy.mean,
        a.mse_denoised.mean / a.mse_noisy.mean,
        a.cd_denoised.mean,
        a.cd_noisy.mean,
        a.cd_denoised.mean / a.cd_noisy.mean,
        r.degenerate_points
    );
    let mut errs: Vec<f64> = Vec::new();
    for s in &te {
        let d = npd_core::net::denoise(&s.noisy, &p, &cfg)?;
        errs.extend(d.cloud.iter().zip(s.clean.iter()).map(|(a, b)| a.dist_sq(*b)));
    }
    errs.sort_by(f64::total_cmp);
    let q = |f: f64| errs[((errs.len() - 1) as f64 * f) as usize];
    println!("held-out squared error quantiles 50% {:.2e} 75% {:.2e} 90% {:.2e} 99% {:.2e}", q(0.5), q(0.75), q(0.9), q(0.99));
    Ok(())
}
