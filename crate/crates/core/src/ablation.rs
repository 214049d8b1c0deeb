//! Paired training runs: fixed-α sweeps and the global-feature comparison.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::evaluate_samples;
use crate::net::{train, AlphaSchedule, NetConfig, TrainSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub mse: f64,
    pub cd: f64,
}

/// Mean held-out denoised MSE and CD of a model trained with `config`.
pub fn train_and_score(train_set: &[TrainSample], test_set: &[TrainSample], config: &NetConfig) -> Result<(f64, f64)> {
    let (params, _) = train(train_set, None, config)?;
    let r = evaluate_samples(test_set, &params, config, "", "")?;
    Ok((r.aggregates.mse_denoised.mean, r.aggregates.cd_denoised.mean))
}

/// One model per α, each trained with α held fixed for the schedule's
/// epoch count.
pub fn alpha_sweep(
    train_set: &[TrainSample],
    test_set: &[TrainSample],
    base: &NetConfig,
    alphas: &[f64],
) -> Result<Vec<AlphaRow>> {
    alphas
        .iter()
        .map(|&alpha| {
            let config = NetConfig {
                alpha_schedule: AlphaSchedule::constant(alpha, base.alpha_schedule.epochs),
                ..base.clone()
            };
            config.validate()?;
            let (mse, cd) = train_and_score(train_set, test_set, &config)?;
            log::info!("alpha {alpha}: mse {mse:.4e} cd {cd:.4e}");
            Ok(AlphaRow { alpha, mse, cd })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalFeatureRow {
    pub variant: String,
    pub params: usize,
    pub mse: f64,
    pub cd: f64,
}

/// Trains the same configuration with and without the concatenated global
/// feature. Rows are `local+global` then `local-only`.
pub fn global_feature_ablation(
    train_set: &[TrainSample],
    test_set: &[TrainSample],
    base: &NetConfig,
) -> Result<Vec<GlobalFeatureRow>> {
    [("local+global", true), ("local-only", false)]
        .into_iter()
        .map(|(name, on)| {
            let config = NetConfig {
                use_global_feature: on,
                ..base.clone()
            };
            let (params, _) = train(train_set, None, &config)?;
            let r = evaluate_samples(test_set, &params, &config, "", "")?;
            log::info!("{name}: mse {:.4e} cd {:.4e}", r.aggregates.mse_denoised.mean, r.aggregates.cd_denoised.mean);
            Ok(GlobalFeatureRow {
                variant: name.to_string(),
                params: params.num_scalars(),
                mse: r.aggregates.mse_denoised.mean,
                cd: r.aggregates.cd_denoised.mean,
            })
        })
        .collect()
}
