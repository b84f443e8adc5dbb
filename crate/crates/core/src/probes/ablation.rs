use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{linear_probe, LogisticConfig, ProbeError, ProbeReport};
use crate::gazedata::{split_dataset, synth_world_with, DataError, OrderRule, SynthParams};
use crate::model::{Model, ModelConfig};
use crate::train::{run_pretrain, RunOptions, TrainConfig, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub rules: Vec<OrderRule>,
    pub pretrain_images: usize,
    pub probe_images: usize,
    /// Probe images come from seed `seed + probe_seed_offset`.
    pub probe_seed_offset: u64,
    /// Train / validation / test fractions of the probe images.
    pub probe_split: (f64, f64, f64),
    pub logistic: LogisticConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            rules: OrderRule::ALL.to_vec(),
            pretrain_images: 200,
            probe_images: 300,
            probe_seed_offset: 1000,
            probe_split: (0.6, 0.1, 0.3),
            logistic: LogisticConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub rule: OrderRule,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub pretrain_s: f64,
    pub probe: ProbeReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    /// Probe of the randomly initialized model, per seed.
    pub untrained: Vec<ProbeReport>,
    /// Mean probe AUROC per ordering rule.
    pub mean_auroc: BTreeMap<String, f64>,
    pub untrained_mean_auroc: f64,
    /// Gaze-order minus random-order mean AUROC, when both were run.
    pub gaze_minus_random: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("ablation needs at least one seed and one rule")]
    Empty,
}

/// Pretrains one model per (seed, rule) on images that differ only in
/// their gaze order, then probes each on a shared held-out image set.
pub fn run_ordering_ablation(
    model: &ModelConfig,
    train: &TrainConfig,
    synth: &SynthParams,
    config: &AblationConfig,
) -> Result<AblationReport, AblationError> {
    if config.seeds.is_empty() || config.rules.is_empty() {
        return Err(AblationError::Empty);
    }
    let grid = model.grid;
    let mut runs = Vec::new();
    let mut untrained = Vec::new();
    for &seed in &config.seeds {
        let mc = ModelConfig {
            init_seed: seed,
            ..model.clone()
        };
        let tc = TrainConfig { seed, ..train.clone() };
        let probe_data = synth_world_with(
            synth,
            seed.wrapping_add(config.probe_seed_offset),
            config.probe_images,
            grid,
            OrderRule::IntensityOrder,
        )?;
        let (probe_train, _, probe_test) = split_dataset(&probe_data, config.probe_split)?;

        let fresh = Model::new(ModelConfig {
            lambda_sc: tc.lambda_sc,
            ..mc.clone()
        })
        .map_err(TrainError::from)?;
        let report = linear_probe(&fresh, &probe_train, &probe_test, &config.logistic)?;
        log::info!("seed {seed} untrained probe AUROC {:.4}", report.auroc);
        untrained.push(report);

        for &rule in &config.rules {
            let data = synth_world_with(synth, seed, config.pretrain_images, grid, rule)?;
            let (ck, rep) = run_pretrain(&mc, &tc, &data, RunOptions::default())?;
            let losses = rep.total_losses();
            let probe = linear_probe(&ck.model, &probe_train, &probe_test, &config.logistic)?;
            log::info!("seed {seed} {} probe AUROC {:.4}", rule.as_str(), probe.auroc);
            runs.push(AblationRun {
                rule,
                seed,
                initial_loss: losses.first().copied().unwrap_or(f64::NAN),
                final_loss: losses.last().copied().unwrap_or(f64::NAN),
                pretrain_s: rep.wall_clock_s,
                probe,
            });
        }
    }

    let mut mean_auroc = BTreeMap::new();
    for &rule in &config.rules {
        let vals: Vec<f64> = runs.iter().filter(|r| r.rule == rule).map(|r| r.probe.auroc).collect();
        mean_auroc.insert(rule.as_str().to_string(), vals.iter().sum::<f64>() / vals.len() as f64);
    }
    let gaze_minus_random = match (
        mean_auroc.get(OrderRule::IntensityOrder.as_str()),
        mean_auroc.get(OrderRule::Random.as_str()),
    ) {
        (Some(g), Some(r)) => Some(g - r),
        _ => None,
    };
    let untrained_mean_auroc = untrained.iter().map(|r| r.auroc).sum::<f64>() / untrained.len() as f64;
    Ok(AblationReport {
        runs,
        untrained,
        mean_auroc,
        untrained_mean_auroc,
        gaze_minus_random,
    })
}
