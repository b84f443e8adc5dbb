//! World-model pretraining loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gazedata::{DataError, FixationSequence, SyntheticDataset};
use crate::model::{save_checkpoint, Checkpoint, CheckpointError, Model, ModelConfig, ModelError};
use crate::numcore::{
    adamw_step, ema_schedule_between, ema_update, Bind, NumError, OptimizerState, Tape, Tensor, EMA_END, EMA_START,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("resume checkpoint does not match this run: {0}")]
    ResumeMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Overrides the model's completion weight for this run.
    pub lambda_sc: f64,
    pub ema_start: f64,
    pub ema_end: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Caps the run length; the EMA horizon follows the capped length.
    pub max_steps: Option<u64>,
    pub log_every: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 16,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.04,
            lambda_sc: 1.0,
            ema_start: EMA_START,
            ema_end: EMA_END,
            seed: 0,
            max_steps: Some(200),
            log_every: 20,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Optimizer settings of the full-scale recipe.
    pub fn paper() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            learning_rate: 3e-4,
            weight_decay: 0.04,
            max_steps: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(self.lambda_sc >= 0.0) {
            return bad(format!("lambda_sc {} must be non-negative", self.lambda_sc));
        }
        for (name, v) in [("ema_start", self.ema_start), ("ema_end", self.ema_end)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be at least 1".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        let full = self.epochs as u64 * self.steps_per_epoch(n);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// One training example: the image's patch matrix and its gaze sequence.
#[derive(Clone, Debug)]
pub struct Sample {
    pub patches: Tensor,
    pub seq: FixationSequence,
}

pub fn prepare_samples(model: &Model, data: &SyntheticDataset) -> Result<Vec<Sample>, TrainError> {
    data.images
        .iter()
        .zip(&data.records)
        .map(|(img, rec)| {
            Ok(Sample {
                patches: model.patch_tensor(img)?,
                seq: FixationSequence::from_record(rec, model.config.grid)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_ar: f64,
    pub l_sc: f64,
    pub l_total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Updated {
        losses: StepLosses,
        used: usize,
        skipped: usize,
    },
    /// Every sample had fewer than two visited patches; nothing changed.
    Skipped { skipped: usize },
}

/// Per-sample forward/backward with gradient accumulation, one AdamW step
/// over the online parameters, then one EMA update of the target encoder.
pub fn pretrain_step(
    model: &mut Model,
    opt: &mut OptimizerState,
    batch: &[&Sample],
    tau: f64,
) -> Result<StepOutcome, TrainError> {
    let valid: Vec<&Sample> = batch.iter().copied().filter(|s| s.seq.len() >= 2).collect();
    let skipped = batch.len() - valid.len();
    if valid.is_empty() {
        log::warn!("all {skipped} samples in batch have fewer than 2 visited patches; step skipped");
        return Ok(StepOutcome::Skipped { skipped });
    }
    if skipped > 0 {
        log::warn!("{skipped} samples with fewer than 2 visited patches skipped");
    }
    model.online.zero_grad();
    let weight = 1.0 / valid.len() as f64;
    let mut sums = StepLosses {
        l_ar: 0.0,
        l_sc: 0.0,
        l_total: 0.0,
    };
    for s in &valid {
        let target_z = model.target_encode_patches(&s.patches)?;
        let mut tape = Tape::new();
        let loss = model.sample_loss(&mut tape, Bind::Trainable(&model.online), &s.patches, &s.seq, &target_z)?;
        sums.l_ar += tape.value(loss.l_ar).item()?;
        sums.l_sc += tape.value(loss.l_sc).item()?;
        sums.l_total += tape.value(loss.total).item()?;
        let scaled = tape.scale(loss.total, weight);
        let grads = tape.backward(scaled)?;
        model.online.accumulate(&grads)?;
    }
    model.ensure_grad_buffers();
    adamw_step(opt, &mut model.online)?;
    ema_update(&mut model.target, &model.online, tau)?;
    let losses = StepLosses {
        l_ar: sums.l_ar * weight,
        l_sc: sums.l_sc * weight,
        l_total: sums.l_total * weight,
    };
    Ok(StepOutcome::Updated {
        losses,
        used: valid.len(),
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub tau: f64,
    /// Absent when the whole batch was skipped.
    pub losses: Option<StepLosses>,
    pub skipped_samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub total_steps: u64,
    pub skipped_samples: usize,
    pub skipped_steps: usize,
    pub wall_clock_s: f64,
}

impl TrainReport {
    pub fn tau_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|r| r.tau).collect()
    }

    pub fn total_losses(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|r| r.losses.map(|l| l.l_total)).collect()
    }

    /// One JSON object per step.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.steps {
            out.push_str(&serde_json::to_string(r).expect("step record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from this state instead of a fresh model.
    pub resume: Option<Checkpoint>,
    /// Stop after this global step (exclusive) without changing the schedule.
    pub stop_at: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
}

/// Visit order of the dataset in `epoch`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:06}.gzw"))
}

pub fn run_pretrain(
    model_config: &ModelConfig,
    config: &TrainConfig,
    data: &SyntheticDataset,
    options: RunOptions,
) -> Result<(Checkpoint, TrainReport), TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut mc = model_config.clone();
    mc.lambda_sc = config.lambda_sc;

    let (mut model, mut opt, start) = match options.resume {
        Some(ck) => {
            if ck.model.config != mc {
                return Err(TrainError::ResumeMismatch("model config differs".into()));
            }
            if ck.dataset_seed != data.seed {
                return Err(TrainError::ResumeMismatch(format!(
                    "dataset seed {} vs {}",
                    ck.dataset_seed, data.seed
                )));
            }
            (ck.model, ck.optimizer, ck.step)
        }
        None => {
            let model = Model::new(mc)?;
            let opt = OptimizerState::new(&model.online, config.learning_rate, config.weight_decay);
            (model, opt, 0)
        }
    };

    let samples = prepare_samples(&model, data)?;
    let n = samples.len();
    let per_epoch = config.steps_per_epoch(n);
    let total = config.total_steps(n);
    let horizon = total.saturating_sub(1);
    let end = options.stop_at.map_or(total, |s| s.min(total));

    let clock = Instant::now();
    let mut report = TrainReport {
        total_steps: total,
        ..TrainReport::default()
    };
    let mut order = Vec::new();
    let mut order_epoch = None;
    for step in start..end {
        let epoch = step / per_epoch;
        if order_epoch != Some(epoch) {
            order = epoch_order(config.seed, epoch, n);
            order_epoch = Some(epoch);
        }
        let pos = (step % per_epoch) as usize * config.batch_size;
        let batch: Vec<&Sample> = order[pos..(pos + config.batch_size).min(n)]
            .iter()
            .map(|&i| &samples[i])
            .collect();
        let tau = ema_schedule_between(step, horizon, config.ema_start, config.ema_end)?;
        let record = match pretrain_step(&mut model, &mut opt, &batch, tau)? {
            StepOutcome::Updated { losses, skipped, .. } => {
                if !losses.l_total.is_finite() {
                    return Err(TrainError::Num(NumError::InvalidArgument(format!(
                        "non-finite loss at step {step}"
                    ))));
                }
                StepRecord {
                    step,
                    epoch,
                    tau,
                    losses: Some(losses),
                    skipped_samples: skipped,
                }
            }
            StepOutcome::Skipped { skipped } => {
                report.skipped_steps += 1;
                StepRecord {
                    step,
                    epoch,
                    tau,
                    losses: None,
                    skipped_samples: skipped,
                }
            }
        };
        report.skipped_samples += record.skipped_samples;
        if config.log_every > 0 && (step % config.log_every == 0 || step + 1 == end) {
            if let Some(l) = record.losses {
                log::info!(
                    "step {step}/{total} l_ar {:.5} l_sc {:.5} l_total {:.5} tau {tau:.6}",
                    l.l_ar,
                    l.l_sc,
                    l.l_total
                );
            }
        }
        report.steps.push(record);

        let done = step + 1;
        if let Some(dir) = &options.checkpoint_dir {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < end {
                let ck = Checkpoint {
                    model: model.clone(),
                    optimizer: opt.clone(),
                    step: done,
                    dataset_seed: data.seed,
                    train: Some(config.clone()),
                };
                save_checkpoint(&ck, &checkpoint_path(dir, done))?;
            }
        }
    }
    report.wall_clock_s = clock.elapsed().as_secs_f64();
    let checkpoint = Checkpoint {
        model,
        optimizer: opt,
        step: end.max(start),
        dataset_seed: data.seed,
        train: Some(config.clone()),
    };
    Ok((checkpoint, report))
}
