//! Supervised scanpath decoder on frozen patch features.
//!
//! Each input token is the previous fixation (starting from the image
//! center), projected and summed with a task embedding and a position
//! embedding. Every layer applies causal self-attention over the tokens and
//! cross-attention to the projected patch features. Three heads read each
//! position: an N-way spatial classifier, a duration regressor on
//! `log(1 + dwell)` and a termination logit.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::gazedata::{Fixation, GridSpec, ImageGray};
use crate::metrics::Scanpath;
use crate::model::nn::{CrossBlock, Linear, Norm, SelfBlock};
use crate::model::Model;
use crate::numcore::{adamw_step, Bind, OptimizerState, ParamId, ParamStore, Tape, Tensor, Var};

/// Initial fixation fed to the decoder.
pub const START_FIXATION: (f64, f64) = (0.5, 0.5);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub n_tasks: usize,
    /// Fixations emitted at inference.
    pub steps: usize,
    /// Longest token sequence the position table covers.
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: 2,
            heads: 4,
            mlp_ratio: 2,
            n_tasks: 2,
            steps: 7,
            max_len: 8,
            epochs: 30,
            batch_size: 16,
            learning_rate: 2e-3,
            weight_decay: 0.0,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl DecoderConfig {
    /// 6 layers, 8 heads, width 512.
    pub fn paper_scale() -> Self {
        Self {
            dim: 512,
            layers: 6,
            heads: 8,
            mlp_ratio: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: String| Err(ProbeError::InvalidArgument(m));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "decoder dim {} not divisible by heads {}",
                self.dim, self.heads
            ));
        }
        if self.n_tasks == 0 || self.steps == 0 || self.batch_size == 0 || self.mlp_ratio == 0 {
            return bad("n_tasks, steps, batch_size and mlp_ratio must be positive".into());
        }
        if self.max_len < self.steps {
            return bad(format!("max_len {} shorter than steps {}", self.max_len, self.steps));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }
}

/// Coefficients of the duration and termination terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub duration: f64,
    pub termination: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            duration: 0.1,
            termination: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
struct Layout {
    feat_proj: Linear,
    task: ParamId,
    fix_proj: Linear,
    pos: ParamId,
    layers: Vec<(SelfBlock, CrossBlock)>,
    norm: Norm,
    spatial: Linear,
    duration: Linear,
    termination: Linear,
}

#[derive(Clone, Debug)]
pub struct ScanpathDecoder {
    pub config: DecoderConfig,
    pub grid: GridSpec,
    pub store: ParamStore,
    layout: Layout,
}

/// Head outputs for `T` positions.
#[derive(Clone, Copy, Debug)]
pub struct DecoderHeads {
    /// `T x N` logits.
    pub spatial: Var,
    /// `T x 1`, predicted `log(1 + dwell)`.
    pub duration: Var,
    /// `T x 1` logits.
    pub termination: Var,
}

/// Supervision for one scanpath, quantized to the decoder grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanpathTarget {
    pub cells: Vec<usize>,
    pub log_dur: Vec<f64>,
    /// 1 at the final fixation, 0 elsewhere.
    pub termination: Vec<f64>,
}

impl ScanpathTarget {
    pub fn from_scanpath(sp: &Scanpath, grid: GridSpec) -> Result<Self, ProbeError> {
        sp.validate()?;
        let t = sp.fixations.len();
        if t == 0 {
            return Err(ProbeError::InvalidArgument(format!(
                "scanpath {} is empty",
                sp.image_id
            )));
        }
        Ok(Self {
            cells: sp.fixations.iter().map(|f| grid.cell_of(f.x, f.y)).collect(),
            log_dur: sp.fixations.iter().map(|f| f.dur.ln_1p()).collect(),
            termination: (0..t).map(|i| if i + 1 == t { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Teacher-forcing inputs: the start fixation followed by every
    /// ground-truth fixation except the last, snapped to cell centers.
    pub fn inputs(&self, grid: GridSpec) -> Vec<(f64, f64)> {
        std::iter::once(START_FIXATION)
            .chain(self.cells[..self.cells.len() - 1].iter().map(|&c| grid.center(c)))
            .collect()
    }
}

/// `CE(spatial) + w_d * L1(duration) + w_t * BCE(termination)`, each term
/// averaged over positions.
pub fn scanpath_loss(
    tape: &mut Tape,
    heads: &DecoderHeads,
    target: &ScanpathTarget,
    weights: LossWeights,
) -> Result<Var, ProbeError> {
    let rows = tape.value(heads.spatial).rows();
    if rows != target.len() {
        return Err(ProbeError::LengthMismatch {
            what: "scanpath target",
            expected: rows,
            got: target.len(),
        });
    }
    let ce = tape.cross_entropy(heads.spatial, &target.cells)?;
    let dur_t = tape.constant(Tensor::new(vec![rows, 1], target.log_dur.clone())?);
    let l1 = tape.l1(heads.duration, dur_t)?;
    let bce = tape.bce_with_logits(heads.termination, &target.termination)?;
    let l1 = tape.scale(l1, weights.duration);
    let bce = tape.scale(bce, weights.termination);
    let sum = tape.add(ce, l1)?;
    Ok(tape.add(sum, bce)?)
}

impl ScanpathDecoder {
    /// `feature_dim` is the width of the frozen patch features.
    pub fn new(config: DecoderConfig, grid: GridSpec, feature_dim: usize) -> Result<Self, ProbeError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim;
        let eps = 1e-6;
        let mut s = ParamStore::new();
        let layout = Layout {
            feat_proj: Linear::new(&mut s, "decoder.feat_proj", feature_dim, d, true, &mut rng),
            task: s.add_normal("decoder.task", &[config.n_tasks, d], 0.02, &mut rng),
            fix_proj: Linear::new(&mut s, "decoder.fix_proj", 2, d, true, &mut rng),
            pos: s.add_normal("decoder.pos", &[config.max_len, d], 0.02, &mut rng),
            layers: (0..config.layers)
                .map(|i| {
                    (
                        SelfBlock::new(
                            &mut s,
                            &format!("decoder.self{i}"),
                            d,
                            config.heads,
                            config.mlp_ratio,
                            eps,
                            &mut rng,
                        ),
                        CrossBlock::new(
                            &mut s,
                            &format!("decoder.cross{i}"),
                            d,
                            config.heads,
                            config.mlp_ratio,
                            eps,
                            &mut rng,
                        ),
                    )
                })
                .collect(),
            norm: Norm::new(&mut s, "decoder.norm", d, eps),
            spatial: Linear::new(&mut s, "decoder.spatial", d, grid.len(), true, &mut rng),
            duration: Linear::new(&mut s, "decoder.duration", d, 1, true, &mut rng),
            termination: Linear::new(&mut s, "decoder.termination", d, 1, true, &mut rng),
        };
        Ok(Self {
            config,
            grid,
            store: s,
            layout,
        })
    }

    /// Heads at every input position. `features` is the frozen `N x d`
    /// patch matrix and enters as a constant.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: Bind,
        features: &Tensor,
        task: usize,
        inputs: &[(f64, f64)],
    ) -> Result<DecoderHeads, ProbeError> {
        if task >= self.config.n_tasks {
            return Err(ProbeError::UnknownTask {
                task,
                n_tasks: self.config.n_tasks,
            });
        }
        let t = inputs.len();
        if t == 0 || t > self.config.max_len {
            return Err(ProbeError::InvalidArgument(format!(
                "decoder input length {t} outside 1..={}",
                self.config.max_len
            )));
        }
        let l = &self.layout;
        let f = tape.constant(features.clone());
        let ctx = l.feat_proj.forward(tape, bind, f)?;

        let xy = Tensor::new(vec![t, 2], inputs.iter().flat_map(|&(x, y)| [x, y]).collect())?;
        let xy = tape.constant(xy);
        let mut h = l.fix_proj.forward(tape, bind, xy)?;
        let task_t = bind.var(tape, l.task);
        let task_row = tape.gather_rows(task_t, &[task])?;
        h = tape.add_row(h, task_row)?;
        let pos_t = bind.var(tape, l.pos);
        let pos = tape.gather_rows(pos_t, &(0..t).collect::<Vec<_>>())?;
        h = tape.add(h, pos)?;

        for (sb, cb) in &l.layers {
            h = sb.forward(tape, bind, h, true)?;
            h = cb.forward(tape, bind, h, ctx)?;
        }
        let h = l.norm.forward(tape, bind, h)?;
        Ok(DecoderHeads {
            spatial: l.spatial.forward(tape, bind, h)?,
            duration: l.duration.forward(tape, bind, h)?,
            termination: l.termination.forward(tape, bind, h)?,
        })
    }

    /// Loss of one teacher-forced example.
    pub fn example_loss(
        &self,
        tape: &mut Tape,
        bind: Bind,
        features: &Tensor,
        task: usize,
        target: &ScanpathTarget,
    ) -> Result<Var, ProbeError> {
        let heads = self.forward(tape, bind, features, task, &target.inputs(self.grid))?;
        scanpath_loss(tape, &heads, target, self.config.weights)
    }
}

/// Greedy rollout of exactly `decoder.config.steps` fixations. The
/// termination head is recorded but never stops the rollout.
pub fn decode_scanpath(
    model: &Model,
    decoder: &ScanpathDecoder,
    image: &ImageGray,
    task: usize,
) -> Result<Scanpath, ProbeError> {
    let features = model.encode(image)?;
    decode_from_features(decoder, &features, &image.id, task)
}

fn decode_from_features(
    decoder: &ScanpathDecoder,
    features: &Tensor,
    image_id: &str,
    task: usize,
) -> Result<Scanpath, ProbeError> {
    let bind = Bind::Frozen(&decoder.store);
    let mut inputs = vec![START_FIXATION];
    let mut fixations = Vec::with_capacity(decoder.config.steps);
    let mut termination = None;
    for step in 0..decoder.config.steps {
        let mut tape = Tape::new();
        let heads = decoder.forward(&mut tape, bind, features, task, &inputs)?;
        let last = inputs.len() - 1;
        let logits = tape.value(heads.spatial).row_slice(last);
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        let (x, y) = decoder.grid.center(best);
        let dur = tape.value(heads.duration).get2(last, 0).exp_m1().max(0.0);
        if termination.is_none() && tape.value(heads.termination).get2(last, 0) > 0.0 {
            termination = Some(step);
        }
        fixations.push(Fixation { x, y, dur });
        if inputs.len() < decoder.config.max_len {
            inputs.push((x, y));
        }
    }
    Ok(Scanpath {
        image_id: image_id.to_string(),
        task,
        fixations,
        termination,
    })
}

/// Ground-truth scanpath of the synthetic search task: task 0 visits cells
/// from brightest to darkest, task 1 from darkest to brightest. Dwell grows
/// with how salient the cell is for the task.
pub fn search_scanpath(image: &ImageGray, grid: GridSpec, task: usize, steps: usize) -> Result<Scanpath, ProbeError> {
    let means = image.patch_means(grid).map_err(crate::model::ModelError::from)?;
    let (lo, hi) = means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let salience: Vec<f64> = means
        .iter()
        .map(|&v| match task {
            0 => (v - lo) / span,
            1 => (hi - v) / span,
            _ => 0.0,
        })
        .collect();
    if task > 1 {
        return Err(ProbeError::UnknownTask { task, n_tasks: 2 });
    }
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| salience[b].total_cmp(&salience[a]));
    let fixations = order
        .into_iter()
        .take(steps)
        .map(|c| {
            let (x, y) = grid.center(c);
            Fixation {
                x,
                y,
                dur: 0.1 + 0.3 * salience[c],
            }
        })
        .collect();
    Ok(Scanpath {
        image_id: image.id.clone(),
        task,
        fixations,
        termination: None,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecoderReport {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    pub wall_clock_s: f64,
}

/// Trains a fresh decoder on `(image, task, scanpath)` triples with the
/// model frozen. Only decoder parameters receive gradients.
pub fn train_decoder(
    model: &Model,
    config: &DecoderConfig,
    examples: &[(ImageGray, usize, Scanpath)],
) -> Result<(ScanpathDecoder, DecoderReport), ProbeError> {
    if examples.is_empty() {
        return Err(ProbeError::InvalidArgument("no decoder training examples".into()));
    }
    let grid = model.config.grid;
    let mut decoder = ScanpathDecoder::new(config.clone(), grid, model.config.embed_dim)?;
    let prepared: Vec<(Tensor, usize, ScanpathTarget)> = examples
        .iter()
        .map(|(img, task, sp)| {
            let mut target = ScanpathTarget::from_scanpath(sp, grid)?;
            let keep = target.len().min(config.max_len);
            target.cells.truncate(keep);
            target.log_dur.truncate(keep);
            target.termination.truncate(keep);
            if let Some(last) = target.termination.last_mut() {
                *last = 1.0;
            }
            Ok((model.encode(img)?, *task, target))
        })
        .collect::<Result<_, ProbeError>>()?;

    let mut opt = OptimizerState::new(&decoder.store, config.learning_rate, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xdec0de);
    let mut report = DecoderReport::default();
    let clock = Instant::now();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            decoder.store.zero_grad();
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (features, task, target) = &prepared[i];
                let mut tape = Tape::new();
                let loss = decoder.example_loss(&mut tape, Bind::Trainable(&decoder.store), features, *task, target)?;
                epoch_loss += tape.value(loss).item()?;
                let scaled = tape.scale(loss, w);
                let grads = tape.backward(scaled)?;
                decoder.store.accumulate(&grads)?;
            }
            for p in decoder.store.params_mut() {
                if p.grad.is_none() {
                    p.grad = Some(Tensor::zeros(p.value.shape()));
                }
            }
            adamw_step(&mut opt, &mut decoder.store)?;
            report.steps += 1;
        }
        report.epoch_losses.push(epoch_loss / prepared.len() as f64);
    }
    report.wall_clock_s = clock.elapsed().as_secs_f64();
    Ok((decoder, report))
}

/// Rollouts for many images, encoding each image once.
pub fn decode_all(
    model: &Model,
    decoder: &ScanpathDecoder,
    items: &[(&ImageGray, usize)],
) -> Result<Vec<Scanpath>, ProbeError> {
    items
        .iter()
        .map(|(img, task)| {
            let features = model.encode(img)?;
            decode_from_features(decoder, &features, &img.id, *task)
        })
        .collect()
}
