use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::Context;
use gazeworld::gazedata::{load_dataset, save_dataset, split_dataset, synth_world_with, OrderRule, SyntheticDataset};
use gazeworld::metrics::{parse_scanpath_file, score_pair, stde, write_scanpath_file, QuantizedScanpath, Scanpath};
use gazeworld::model::{load_checkpoint, save_checkpoint, Checkpoint};
use gazeworld::probes::{
    decode_all, linear_probe, run_ordering_ablation, search_scanpath, train_decoder, AblationConfig, ScanpathDecoder,
};
use gazeworld::train::{run_pretrain, RunOptions};
use gazeworld::{FixationSequence, GridSpec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::svg::{line_plot, Series};

pub const DATA_DIR: &str = "data";
pub const CHECKPOINT: &str = "pretrain/model.gzw";

/// Result of one command before it is wrapped in a report.
pub struct Outcome {
    pub result: Value,
    pub outputs: BTreeMap<String, String>,
}

impl Outcome {
    fn new(result: impl Serialize) -> Self {
        Self {
            result: serde_json::to_value(result).expect("result serializes"),
            outputs: BTreeMap::new(),
        }
    }

    fn output(mut self, name: &str, rel: &str) -> Self {
        self.outputs.insert(name.to_string(), rel.to_string());
        self
    }
}

pub struct Ctx<'a> {
    pub workdir: &'a Path,
    pub config: &'a ExperimentConfig,
}

impl Ctx<'_> {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.workdir.join(rel)
    }

    fn require(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::MissingFile {
                path: p.display().to_string(),
                message: "no such file or directory".into(),
            })
        }
    }

    fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    fn load_checkpoint(&self, rel: &str) -> Result<Checkpoint, CliError> {
        let p = self.require(rel)?;
        let ck = load_checkpoint(&p).with_context(|| format!("loading checkpoint {}", p.display()))?;
        if ck.model.config.grid != self.config.model.grid || ck.model.config.patch_px != self.config.model.patch_px {
            return Err(anyhow::anyhow!(
                "checkpoint {} was trained on a {:?} grid of {} px cells; config has {:?} and {} px",
                p.display(),
                ck.model.config.grid,
                ck.model.config.patch_px,
                self.config.model.grid,
                self.config.model.patch_px
            )
            .into());
        }
        Ok(ck)
    }
}

fn synth(cfg: &ExperimentConfig, seed: u64, n: usize, rule: OrderRule) -> anyhow::Result<SyntheticDataset> {
    Ok(synth_world_with(&cfg.data.synth, seed, n, cfg.model.grid, rule)?)
}

pub fn cmd_synth(ctx: &Ctx) -> Result<Outcome, CliError> {
    let cfg = ctx.config;
    let ds = synth(cfg, cfg.seed, cfg.data.n_images, cfg.data.rule)?;
    let dir = ctx.path(DATA_DIR);
    save_dataset(&ds, &dir).with_context(|| format!("writing dataset to {}", dir.display()))?;
    let n = ds.len() as f64;
    let positives = ds.labels.iter().filter(|&&l| l == 1).count();
    let fixations: usize = ds.records.iter().map(|r| r.fixations.len()).sum();
    let visited: usize = ds
        .records
        .iter()
        .map(|r| FixationSequence::from_record(r, cfg.model.grid).map(|s| s.len()))
        .sum::<Result<usize, _>>()
        .context("quantizing fixations")?;
    Ok(Outcome::new(json!({
        "n_images": ds.len(),
        "rule": ds.rule,
        "grid": ds.grid,
        "positive_fraction": positives as f64 / n,
        "mean_fixations": fixations as f64 / n,
        "mean_visited_cells": visited as f64 / n,
    }))
    .output("dataset", DATA_DIR))
}

fn load_training_data(ctx: &Ctx) -> Result<SyntheticDataset, CliError> {
    let cfg = ctx.config;
    let dir = ctx.require(DATA_DIR)?;
    let ds = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let mut stale = Vec::new();
    if ds.seed != cfg.seed {
        stale.push(format!("seed {} (config {})", ds.seed, cfg.seed));
    }
    if ds.grid != cfg.model.grid {
        stale.push(format!("grid {:?} (config {:?})", ds.grid, cfg.model.grid));
    }
    if ds.rule != cfg.data.rule {
        stale.push(format!("rule {} (config {})", ds.rule.as_str(), cfg.data.rule.as_str()));
    }
    if ds.len() != cfg.data.n_images {
        stale.push(format!("{} images (config {})", ds.len(), cfg.data.n_images));
    }
    if !stale.is_empty() {
        return Err(anyhow::anyhow!(
            "dataset in {} does not match the config: {}; rerun synth",
            dir.display(),
            stale.join(", ")
        )
        .into());
    }
    Ok(ds)
}

pub fn cmd_pretrain(ctx: &Ctx, resume: Option<&str>) -> Result<Outcome, CliError> {
    let cfg = ctx.config;
    let data = load_training_data(ctx)?;
    let resume = resume.map(|rel| ctx.load_checkpoint(rel)).transpose()?;
    let resumed_from = resume.as_ref().map(|c| c.step);
    let checkpoint_dir = (cfg.train.checkpoint_every > 0).then(|| ctx.path("pretrain/checkpoints"));
    if let Some(dir) = &checkpoint_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let options = RunOptions {
        resume,
        stop_at: None,
        checkpoint_dir,
    };
    let (ck, report) = run_pretrain(&cfg.model, &cfg.train, &data, options).context("pretraining")?;
    let ck_path = ctx.path(CHECKPOINT);
    if let Some(dir) = ck_path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_checkpoint(&ck, &ck_path).context("saving checkpoint")?;
    ctx.write("pretrain/steps.jsonl", report.to_jsonl())?;

    let series = |label, f: fn(&gazeworld::train::StepLosses) -> f64| Series {
        label,
        points: report
            .steps
            .iter()
            .filter_map(|r| r.losses.as_ref().map(|l| (r.step as f64, f(l))))
            .collect(),
    };
    let svg = line_plot(
        "pretraining loss",
        "step",
        "loss",
        &[
            series("total", |l| l.l_total),
            series("next fixation", |l| l.l_ar),
            series("completion", |l| l.l_sc),
        ],
    );
    ctx.write("pretrain/loss.svg", svg)?;

    let losses = report.total_losses();
    let first = losses.first().copied();
    let last = losses.last().copied();
    let tau = report.tau_trace();
    let mut out = Outcome::new(json!({
        "total_steps": report.total_steps,
        "steps_run": report.steps.len(),
        "resumed_from_step": resumed_from,
        "final_step": ck.step,
        "initial_loss": first,
        "final_loss": last,
        "loss_ratio": first.zip(last).map(|(a, b)| b / a),
        "tau_first": tau.first(),
        "tau_last": tau.last(),
        "skipped_samples": report.skipped_samples,
        "skipped_steps": report.skipped_steps,
        "parameters": ck.model.online.num_scalars(),
    }))
    .output("checkpoint", CHECKPOINT)
    .output("steps", "pretrain/steps.jsonl")
    .output("loss_curve", "pretrain/loss.svg");
    if cfg.train.checkpoint_every > 0 {
        out = out.output("checkpoints", "pretrain/checkpoints");
    }
    Ok(out)
}

pub fn cmd_probe(ctx: &Ctx, checkpoint: &str) -> Result<Outcome, CliError> {
    let cfg = ctx.config;
    let ck = ctx.load_checkpoint(checkpoint)?;
    let data = synth(
        cfg,
        cfg.seed.wrapping_add(cfg.probe.seed_offset),
        cfg.probe.n_images,
        OrderRule::IntensityOrder,
    )?;
    let (train, _, test) = split_dataset(&data, cfg.probe.split).context("splitting probe images")?;
    let report = linear_probe(&ck.model, &train, &test, &cfg.probe.logistic).context("linear probe")?;
    let mut result = serde_json::to_value(&report).expect("probe report serializes");
    result["checkpoint_step"] = json!(ck.step);
    Ok(Outcome {
        result,
        outputs: BTreeMap::new(),
    })
}

#[derive(Serialize)]
struct ParamDump<'a> {
    name: &'a str,
    shape: &'a [usize],
    data: &'a [f64],
}

fn decoder_json(decoder: &ScanpathDecoder, feature_dim: usize) -> Value {
    let params: Vec<ParamDump> = decoder
        .store
        .params()
        .iter()
        .map(|p| ParamDump {
            name: &p.name,
            shape: p.value.shape(),
            data: p.value.data(),
        })
        .collect();
    json!({
        "config": decoder.config,
        "grid": decoder.grid,
        "feature_dim": feature_dim,
        "params": params,
    })
}

pub fn cmd_scanpath(ctx: &Ctx, checkpoint: &str) -> Result<Outcome, CliError> {
    let cfg = ctx.config;
    let sc = &cfg.scanpath;
    let ck = ctx.load_checkpoint(checkpoint)?;
    let grid = cfg.model.grid;
    let base = cfg.seed.wrapping_add(sc.seed_offset);
    let train_imgs = synth(cfg, base, sc.train_images, OrderRule::IntensityOrder)?;
    let test_imgs = synth(cfg, base.wrapping_add(1), sc.test_images, OrderRule::IntensityOrder)?;
    let steps = sc.decoder.steps;

    let mut examples = Vec::with_capacity(train_imgs.len() * sc.tasks.len());
    for img in &train_imgs.images {
        for &task in &sc.tasks {
            let sp = search_scanpath(img, grid, task, steps).context("ground-truth scanpath")?;
            examples.push((img.clone(), task, sp));
        }
    }
    let (decoder, dreport) = train_decoder(&ck.model, &sc.decoder, &examples).context("training decoder")?;

    let items: Vec<_> = test_imgs
        .images
        .iter()
        .flat_map(|img| sc.tasks.iter().map(move |&t| (img, t)))
        .collect();
    let predictions = decode_all(&ck.model, &decoder, &items).context("decoding scanpaths")?;
    let truth = items
        .iter()
        .map(|(img, t)| search_scanpath(img, grid, *t, steps))
        .collect::<Result<Vec<_>, _>>()
        .context("ground-truth scanpath")?;

    ctx.write("scanpath/predictions.jsonl", write_scanpath_file(&predictions))?;
    ctx.write("scanpath/truth.jsonl", write_scanpath_file(&truth))?;
    ctx.write(
        "scanpath/decoder.json",
        serde_json::to_string(&decoder_json(&decoder, ck.model.config.embed_dim)).expect("decoder serializes"),
    )?;
    let scores = compare(&predictions, &truth, grid, cfg.metrics.stde_k_max)?;
    Ok(Outcome::new(json!({
        "checkpoint_step": ck.step,
        "train_examples": examples.len(),
        "test_examples": predictions.len(),
        "decoder_steps": dreport.steps,
        "epoch_losses": dreport.epoch_losses,
        "metrics": scores.means,
    }))
    .output("decoder", "scanpath/decoder.json")
    .output("predictions", "scanpath/predictions.jsonl")
    .output("truth", "scanpath/truth.jsonl"))
}

#[derive(Debug, Serialize)]
struct PairReport {
    image_id: String,
    task: usize,
    sed: usize,
    scanmatch: f64,
    stde: f64,
    mm_vector: Option<f64>,
    mm_direction: Option<f64>,
    mm_position: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Means {
    n_pairs: usize,
    sed: f64,
    scanmatch: f64,
    stde: f64,
    /// MultiMatch means cover pairs where both paths have 2+ fixations.
    mm_pairs: usize,
    mm_vector: Option<f64>,
    mm_direction: Option<f64>,
    mm_position: Option<f64>,
}

struct Comparison {
    pairs: Vec<PairReport>,
    means: Means,
}

fn mean(v: impl Iterator<Item = f64>) -> (usize, Option<f64>) {
    let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n, (n > 0).then(|| s / n as f64))
}

/// Scores every prediction against the truth path with the same image id
/// and task.
fn compare(pred: &[Scanpath], truth: &[Scanpath], grid: GridSpec, k_max: usize) -> Result<Comparison, CliError> {
    let mut by_key: HashMap<(&str, usize), &Scanpath> = HashMap::new();
    for t in truth {
        if by_key.insert((&t.image_id, t.task), t).is_some() {
            return Err(run_err(format!(
                "truth has two scanpaths for image {} task {}",
                t.image_id, t.task
            )));
        }
    }
    let mut seen = HashMap::new();
    let mut pairs = Vec::with_capacity(pred.len());
    for p in pred {
        if seen.insert((p.image_id.as_str(), p.task), ()).is_some() {
            return Err(run_err(format!(
                "predictions have two scanpaths for image {} task {}",
                p.image_id, p.task
            )));
        }
        let Some(t) = by_key.get(&(p.image_id.as_str(), p.task)) else {
            return Err(run_err(format!(
                "no truth scanpath for image {} task {}",
                p.image_id, p.task
            )));
        };
        let qa = QuantizedScanpath::from_scanpath(p, grid).with_context(|| format!("prediction {}", p.image_id))?;
        let qb = QuantizedScanpath::from_scanpath(t, grid).with_context(|| format!("truth {}", t.image_id))?;
        let s = score_pair(&qa, &qb).context("scoring")?;
        pairs.push(PairReport {
            image_id: p.image_id.clone(),
            task: p.task,
            sed: s.sed,
            scanmatch: s.scanmatch,
            stde: stde(&qa, &qb, k_max).context("scoring")?,
            mm_vector: s.multimatch.map(|m| m.vector),
            mm_direction: s.multimatch.map(|m| m.direction),
            mm_position: s.multimatch.map(|m| m.position),
        });
    }
    if pairs.is_empty() {
        return Err(run_err("no scanpath pairs to compare".into()));
    }
    let (n, sed) = mean(pairs.iter().map(|p| p.sed as f64));
    let (_, scanmatch) = mean(pairs.iter().map(|p| p.scanmatch));
    let (_, stde_m) = mean(pairs.iter().map(|p| p.stde));
    let (mm_pairs, mm_vector) = mean(pairs.iter().filter_map(|p| p.mm_vector));
    let (_, mm_direction) = mean(pairs.iter().filter_map(|p| p.mm_direction));
    let (_, mm_position) = mean(pairs.iter().filter_map(|p| p.mm_position));
    let means = Means {
        n_pairs: n,
        sed: sed.unwrap_or(f64::NAN),
        scanmatch: scanmatch.unwrap_or(f64::NAN),
        stde: stde_m.unwrap_or(f64::NAN),
        mm_pairs,
        mm_vector,
        mm_direction,
        mm_position,
    };
    Ok(Comparison { pairs, means })
}

fn run_err(msg: String) -> CliError {
    CliError::Run(anyhow::anyhow!(msg))
}

fn read_scanpaths(ctx: &Ctx, rel: &str) -> Result<Vec<Scanpath>, CliError> {
    let p = ctx.require(rel)?;
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(parse_scanpath_file(&text).with_context(|| format!("parsing {}", p.display()))?)
}

pub fn cmd_metrics(ctx: &Ctx, pred: &str, truth: &str) -> Result<Outcome, CliError> {
    let pred_paths = read_scanpaths(ctx, pred)?;
    let truth_paths = read_scanpaths(ctx, truth)?;
    let c = compare(
        &pred_paths,
        &truth_paths,
        ctx.config.model.grid,
        ctx.config.metrics.stde_k_max,
    )?;
    Ok(Outcome::new(json!({
        "pred": pred,
        "truth": truth,
        "unmatched_truth": truth_paths.len() - c.pairs.len(),
        "pairs": c.pairs,
        "means": c.means,
    })))
}

pub fn cmd_ablate(ctx: &Ctx) -> Result<Outcome, CliError> {
    let cfg = ctx.config;
    let ab = AblationConfig {
        seeds: cfg.ablation.seeds.clone(),
        rules: cfg.ablation.rules.clone(),
        pretrain_images: cfg.ablation.pretrain_images,
        probe_images: cfg.probe.n_images,
        probe_seed_offset: cfg.probe.seed_offset,
        probe_split: cfg.probe.split,
        logistic: cfg.probe.logistic.clone(),
    };
    let report = run_ordering_ablation(&cfg.model, &cfg.train, &cfg.data.synth, &ab).context("ordering ablation")?;
    let mut result = serde_json::to_value(&report).expect("ablation report serializes");
    let gaze = report.mean_auroc.get(OrderRule::IntensityOrder.as_str()).copied();
    let random = report.mean_auroc.get(OrderRule::Random.as_str()).copied();
    result["gaze_beats_random"] = json!(gaze.zip(random).map(|(g, r)| g > r));
    Ok(Outcome {
        result,
        outputs: BTreeMap::new(),
    })
}
