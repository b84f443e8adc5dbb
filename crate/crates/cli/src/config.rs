//! Experiment configuration: one JSON document with a section per command.
//!
//! Resolution order is defaults, then the `--config` file, then `--set`
//! overrides, then `GAZEWORLD_SEED`. Every key in the file or the overrides
//! must exist in the default document.

use std::path::Path;

use gazeworld::gazedata::{OrderRule, SynthParams};
use gazeworld::probes::{DecoderConfig, LogisticConfig};
use gazeworld::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const SEED_ENV: &str = "GAZEWORLD_SEED";

/// Bundled small configuration for a quick end-to-end run.
pub const DEMO_CONFIG: &str = include_str!("../configs/demo.json");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives image generation, model init, the training shuffle and the
    /// decoder init. `model.init_seed`, `train.seed` and
    /// `scanpath.decoder.seed` are overwritten with it.
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeSection,
    pub scanpath: ScanpathSection,
    pub ablation: AblationSection,
    pub metrics: MetricsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_images: usize,
    pub rule: OrderRule,
    pub synth: SynthParams,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_images: 200,
            rule: OrderRule::IntensityOrder,
            synth: SynthParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub n_images: usize,
    /// Probe images are generated from `seed + seed_offset`.
    pub seed_offset: u64,
    pub split: (f64, f64, f64),
    pub logistic: LogisticConfig,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            n_images: 300,
            seed_offset: 1000,
            split: (0.6, 0.1, 0.3),
            logistic: LogisticConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanpathSection {
    pub train_images: usize,
    pub test_images: usize,
    pub seed_offset: u64,
    pub tasks: Vec<usize>,
    pub decoder: DecoderConfig,
}

impl Default for ScanpathSection {
    fn default() -> Self {
        Self {
            train_images: 300,
            test_images: 60,
            seed_offset: 2000,
            tasks: vec![0, 1],
            decoder: DecoderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    /// Pretraining seeds; the top-level seed is not used by the ablation.
    pub seeds: Vec<u64>,
    pub rules: Vec<OrderRule>,
    pub pretrain_images: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            rules: OrderRule::ALL.to_vec(),
            pretrain_images: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub stde_k_max: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            stde_k_max: gazeworld::metrics::STDE_K_MAX,
        }
    }
}

/// Keys whose value is always taken from `seed`.
const DERIVED_KEYS: [&str; 3] = ["model.init_seed", "train.seed", "scanpath.decoder.seed"];

impl ExperimentConfig {
    fn apply_seed(&mut self) {
        self.model.init_seed = self.seed;
        self.train.seed = self.seed;
        self.scanpath.decoder.seed = self.seed;
    }

    /// Cross-section checks; every problem is reported.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if let Err(e) = self.train.validate() {
            problems.push(format!("train: {e}"));
        }
        if let Err(e) = self.scanpath.decoder.validate() {
            problems.push(format!("scanpath.decoder: {e}"));
        }
        if let Err(e) = gazeworld::Model::new(self.model.clone()) {
            problems.push(format!("model: {e}"));
        }
        if self.data.synth.patch_px != self.model.patch_px {
            problems.push(format!(
                "data.synth.patch_px ({}) must equal model.patch_px ({})",
                self.data.synth.patch_px, self.model.patch_px
            ));
        }
        if self.data.n_images == 0 {
            problems.push("data.n_images must be at least 1".into());
        }
        if let Some(&t) = self
            .scanpath
            .tasks
            .iter()
            .find(|&&t| t >= self.scanpath.decoder.n_tasks)
        {
            problems.push(format!(
                "scanpath.tasks contains {t} but the decoder has {} tasks",
                self.scanpath.decoder.n_tasks
            ));
        }
        if self.scanpath.tasks.is_empty() || self.scanpath.train_images == 0 || self.scanpath.test_images == 0 {
            problems.push("scanpath needs tasks and a positive number of train and test images".into());
        }
        if self.ablation.seeds.is_empty() || self.ablation.rules.is_empty() {
            problems.push("ablation needs at least one seed and one rule".into());
        }
        if self.metrics.stde_k_max == 0 {
            problems.push("metrics.stde_k_max must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::InvalidConfig(problems))
        }
    }
}

/// Parses one `section.key=value` override. Values are JSON; anything that
/// does not parse as JSON is taken as a string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {spec:?} is not of the form section.key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("override {spec:?} has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

/// Dotted paths of keys in `user` that have no counterpart in `defaults`.
fn unknown_keys(user: &Value, defaults: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(u), Value::Object(d)) = (user, defaults) else {
        return;
    };
    for (k, v) in u {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match d.get(k) {
            None => out.push(path),
            Some(dv) => unknown_keys(v, dv, &path, out),
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(doc: &mut Value, path: &[String], value: Value) {
    let mut cur = doc;
    for seg in &path[..path.len() - 1] {
        if !cur.get(seg).is_some_and(Value::is_object) {
            cur.as_object_mut()
                .expect("object")
                .insert(seg.clone(), Value::Object(Map::new()));
        }
        cur = cur.get_mut(seg).expect("inserted");
    }
    cur.as_object_mut()
        .expect("object")
        .insert(path[path.len() - 1].clone(), value);
}

/// Reads a config file. A report written by this tool is accepted too; its
/// embedded `config` is used.
pub fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| CliError::InvalidConfig(vec![format!("{}: {e}", path.display())]))?;
    if !doc.is_object() {
        return Err(CliError::InvalidConfig(vec![format!(
            "{}: config must be a JSON object",
            path.display()
        )]));
    }
    Ok(match (doc.get("command"), doc.get("config")) {
        (Some(_), Some(cfg)) => cfg.clone(),
        _ => doc,
    })
}

/// Builds the resolved configuration.
pub fn resolve(
    file: Option<Value>,
    overrides: &[String],
    env_seed: Option<&str>,
) -> Result<ExperimentConfig, CliError> {
    let defaults = serde_json::to_value(ExperimentConfig::default()).expect("default config serializes");
    let mut user = file.unwrap_or_else(|| Value::Object(Map::new()));
    let mut problems = Vec::new();
    for spec in overrides {
        let (path, value) = parse_override(spec)?;
        let dotted = path.join(".");
        if DERIVED_KEYS.contains(&dotted.as_str()) {
            problems.push(format!("{dotted} is derived from seed; set seed instead"));
            continue;
        }
        set_path(&mut user, &path, value);
    }
    let mut unknown = Vec::new();
    unknown_keys(&user, &defaults, "", &mut unknown);
    problems.extend(unknown.into_iter().map(|k| format!("unknown key {k}")));
    if !problems.is_empty() {
        return Err(CliError::InvalidConfig(problems));
    }

    let mut doc = defaults;
    merge(&mut doc, user);
    let mut config: ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| CliError::InvalidConfig(vec![e.to_string()]))?;
    if let Some(raw) = env_seed {
        config.seed = raw
            .trim()
            .parse()
            .map_err(|_| CliError::InvalidConfig(vec![format!("{SEED_ENV}={raw:?} is not an unsigned integer")]))?;
    }
    config.apply_seed();
    config.validate()?;
    Ok(config)
}
