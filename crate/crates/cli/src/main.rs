//! `gazeworld`: synthetic data, pretraining, probes and scanpath metrics
//! from the command line. Every command writes a JSON report under
//! `<workdir>/reports/` and prints it to stdout. Failures print an error
//! object to stderr and exit non-zero.

mod commands;
mod config;
mod error;
mod report;
mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::Value;

use commands::{Ctx, Outcome, CHECKPOINT};
use config::{read_config_file, resolve, DEMO_CONFIG, SEED_ENV};
use error::CliError;
use report::{unix_now, write_json, Report};

#[derive(Debug, Parser)]
#[command(
    name = "gazeworld",
    version,
    about = "Gaze-ordered world-model pretraining experiments"
)]
struct Cli {
    /// Root for every relative path read or written.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// Experiment config (JSON). A previous report also works.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.learning_rate=3e-4`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset into `data/`.
    Synth,
    /// Pretrain on `data/`; writes `pretrain/model.gzw` and a loss curve.
    Pretrain {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<String>,
    },
    /// Linear probe of frozen features on held-out synthetic images.
    Probe {
        #[arg(long, default_value = CHECKPOINT)]
        checkpoint: String,
    },
    /// Train the scanpath decoder and write predicted scanpaths.
    Scanpath {
        #[arg(long, default_value = CHECKPOINT)]
        checkpoint: String,
    },
    /// Compare two scanpath JSONL files.
    Metrics {
        #[arg(long)]
        pred: String,
        #[arg(long)]
        truth: String,
    },
    /// Pretrain under gaze, raster and random ordering and probe each.
    Ablate,
    /// Print the resolved config.
    Config {
        /// Start from the bundled demo config.
        #[arg(long)]
        demo: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Pretrain { .. } => "pretrain",
            Command::Probe { .. } => "probe",
            Command::Scanpath { .. } => "scanpath",
            Command::Metrics { .. } => "metrics",
            Command::Ablate => "ablate",
            Command::Config { .. } => "config",
        }
    }
}

fn run(cli: &Cli) -> Result<Value, CliError> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let file = match (&cli.command, &cli.config) {
        (Command::Config { demo: true }, Some(_)) => {
            return Err(CliError::Usage("--demo and --config are mutually exclusive".into()))
        }
        (Command::Config { demo: true }, None) => Some(serde_json::from_str(DEMO_CONFIG).expect("demo config is JSON")),
        (_, Some(path)) => Some(read_config_file(&cli.workdir.join(path))?),
        (_, None) => None,
    };
    let config = resolve(file, &cli.overrides, env_seed.as_deref())?;
    if let Command::Config { .. } = cli.command {
        return Ok(serde_json::to_value(&config).expect("config serializes"));
    }

    let started = unix_now();
    let clock = Instant::now();
    let ctx = Ctx {
        workdir: &cli.workdir,
        config: &config,
    };
    let Outcome { result, outputs } = match &cli.command {
        Command::Synth => commands::cmd_synth(&ctx)?,
        Command::Pretrain { resume } => commands::cmd_pretrain(&ctx, resume.as_deref())?,
        Command::Probe { checkpoint } => commands::cmd_probe(&ctx, checkpoint)?,
        Command::Scanpath { checkpoint } => commands::cmd_scanpath(&ctx, checkpoint)?,
        Command::Metrics { pred, truth } => commands::cmd_metrics(&ctx, pred, truth)?,
        Command::Ablate => commands::cmd_ablate(&ctx)?,
        Command::Config { .. } => unreachable!("handled above"),
    };
    let name = cli.command.name();
    let report_rel = format!("reports/{name}.json");
    let mut outputs: BTreeMap<String, String> = outputs;
    outputs.insert("report".into(), report_rel.clone());
    let report = Report {
        command: name,
        version: gazeworld::VERSION,
        seed: config.seed,
        config: config.clone(),
        started_unix_s: started,
        wall_clock_s: clock.elapsed().as_secs_f64(),
        outputs,
        result,
    };
    write_json(&Path::new(&cli.workdir).join(&report_rel), &report)?;
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json("usage"));
            std::process::exit(err.exit_code());
        }
    };
    match run(&cli) {
        Ok(value) => println!("{}", serde_json::to_string_pretty(&value).expect("JSON serializes")),
        Err(err) => {
            eprintln!("{}", err.to_json(cli.command.name()));
            std::process::exit(err.exit_code());
        }
    }
}
