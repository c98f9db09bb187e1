//! Command-line surface over the pipeline stages.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::augmentor::Weighting;
use crate::config::{PipelineConfig, Preset};
use crate::datamodel::Split;
use crate::error::{Error, Result};
use crate::pipeline::{self, Workdir, STAGE_JOINT};

#[derive(Debug, Parser)]
#[command(name = "tfv", version, about = "Salience-aware table fact verification at desk scale")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key = value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding all pipeline artifacts
    #[arg(long, global = true, default_value = "work")]
    pub workdir: PathBuf,
    /// Seed for generation and every training stage
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<PresetArg>,
    /// Extra `section.field=value` overrides, applied last
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    Probabilistic,
    Uniform,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and vocabulary
    GenData,
    /// Train the verification-only baseline (the salience probe)
    TrainBaseline,
    /// Train the statement-only masked language model
    TrainMlm,
    /// Compute salience profiles for the train split
    Salience {
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Augment the train split by replacing least salient tokens
    Augment {
        #[arg(long, value_enum, default_value = "probabilistic")]
        mode: WeightingArg,
    },
    /// Salience-aware joint training from the baseline
    TrainJoint,
    /// Evaluate a checkpoint
    Eval {
        /// Defaults to the joint model's best checkpoint
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Run the four masking/augmentation ablation arms
    Ablate,
    /// Render salience heatmaps
    Heatmap {
        #[arg(long)]
        instance: Option<String>,
        #[arg(long, default_value_t = 5)]
        limit: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainBaseline => "train-baseline",
            Command::TrainMlm => "train-mlm",
            Command::Salience { .. } => "salience",
            Command::Augment { .. } => "augment",
            Command::TrainJoint => "train-joint",
            Command::Eval { .. } => "eval",
            Command::Ablate => "ablate",
            Command::Heatmap { .. } => "heatmap",
        }
    }
}

/// Preset, then config file, then `--seed` and `--set` flags.
pub fn resolve_config(common: &Common) -> Result<PipelineConfig> {
    let preset = match common.preset {
        Some(PresetArg::Paper) => Preset::Paper,
        _ => Preset::Desk,
    };
    let mut config = PipelineConfig::preset(preset);
    if let Some(path) = &common.config {
        config.apply_file(path)?;
        if let Some(p) = common.preset {
            // an explicit flag beats the file's preset line
            let wanted = match p {
                PresetArg::Desk => Preset::Desk,
                PresetArg::Paper => Preset::Paper,
            };
            if config.preset != wanted {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                config = PipelineConfig::preset(wanted);
                let body: String = text
                    .lines()
                    .filter(|l| !l.trim_start().starts_with("preset"))
                    .map(|l| format!("{l}\n"))
                    .collect();
                config.apply_text(&body, &path.display().to_string())?;
            }
        }
    }
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    config.validate()?;
    Ok(config)
}

/// Runs one subcommand. Returns the machine-readable summary and any
/// human-readable text to print before it.
pub fn execute(cli: &Cli) -> Result<(Value, String)> {
    let config = resolve_config(&cli.common)?;
    let wd = Workdir::new(&cli.common.workdir);
    let mut text = String::new();
    let summary = match &cli.command {
        Command::GenData => pipeline::gen_data(&config, &wd)?,
        Command::TrainBaseline => pipeline::train_baseline(&config, &wd)?.1,
        Command::TrainMlm => pipeline::train_mlm(&config, &wd)?.1,
        Command::Salience { limit } => pipeline::salience(&wd, *limit)?.1,
        Command::Augment { mode } => {
            let w = match mode {
                WeightingArg::Probabilistic => Weighting::Probabilistic,
                WeightingArg::Uniform => Weighting::Uniform,
            };
            pipeline::augment(&config, &wd, w)?.1
        }
        Command::TrainJoint => pipeline::joint(&config, &wd)?.1,
        Command::Eval { checkpoint, split } => {
            let path = checkpoint.clone().unwrap_or_else(|| wd.best_checkpoint(STAGE_JOINT));
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let report = pipeline::eval(&config, &wd, &path, split)?;
            text = report.render();
            json!({
                "split": report.split,
                "accuracy": report.accuracy,
                "simple_accuracy": report.simple_accuracy,
                "complex_accuracy": report.complex_accuracy,
                "n_instances": report.n_instances,
                "checkpoint": report.checkpoint_id,
            })
        }
        Command::Ablate => {
            let report = pipeline::ablation(&config, &wd)?;
            text = report.render();
            serde_json::to_value(&report).expect("serializable")
        }
        Command::Heatmap { instance, limit } => {
            let records = pipeline::heatmaps(&config, &wd, instance.as_deref(), *limit)?;
            text = records.iter().map(|r| r.render()).collect::<Vec<_>>().join("\n");
            json!({ "records": records.len(), "file": wd.heatmaps() })
        }
    };
    Ok((summary, text))
}

/// Parses `args`, runs the command and returns the process exit status:
/// 0 on success, 1 for pipeline errors, 2 for usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok((summary, text)) => {
            if !text.is_empty() {
                print!("{text}");
                if !text.ends_with('\n') {
                    println!();
                }
            }
            println!("{}", json!({ "command": cli.command.name(), "status": "ok", "result": summary }));
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            println!(
                "{}",
                json!({ "command": cli.command.name(), "status": "error", "category": e.category(), "message": e.to_string() })
            );
            1
        }
    }
}
