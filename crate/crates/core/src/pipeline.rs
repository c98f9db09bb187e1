//! File-backed pipeline stages over a working directory. Each stage reads
//! the artifacts of earlier stages and writes its own, so stages can run as
//! separate processes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::augmentor::{augment_dataset, propose, MlmModel, Weighting};
use crate::config::PipelineConfig;
use crate::datamodel::{
    load_augmented, load_dataset_dir, load_profiles, save_dataset, split_stats, write_jsonl, AugmentedInstance,
    Dataset, LabeledInstance, SalienceProfile, Split,
};
use crate::encoder::{build_vocab, Vocab};
use crate::error::{Error, Result};
use crate::eval::{ablate, evaluate, heatmap_record, AblationInputs, AblationReport, EvalReport, HeatmapRecord};
use crate::network::{load_checkpoint, save_checkpoint, ModelConfig, Params};
use crate::salience::{estimate_all, least_salient, ProbeModel};
use crate::synthgen::generate_dataset;
use crate::trainer::{train_joint, train_stage_a, train_stage_a_prime, AugMode, TrainRun};

/// Artifact locations inside a working directory.
#[derive(Debug, Clone)]
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn audit(&self) -> PathBuf {
        self.data().join("audit.jsonl")
    }
    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }
    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }
    pub fn best_checkpoint(&self, stage: &str) -> PathBuf {
        self.stage_dir(stage).join("best.ckpt")
    }
    pub fn salience(&self) -> PathBuf {
        self.root.join("salience.jsonl")
    }
    pub fn augmented(&self) -> PathBuf {
        self.root.join("augmented.jsonl")
    }
    pub fn heatmaps(&self) -> PathBuf {
        self.root.join("heatmaps.jsonl")
    }
    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablation.json")
    }

    fn ensure(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        load_dataset_dir(&self.data())
    }

    pub fn load_vocab(&self) -> Result<Vocab> {
        Vocab::load(&self.vocab())
    }
}

pub const STAGE_A: &str = "stage_a";
pub const STAGE_MLM: &str = "mlm";
pub const STAGE_JOINT: &str = "joint";

pub fn checkpoint_id(params: &Params) -> String {
    format!("{:016x}", params.fingerprint())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generates the dataset and its vocabulary.
pub fn gen_data(config: &PipelineConfig, wd: &Workdir) -> Result<Value> {
    config.gen.validate()?;
    let generated = generate_dataset(&config.gen)?;
    wd.ensure(&wd.data())?;
    save_dataset(&generated.dataset, &wd.data())?;
    write_jsonl(&wd.audit(), &generated.audit)?;
    let vocab = build_vocab(&generated.dataset)?;
    vocab.save(&wd.vocab())?;
    let stats = split_stats(&generated.dataset);
    Ok(json!({
        "tables": generated.dataset.tables.len(),
        "vocab_size": vocab.len(),
        "stats": stats,
    }))
}

fn model_config(config: &PipelineConfig, vocab: &Vocab) -> ModelConfig {
    ModelConfig { vocab_size: vocab.len(), ..config.model.clone() }
}

fn save_run(wd: &Workdir, stage: &str, run: &TrainRun) -> Result<()> {
    let dir = wd.stage_dir(stage);
    wd.ensure(&dir)?;
    save_checkpoint(&run.best_params, &dir.join("best.ckpt"))?;
    save_checkpoint(&run.final_params, &dir.join("final.ckpt"))?;
    write_jsonl(&dir.join("metrics.jsonl"), &run.metrics)
}

fn run_summary(run: &TrainRun) -> Value {
    let last = run.metrics.last();
    json!({
        "steps": run.metrics.len(),
        "final_loss": last.map(|m| m.loss),
        "best_step": run.best_step,
        "best_val_accuracy": run.best_val_accuracy,
        "checkpoint": checkpoint_id(&run.best_params),
    })
}

/// Stage A: the verification-only baseline, also the salience probe.
pub fn train_baseline(config: &PipelineConfig, wd: &Workdir) -> Result<(TrainRun, Value)> {
    let dataset = wd.load_dataset()?;
    let vocab = wd.load_vocab()?;
    let run = train_stage_a(&dataset, &vocab, &model_config(config, &vocab), &config.train)?;
    save_run(wd, STAGE_A, &run)?;
    let probe = ProbeModel::new(run.best_params.clone(), vocab);
    let report = evaluate(&probe, &dataset, Split::Val, &checkpoint_id(&run.best_params), config.echo())?;
    let mut summary = run_summary(&run);
    summary["val_simple_accuracy"] = json!(report.simple_accuracy);
    Ok((run, summary))
}

/// Stage A': the statement-only masked language model used for augmentation.
pub fn train_mlm(config: &PipelineConfig, wd: &Workdir) -> Result<(TrainRun, Value)> {
    let dataset = wd.load_dataset()?;
    let vocab = wd.load_vocab()?;
    let run = train_stage_a_prime(&dataset, &vocab, &model_config(config, &vocab), &config.mlm)?;
    save_run(wd, STAGE_MLM, &run)?;
    let mut summary = run_summary(&run);
    summary["chance"] = json!(1.0 / vocab.len() as f64);
    Ok((run, summary))
}

/// Salience profiles of the train split (the first `limit` instances by id
/// when given) under the stage-A probe.
pub fn salience(wd: &Workdir, limit: Option<usize>) -> Result<(Vec<SalienceProfile>, Value)> {
    let dataset = wd.load_dataset()?;
    let probe = ProbeModel::new(load_checkpoint(&wd.best_checkpoint(STAGE_A))?, wd.load_vocab()?);
    let mut train: Vec<&LabeledInstance> = dataset.split(Split::Train).collect();
    train.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(n) = limit {
        train.truncate(n);
    }
    let profiles = estimate_all(&train, &dataset, &probe)?;
    write_jsonl(&wd.salience(), &profiles)?;
    let mean = profiles.iter().flat_map(|p| &p.scores).sum::<f64>()
        / profiles.iter().map(|p| p.scores.len()).sum::<usize>().max(1) as f64;
    let summary = json!({ "profiles": profiles.len(), "mean_score": mean });
    Ok((profiles, summary))
}

/// Probabilistic or uniform augmentation of the train split.
pub fn augment(config: &PipelineConfig, wd: &Workdir, weighting: Weighting) -> Result<(Vec<AugmentedInstance>, Value)> {
    let dataset = wd.load_dataset()?;
    let profiles = load_profiles(&wd.salience())?;
    let mlm = MlmModel::new(load_checkpoint(&wd.best_checkpoint(STAGE_MLM))?, wd.load_vocab()?);
    let records = augment_dataset(&dataset, &profiles, &mlm, config.train.k, weighting)?;
    write_jsonl(&wd.augmented(), &records)?;
    let added = records.iter().filter(|r| !r.is_original()).count();
    let summary = json!({ "records": records.len(), "augmented": added, "k": config.train.k });
    Ok((records, summary))
}

/// Stage C: salience-aware joint training warm-started from stage A.
pub fn joint(config: &PipelineConfig, wd: &Workdir) -> Result<(TrainRun, Value)> {
    let dataset = wd.load_dataset()?;
    let vocab = wd.load_vocab()?;
    let stage_a = load_checkpoint(&wd.best_checkpoint(STAGE_A))?;
    let profiles = load_profiles(&wd.salience())?;
    let augmented = match config.train.aug_mode {
        AugMode::Off => None,
        mode => {
            let mut records = load_augmented(&wd.augmented())?;
            if mode == AugMode::Uniform {
                records.iter_mut().for_each(|r| r.weight = 1.0);
            }
            Some(records)
        }
    };
    let run = train_joint(&dataset, &vocab, &profiles, augmented.as_deref(), &stage_a, &config.train)?;
    save_run(wd, STAGE_JOINT, &run)?;
    let summary = run_summary(&run);
    Ok((run, summary))
}

/// Evaluates a checkpoint on one split.
pub fn eval(config: &PipelineConfig, wd: &Workdir, checkpoint: &Path, split: Split) -> Result<EvalReport> {
    let params = load_checkpoint(checkpoint)?;
    let dataset = wd.load_dataset()?;
    let probe = ProbeModel::new(params, wd.load_vocab()?);
    evaluate(&probe, &dataset, split, &checkpoint_id(&probe.params), config.echo())
}

/// Runs the four ablation arms from the stored stage-A checkpoint, profiles
/// and probabilistic augmentation.
pub fn ablation(config: &PipelineConfig, wd: &Workdir) -> Result<AblationReport> {
    let dataset = wd.load_dataset()?;
    let vocab = wd.load_vocab()?;
    let stage_a = load_checkpoint(&wd.best_checkpoint(STAGE_A))?;
    let profiles = load_profiles(&wd.salience())?;
    let augmented = load_augmented(&wd.augmented())?;
    let report = ablate(
        &AblationInputs { dataset: &dataset, vocab: &vocab, stage_a: &stage_a, profiles: &profiles, augmented: &augmented },
        &config.train,
    )?;
    write_json(&wd.ablation(), &report)?;
    Ok(report)
}

/// Heatmap records for stored profiles, with fresh MLM proposals at the least
/// salient token when the stage-A' checkpoint exists.
pub fn heatmaps(config: &PipelineConfig, wd: &Workdir, instance: Option<&str>, limit: usize) -> Result<Vec<HeatmapRecord>> {
    let dataset = wd.load_dataset()?;
    let index = dataset.instance_index();
    let profiles = load_profiles(&wd.salience())?;
    let mlm_path = wd.best_checkpoint(STAGE_MLM);
    let mlm = if mlm_path.exists() {
        Some(MlmModel::new(load_checkpoint(&mlm_path)?, wd.load_vocab()?))
    } else {
        None
    };
    let selected: Vec<&SalienceProfile> = match instance {
        Some(id) => {
            let p = profiles
                .iter()
                .find(|p| p.instance_id == id)
                .ok_or_else(|| Error::MissingProfile(id.to_string()))?;
            vec![p]
        }
        None => profiles.iter().take(limit).collect(),
    };
    let records = selected
        .into_iter()
        .map(|p| {
            let inst = index
                .get(p.instance_id.as_str())
                .ok_or_else(|| Error::Integrity(format!("profile for unknown instance {}", p.instance_id)))?;
            let proposals = match (&mlm, least_salient(p, &inst.statement)?) {
                (Some(m), Some(i)) => propose(&inst.statement, i, m, config.train.k)?,
                _ => vec![],
            };
            heatmap_record(p, &inst.statement, proposals)
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&wd.heatmaps(), &records)?;
    Ok(records)
}
