//! Pipeline configuration: a preset, overridden by a `key = value` file,
//! overridden by command-line flags.
//!
//! ```text
//! # comments start with '#'
//! preset = desk            # or paper; must come first if present
//! gen.train_tables = 200
//! model.d_model = 64
//! train.alpha = 0.5
//! train.masking_strategy = salient
//! mlm.total_steps = 1500   # stage A' schedule
//! ```
//!
//! Section names are `gen`, `model`, `train` (stages A and joint) and `mlm`
//! (stage A'); field names are those of the corresponding config structs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::synthgen::GenConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Preset> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mlm: TrainConfig,
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> PipelineConfig {
        let train = match preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        };
        let mlm = match preset {
            Preset::Desk => TrainConfig { total_steps: 1500, ..train.clone() },
            Preset::Paper => train.clone(),
        };
        PipelineConfig { preset, gen: GenConfig::default(), model: ModelConfig::default(), train, mlm }
    }

    /// Sets the seed of every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.train.seed = seed;
        self.mlm.seed = seed;
    }

    /// Applies one `section.field = value` assignment. Values are read as
    /// JSON where possible (numbers, booleans, `null`) and as bare strings
    /// otherwise.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("key {key:?} is not of the form section.field")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        match section {
            "gen" => patch(&mut self.gen, key, field, value),
            "model" => patch(&mut self.model, key, field, value),
            "train" => patch(&mut self.train, key, field, value),
            "mlm" => patch(&mut self.mlm, key, field, value),
            _ => Err(Error::Config(format!("unknown section in key {key:?}"))),
        }
    }

    /// Parses a config file's text on top of `base` (or the file's own
    /// `preset` line, which resets all values to that preset).
    pub fn apply_text(&mut self, text: &str, file: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse { file: file.to_string(), line: n + 1, message: m };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                *self = PipelineConfig::preset(Preset::parse(value).map_err(|e| err(e.to_string()))?);
            } else {
                self.set(key, value).map_err(|e| err(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        self.mlm.validate()
    }

    /// The configuration as `key = value` lines, loadable by `apply_text`.
    pub fn to_text(&self) -> String {
        let mut out = format!("preset = {}\n", serde_json::to_value(self.preset).unwrap().as_str().unwrap());
        let sections: [(&str, Value); 4] = [
            ("gen", serde_json::to_value(&self.gen).unwrap()),
            ("model", serde_json::to_value(&self.model).unwrap()),
            ("train", serde_json::to_value(&self.train).unwrap()),
            ("mlm", serde_json::to_value(&self.mlm).unwrap()),
        ];
        for (name, value) in sections {
            if let Value::Object(map) = value {
                for (k, v) in map {
                    let v = match v {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    out += &format!("{name}.{k} = {v}\n");
                }
            }
        }
        out
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn patch<T: Serialize + for<'de> Deserialize<'de>>(target: &mut T, key: &str, field: &str, value: Value) -> Result<()> {
    let mut map = match serde_json::to_value(&*target) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config sections serialize to objects"),
    };
    if !map.contains_key(field) {
        return Err(Error::Config(format!("unknown key {key:?}")));
    }
    // integers given where a float is expected deserialize fine; strings
    // given for numeric fields fail below with a clear message
    map.insert(field.to_string(), value);
    *target = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("{key}: {e}")))?;
    Ok(())
}
