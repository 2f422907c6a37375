//! Run configuration: defaults, a JSON file on top, then `key=value`
//! overrides on dotted paths.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::bench::Method;
use super::synth::SynthConfig;
use crate::error::{Result, SpclError};
use crate::trainer::{DetectConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub num_seeds: usize,
    /// Seeds run are `base_seed .. base_seed + num_seeds`.
    pub base_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            num_seeds: 5,
            base_seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.num_seeds as u64).map(|i| self.base_seed + i).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub detect: DetectConfig,
    pub bench: BenchConfig,
}

impl Config {
    /// Sets every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = seed;
        self.bench.base_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.bench.methods.is_empty() || self.bench.num_seeds == 0 {
            return Err(SpclError::InvalidConfig("bench needs a method and a seed".into()));
        }
        if !(self.detect.nms_iou >= 0.0 && self.detect.nms_iou <= 1.0) || !self.detect.score_threshold.is_finite() {
            return Err(SpclError::InvalidConfig(format!("invalid detect settings {:?}", self.detect)));
        }
        Ok(())
    }
}

/// Overlays `src` onto `dst`. Keys absent from `dst` are rejected so typos do
/// not pass silently.
fn merge(dst: &mut Value, src: Value, path: &str) -> Result<()> {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = d
                    .get_mut(&k)
                    .ok_or_else(|| SpclError::InvalidConfig(format!("unknown key `{sub}`")))?;
                merge(slot, v, &sub)?;
            }
        }
        (d, s) => *d = s,
    }
    Ok(())
}

/// Applies one `a.b.c=value` assignment. The value is read as JSON when it
/// parses, as a plain string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| SpclError::InvalidConfig(format!("expected key=value, got `{assignment}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut nested = value;
    for part in key.trim().rsplit('.') {
        let mut m = serde_json::Map::new();
        m.insert(part.to_string(), nested);
        nested = Value::Object(m);
    }
    merge(root, nested, "")
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> Result<Config> {
    let mut root = serde_json::to_value(Config::default())?;
    if let Some(p) = path {
        let file: Value = super::io::read_json(p)?;
        merge(&mut root, file, "")?;
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let mut cfg: Config = serde_json::from_value(root)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}
