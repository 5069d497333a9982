//! The run configuration: one JSON document covering every subcommand,
//! with `--set key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use autolabel3d::model::TrainConfig;
use autolabel3d::synth::{Split, SynthConfig};
use autolabel3d::tracking::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub iou_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { iou_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iterations: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictOptions {
    /// Which split of a synthetic dataset to label.
    pub split: SplitChoice,
    /// Detections with fewer frustum points are skipped.
    pub min_points: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            split: SplitChoice::Heldout,
            min_points: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    Train,
    Heldout,
    All,
}

impl SplitChoice {
    pub fn admits(self, split: Split) -> bool {
        match self {
            SplitChoice::All => true,
            SplitChoice::Train => split == Split::Train,
            SplitChoice::Heldout => split == Split::Heldout,
        }
    }
}

/// Input and output locations; filled from subcommand arguments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub tracks: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    pub eval: EvalOptions,
    pub fit: FitOptions,
    pub predict: PredictOptions,
    pub paths: Paths,
}

fn leaf_paths(value: &Value, prefix: &str, out: &mut Vec<String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_paths(v, &p, out);
                if !matches!(v, Value::Object(_)) {
                    continue;
                }
                out.push(p);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

/// Resolves `key` to a full dotted path: either it already is one, or it
/// is the last component of exactly one path.
fn resolve_key(root: &Value, key: &str) -> Result<Vec<String>> {
    let mut all = Vec::new();
    leaf_paths(root, "", &mut all);
    if all.iter().any(|p| p == key) {
        return Ok(key.split('.').map(String::from).collect());
    }
    let matches: Vec<&String> = all
        .iter()
        .filter(|p| p.ends_with(&format!(".{key}")))
        .collect();
    match matches.len() {
        0 => bail!("unknown configuration key `{key}`"),
        1 => Ok(matches[0].split('.').map(String::from).collect()),
        _ => bail!(
            "configuration key `{key}` is ambiguous: {}",
            matches.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Applies `key=value`; the value is parsed as JSON, falling back to a
/// plain string.
pub fn apply_override(config: &RunConfig, assignment: &str) -> Result<RunConfig> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let mut root = serde_json::to_value(config)?;
    let path = resolve_key(&root, key.trim())?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = &mut root;
    for part in &path {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| anyhow!("unknown configuration key `{key}`"))?;
    }
    *slot = value;
    serde_json::from_value(root).with_context(|| format!("invalid value in override `{assignment}`"))
}

pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        config = apply_override(&config, o)?;
    }
    if let Some(seed) = seed {
        config.synth.seed = seed;
        config.train.seed = seed;
    }
    Ok(config)
}

/// Writes the fully resolved configuration as `run_config.json` in `dir`.
pub fn write_resolved(config: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("run_config.json");
    std::fs::write(&path, serde_json::to_string_pretty(config)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_and_dotted_keys() {
        let c = RunConfig::default();
        let c = apply_override(&c, "epochs=1").unwrap();
        assert_eq!(c.train.epochs, 1);
        let c = apply_override(&c, "train.loss.outlier_aware=false").unwrap();
        assert!(!c.train.loss.outlier_aware);
        let c = apply_override(&c, "encoder_widths=[8,16]").unwrap();
        assert_eq!(c.train.model.encoder_widths, vec![8, 16]);
    }

    #[test]
    fn unknown_and_ambiguous_keys_are_rejected() {
        let c = RunConfig::default();
        assert!(apply_override(&c, "no_such_key=1").is_err());
        assert!(apply_override(&c, "seed=1").is_err());
        assert!(apply_override(&c, "epochs=abc").is_err());
        assert!(apply_override(&c, "epochs").is_err());
    }

    #[test]
    fn unknown_fields_in_file_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"train": {"epochz": 3}}"#);
        assert!(err.is_err());
    }
}
