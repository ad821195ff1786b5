//! Run configuration: one JSON document, `--set` overrides, and seed
//! resolution from the single base seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::cluster::ClusterConfig;
use crate::dataset::{Group, Region};
use crate::grouping::GroupingSpec;
use crate::mvpa::DecodeConfig;
use crate::pipeline::{ClassSplit, TrialType};
use crate::prep::PrepConfig;
use crate::rng;
use crate::subject_clf::tables::{self, GridEntry};
use crate::subject_clf::{BootstrapConfig, BudgetAxis, ClassifierSpec, InferenceConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub train: ClassSplit,
    pub held_out: Vec<Group>,
}

fn default_time_ends() -> Vec<f64> {
    vec![0.0, 150.0, 300.0, 450.0, 600.0, 750.0, 900.0]
}

fn default_regions() -> Vec<Region> {
    vec![Region::Anterior, Region::Central, Region::Posterior]
}

fn default_fractions() -> Vec<f64> {
    vec![1.0, 0.75, 0.5, 0.25, 0.1]
}

fn default_n_values() -> Vec<usize> {
    vec![100, 200, 400, 1000]
}

fn default_b_values() -> Vec<usize> {
    vec![5, 10, 20, 40]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AblateSection {
    /// Whole-window decoding on `(epoch start, X)` inputs and per region.
    RegionTime {
        #[serde(default = "default_time_ends")]
        time_ends_ms: Vec<f64>,
        #[serde(default = "default_regions")]
        regions: Vec<Region>,
    },
    /// Trial or positive-subject budgets for the classification.
    Budget {
        axis: BudgetAxis,
        #[serde(default = "default_fractions")]
        fractions: Vec<f64>,
    },
    /// Bootstrap count (N) and trials-per-bootstrap (B) grids.
    Bootstrap {
        #[serde(default = "default_n_values")]
        n_values: Vec<usize>,
        #[serde(default = "default_b_values")]
        b_values: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateSection {
    /// `probabilities.csv` written by `classify`.
    pub probabilities_path: Option<PathBuf>,
    /// Row filters; the first row group in the file when unset.
    pub task: Option<String>,
    pub condition: Option<String>,
    pub trial_type: Option<String>,
    pub n_perm: usize,
}

impl Default for CorrelateSection {
    fn default() -> Self {
        Self {
            probabilities_path: None,
            task: None,
            condition: None,
            trial_type: None,
            n_perm: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: Option<PathBuf>,
    /// Not echoed in `run_meta.json`: where results go does not change them.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Every random stream of the run derives from this value.
    pub base_seed: u64,
    pub prep: PrepConfig,
    pub trial_type: TrialType,
    pub split: ClassSplit,
    pub n_seeds: usize,
    pub decode: DecodeConfig,
    pub cluster: ClusterConfig,
    pub bootstrap: BootstrapConfig,
    pub classifier: ClassifierSpec,
    pub inference: InferenceConfig,
    pub grid: Vec<GridEntry>,
    pub tasks: Vec<ClassSplit>,
    pub transfer: TransferSection,
    pub ablate: AblateSection,
    pub behavioral: DecodeConfig,
    pub correlate: CorrelateSection,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_path: None,
            output_dir: None,
            base_seed: 0,
            prep: PrepConfig::default(),
            trial_type: TrialType::Single(GroupingSpec::all()),
            split: ClassSplit::c_vs_ds(),
            n_seeds: 10,
            decode: DecodeConfig::default(),
            cluster: ClusterConfig::default(),
            bootstrap: BootstrapConfig::default(),
            classifier: ClassifierSpec::default(),
            inference: InferenceConfig::default(),
            grid: tables::standard_grid(),
            tasks: vec![ClassSplit::c_vs_ds(), ClassSplit::d_vs_s()],
            transfer: TransferSection {
                train: ClassSplit::c_vs_d(),
                held_out: vec![Group::S],
            },
            ablate: AblateSection::RegionTime {
                time_ends_ms: default_time_ends(),
                regions: default_regions(),
            },
            behavioral: DecodeConfig::default(),
            correlate: CorrelateSection::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Derived seeds of one run; written back into the config echo.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub decode: Vec<u64>,
    pub inference: u64,
    pub behavioral: u64,
    pub correlate: u64,
}

impl RunConfig {
    /// Overwrites every component seed with one derived from `base_seed`.
    pub fn resolve_seeds(&mut self) -> Seeds {
        let base = self.base_seed;
        self.synth.rng_seed = base;
        self.cluster.rng_seed = rng::derive_seed(base, &[0xc1]);
        self.bootstrap.rng_seed = rng::derive_seed(base, &[0xb0]);
        Seeds {
            decode: (0..self.n_seeds as u64).map(|k| rng::derive_seed(base, &[0xde, k])).collect(),
            inference: rng::derive_seed(base, &[0x1f]),
            behavioral: rng::derive_seed(base, &[0xbe]),
            correlate: rng::derive_seed(base, &[0xc0]),
        }
    }
}

/// Sets `path` (dot-separated) inside `root`, creating objects on the way.
/// The value is parsed as JSON when possible and kept as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got '{assignment}'")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("--set: malformed key '{key}'")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("--set {key}: '{}' is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("non-empty key")
}

/// Config file (or defaults), then the preset, then `--set` assignments.
pub fn load(config: Option<&Path>, preset: Option<&str>, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut root = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !root.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    if let Some(name) = preset {
        let synth = SynthConfig::preset(name).ok_or_else(|| {
            CliError::Config(format!("unknown preset '{name}' (known: {})", SynthConfig::PRESETS.join(", ")))
        })?;
        root["synth"] = serde_json::to_value(synth).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    for s in sets {
        apply_override(&mut root, s)?;
    }
    serde_json::from_value(root).map_err(|e| CliError::Config(format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse() {
        let mut v = serde_json::json!({});
        apply_override(&mut v, "synth.n_trials=4").unwrap();
        apply_override(&mut v, "dataset_path=data/x").unwrap();
        apply_override(&mut v, "bootstrap.cv=\"loso\"").unwrap();
        assert_eq!(v["synth"]["n_trials"], 4);
        assert_eq!(v["dataset_path"], "data/x");
        assert_eq!(v["bootstrap"]["cv"], "loso");
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "a..b=1").is_err());
        assert!(apply_override(&mut v, "dataset_path.x=1").is_err());
    }

    #[test]
    fn unknown_fields_are_rejected_by_name() {
        let err = load(None, None, &["bootstrap.n_bots=3".into()]).unwrap_err();
        assert!(err.to_string().contains("n_bots"), "{err}");
        let err = load(None, Some("nope"), &[]).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn seeds_follow_base_seed() {
        let mut a = load(None, None, &["base_seed=7".into()]).unwrap();
        let sa = a.resolve_seeds();
        assert_eq!(a.synth.rng_seed, 7);
        assert_eq!(sa.decode.len(), 10);
        let mut b = RunConfig::default();
        assert_ne!(b.resolve_seeds(), sa);
        let echo = serde_json::to_value(&a).unwrap();
        assert!(echo.get("output_dir").is_none());
        let back: RunConfig = serde_json::from_value(echo).unwrap();
        assert_eq!(back, RunConfig { output_dir: None, ..a });
    }
}
