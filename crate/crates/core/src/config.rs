//! Experiment configuration files.
//!
//! A config is a JSON object. Unknown keys are rejected at every level.
//! Relative paths are resolved against the directory holding the config
//! file. Only the section of the task being run is read; the others may be
//! present so one file can drive a whole pipeline.
//!
//! ```json
//! {
//!   "seed": 1,
//!   "output_dir": "out",
//!   "make_data": {"toy": {"toy": "ring"}, "count": 4096,
//!                 "mechanism": {"mechanism": "dropout", "rate": 0.5}},
//!   "train": {"dataset": "out/data.bin", "train": {"total_steps": 2000}}
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::evaluation::{Baseline, FeatureMap};
use crate::imputer::ImputerConfig;
use crate::masking::MaskMechanism;
use crate::misgan::{ModelConfig, TrainConfig};
use crate::toy::Toy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("config is for task `{found}`, not `{requested}`")]
    TaskMismatch { requested: String, found: String },
    #[error("config has no `{0}` section")]
    MissingSection(&'static str),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Identify,
    Train,
    ImputeTrain,
    ImputeRun,
    Eval,
    MakeData,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Identify => "identify",
            Task::Train => "train",
            Task::ImputeTrain => "impute-train",
            Task::ImputeRun => "impute-run",
            Task::Eval => "eval",
            Task::MakeData => "make-data",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// If present, must match the task given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identify: Option<IdentifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub make_data: Option<MakeDataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainTaskConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impute_train: Option<ImputeTrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impute_run: Option<ImputeRunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
}

/// Exact analysis of a small discrete masking problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    pub alphabet: Vec<f64>,
    pub n: usize,
    /// Mask probabilities in lexicographic mask order (`2ⁿ` entries).
    pub q: Vec<f64>,
    /// Data distribution whose recoverability is decided (`|P|ⁿ` entries).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_star: Option<Vec<f64>>,
    /// Fill values to compare; defaults to every alphabet value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_list: Option<Vec<f64>>,
}

/// Source rows come from a toy (`toy` + `count`) or a complete data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MakeDataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<Toy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete_file: Option<PathBuf>,
    pub mechanism: MaskMechanism,
}

/// Toy and mechanism generating a dataset; enables exact TV metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvReferenceConfig {
    pub toy: Toy,
    pub mechanism: MaskMechanism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainTaskConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_reference: Option<TvReferenceConfig>,
    /// Continue from this checkpoint up to `train.total_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume_from: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

/// Joint mode trains MisGAN and the imputer together on `dataset`.
/// Stand-alone mode (`frozen_gx` set) trains only the imputer against a
/// frozen data generator, with masks drawn from `mechanism`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeTrainConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub imputer: ImputerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// When false only `G_x` and the imputer are updated (joint mode).
    #[serde(default = "yes")]
    pub mask_components: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_gx: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<MaskMechanism>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_reference: Option<TvReferenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume_from: Option<PathBuf>,
}

/// Completes every row of `dataset`, with a trained imputer from
/// `checkpoint` or with a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeRunConfig {
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Baseline>,
}

/// FID between `samples` (a complete file, or `sample_count` draws from the
/// generator in `checkpoint`) and `reference`. RMSE is added when `imputed`
/// and `ground_truth` are given, mask/data TV when `tv_reference` is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub reference: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    /// Defaults to the identity for data of at most 8 dimensions and to
    /// the default random projection otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_map: Option<FeatureMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imputed: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_reference: Option<TvReferenceConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.output_dir);
        if let Some(s) = &mut self.make_data {
            fix_opt(&mut s.complete_file);
        }
        if let Some(s) = &mut self.train {
            fix(&mut s.dataset);
            fix_opt(&mut s.resume_from);
        }
        if let Some(s) = &mut self.impute_train {
            fix_opt(&mut s.dataset);
            fix_opt(&mut s.frozen_gx);
            fix_opt(&mut s.resume_from);
        }
        if let Some(s) = &mut self.impute_run {
            fix(&mut s.dataset);
            fix_opt(&mut s.checkpoint);
        }
        if let Some(s) = &mut self.eval {
            fix(&mut s.reference);
            fix_opt(&mut s.samples);
            fix_opt(&mut s.checkpoint);
            fix_opt(&mut s.imputed);
            fix_opt(&mut s.ground_truth);
        }
    }

    pub fn check_task(&self, requested: Task) -> Result<(), ConfigError> {
        match self.task {
            Some(found) if found != requested => Err(ConfigError::TaskMismatch {
                requested: requested.name().into(),
                found: found.name().into(),
            }),
            _ => Ok(()),
        }
    }

    /// Input files the task will read; all must exist before anything runs.
    pub fn inputs(&self, task: Task) -> Result<Vec<PathBuf>, ConfigError> {
        let mut out = Vec::new();
        match task {
            Task::Identify => {
                self.section(&self.identify, "identify")?;
            }
            Task::MakeData => {
                let s = self.section(&self.make_data, "make_data")?;
                out.extend(s.complete_file.clone());
            }
            Task::Train => {
                let s = self.section(&self.train, "train")?;
                out.push(s.dataset.clone());
                out.extend(s.resume_from.clone());
            }
            Task::ImputeTrain => {
                let s = self.section(&self.impute_train, "impute_train")?;
                out.extend(s.dataset.clone());
                out.extend(s.frozen_gx.clone());
                out.extend(s.resume_from.clone());
            }
            Task::ImputeRun => {
                let s = self.section(&self.impute_run, "impute_run")?;
                out.push(s.dataset.clone());
                out.extend(s.checkpoint.clone());
            }
            Task::Eval => {
                let s = self.section(&self.eval, "eval")?;
                out.push(s.reference.clone());
                out.extend(s.samples.clone());
                out.extend(s.checkpoint.clone());
                out.extend(s.imputed.clone());
                out.extend(s.ground_truth.clone());
            }
        }
        Ok(out)
    }

    pub fn section<'a, T>(
        &self,
        s: &'a Option<T>,
        name: &'static str,
    ) -> Result<&'a T, ConfigError> {
        s.as_ref().ok_or(ConfigError::MissingSection(name))
    }

    /// Snapshot stored in checkpoints.
    pub fn snapshot(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
