//! Task dispatch for the `misgan-lab` binary.
//!
//! Every task reads one config section, checks that its inputs exist and
//! that it will not clobber earlier outputs, computes all artifacts in
//! memory and only then writes them. Each file is written to a temporary
//! name in the output directory and renamed into place, so a failed run
//! leaves no partial outputs behind.
//!
//! | task           | outputs                              |
//! |----------------|--------------------------------------|
//! | `identify`     | `identify_report.json`               |
//! | `make-data`    | `data.bin`, `ground_truth.bin`       |
//! | `train`        | `metrics.csv`, `checkpoint.json`     |
//! | `impute-train` | `metrics.csv`, `checkpoint.json`     |
//! | `impute-run`   | `imputed.bin`                        |
//! | `eval`         | `report.json`                        |

use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::config::{ConfigError, ExperimentConfig, IdentifyConfig, Task, TvReferenceConfig};
use crate::dataset::{
    make_incomplete_dataset, read_complete, write_complete, DatasetError, GroundTruth,
    IncompleteDataset,
};
use crate::evaluation::{
    baseline_impute, frechet_distance, rmse_imputation, FeatureMap, MetricReport,
    DEFAULT_PROJECTION_DIM,
};
use crate::identify::{
    augment_alphabet, build_transition, null_space, nullspace_residual, unique_nonneg_solution,
    Alphabet, DiscreteDistribution, MaskDistribution, Uniqueness, DEFAULT_NULL_TOL,
};
use crate::imputer::{ImputerModel, StandaloneTrainer};
use crate::misgan::{metrics_csv, normal_tensor, MisganModel, TrainConfig, Trainer, TvReference};
use crate::rng::{stream, Stream};

/// Largest residual at which two null spaces are reported as equal.
pub const NULLSPACE_MATCH_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input file {0} does not exist")]
    MissingInput(PathBuf),
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("{context}: {source}")]
    Runtime {
        context: String,
        source: Box<dyn StdError + Send + Sync>,
    },
}

impl RunError {
    /// 1 for usage and configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Runtime { .. } => 2,
            _ => 1,
        }
    }
}

fn invalid(msg: impl Into<String>) -> RunError {
    RunError::Config(ConfigError::Invalid(msg.into()))
}

trait Context<T> {
    fn context(self, what: &str) -> Result<T, RunError>;
}

impl<T, E: StdError + Send + Sync + 'static> Context<T> for Result<T, E> {
    fn context(self, what: &str) -> Result<T, RunError> {
        self.map_err(|e| RunError::Runtime {
            context: what.to_string(),
            source: Box::new(e),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    /// Replaces the config's seed.
    pub seed: Option<u64>,
    /// Checkpoint whose `G_x` is frozen for stand-alone imputer training.
    pub frozen_gx: Option<PathBuf>,
}

enum Artifact {
    Text(String),
    Incomplete(IncompleteDataset),
    Truth(GroundTruth),
    Complete(Vec<Vec<f64>>),
}

impl Artifact {
    fn write(&self, path: &Path) -> Result<(), RunError> {
        match self {
            Artifact::Text(s) => fs::write(path, s).context("writing output"),
            Artifact::Incomplete(d) => d.write(path).context("writing dataset"),
            Artifact::Truth(t) => t.write(path).context("writing ground truth"),
            Artifact::Complete(rows) => write_complete(path, rows).context("writing rows"),
        }
    }
}

fn output_names(task: Task) -> &'static [&'static str] {
    match task {
        Task::Identify => &["identify_report.json"],
        Task::MakeData => &["data.bin", "ground_truth.bin"],
        Task::Train | Task::ImputeTrain => &["metrics.csv", "checkpoint.json"],
        Task::ImputeRun => &["imputed.bin"],
        Task::Eval => &["report.json"],
    }
}

/// Runs `task` from the config file at `config_path` and returns the paths
/// written.
pub fn run_file(
    task: Task,
    config_path: &Path,
    opts: &RunOptions,
) -> Result<Vec<PathBuf>, RunError> {
    let cfg = ExperimentConfig::load(config_path)?;
    run(task, cfg, opts)
}

pub fn run(
    task: Task,
    mut cfg: ExperimentConfig,
    opts: &RunOptions,
) -> Result<Vec<PathBuf>, RunError> {
    cfg.check_task(task)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(ck) = &opts.frozen_gx {
        let s = cfg
            .impute_train
            .as_mut()
            .ok_or(ConfigError::MissingSection("impute_train"))?;
        s.frozen_gx = Some(ck.clone());
    }
    for input in cfg.inputs(task)? {
        if !input.is_file() {
            return Err(RunError::MissingInput(input));
        }
    }
    let targets: Vec<PathBuf> = output_names(task)
        .iter()
        .map(|n| cfg.output_dir.join(n))
        .collect();
    if !opts.force {
        if let Some(t) = targets.iter().find(|t| t.exists()) {
            return Err(RunError::Exists(t.clone()));
        }
    }
    validate(task, &cfg)?;

    let artifacts = match task {
        Task::Identify => identify(cfg.section(&cfg.identify, "identify")?)?,
        Task::MakeData => make_data(&cfg)?,
        Task::Train => train(&cfg)?,
        Task::ImputeTrain => impute_train(&cfg)?,
        Task::ImputeRun => impute_run(&cfg)?,
        Task::Eval => eval(&cfg)?,
    };
    commit(&cfg.output_dir, &targets, &artifacts)?;
    Ok(targets)
}

fn commit(dir: &Path, targets: &[PathBuf], artifacts: &[Artifact]) -> Result<(), RunError> {
    fs::create_dir_all(dir).context("creating output directory")?;
    let temps: Vec<PathBuf> = targets
        .iter()
        .map(|t| {
            let name = t
                .file_name()
                .expect("output has a file name")
                .to_string_lossy();
            dir.join(format!(".{name}.partial"))
        })
        .collect();
    let cleanup = |temps: &[PathBuf]| {
        for t in temps {
            let _ = fs::remove_file(t);
        }
    };
    for (a, tmp) in artifacts.iter().zip(&temps) {
        if let Err(e) = a.write(tmp) {
            cleanup(&temps);
            return Err(e);
        }
    }
    for (tmp, target) in temps.iter().zip(targets) {
        if let Err(e) = fs::rename(tmp, target) {
            cleanup(&temps);
            return Err(e).context("moving output into place");
        }
    }
    Ok(())
}

fn validate_train(cfg: &TrainConfig) -> Result<(), RunError> {
    cfg.validate().map_err(|e| invalid(e.to_string()))
}

fn validate_reference(r: &Option<TvReferenceConfig>) -> Result<(), RunError> {
    if let Some(r) = r {
        r.toy.validate().map_err(|e| invalid(e.to_string()))?;
        r.mechanism
            .exact_distribution(r.toy.dim())
            .map_err(|e| invalid(format!("tv_reference: {e}")))?;
    }
    Ok(())
}

/// Range and consistency checks that need no input files.
fn validate(task: Task, cfg: &ExperimentConfig) -> Result<(), RunError> {
    match task {
        Task::Identify => {
            let s = cfg.section(&cfg.identify, "identify")?;
            let alphabet = Alphabet::new(&s.alphabet, s.n).map_err(|e| invalid(e.to_string()))?;
            MaskDistribution::new(s.n, s.q.clone()).map_err(|e| invalid(e.to_string()))?;
            if let Some(p) = &s.p_star {
                DiscreteDistribution::new(&alphabet, p.clone())
                    .map_err(|e| invalid(e.to_string()))?;
            }
            if let Some(taus) = &s.tau_list {
                if taus.is_empty() {
                    return Err(invalid("tau_list is empty"));
                }
                if let Some(t) = taus.iter().find(|t| alphabet.position(**t).is_none()) {
                    return Err(invalid(format!("tau {t} is not in the alphabet")));
                }
            }
        }
        Task::MakeData => {
            let s = cfg.section(&cfg.make_data, "make_data")?;
            match (&s.toy, s.count, &s.complete_file) {
                (Some(toy), Some(count), None) => {
                    toy.validate().map_err(|e| invalid(e.to_string()))?;
                    if count == 0 {
                        return Err(invalid("count must be positive"));
                    }
                    s.mechanism
                        .validate(toy.dim())
                        .map_err(|e| invalid(e.to_string()))?;
                }
                (None, None, Some(_)) => {}
                _ => {
                    return Err(invalid(
                        "make_data needs either `toy` with `count`, or `complete_file`",
                    ))
                }
            }
        }
        Task::Train => {
            let s = cfg.section(&cfg.train, "train")?;
            s.model.validate().map_err(|e| invalid(e.to_string()))?;
            validate_train(&s.train)?;
            validate_reference(&s.tv_reference)?;
        }
        Task::ImputeTrain => {
            let s = cfg.section(&cfg.impute_train, "impute_train")?;
            validate_train(&s.train)?;
            validate_reference(&s.tv_reference)?;
            if s.imputer.beta < 0.0 || !s.imputer.beta.is_finite() {
                return Err(invalid("imputer.beta must be non-negative"));
            }
            if s.resume_from.is_none() {
                if s.frozen_gx.is_some() {
                    if s.mechanism.is_none() {
                        return Err(invalid("stand-alone imputer training needs `mechanism`"));
                    }
                } else {
                    s.model.validate().map_err(|e| invalid(e.to_string()))?;
                    if s.dataset.is_none() {
                        return Err(invalid("joint imputer training needs `dataset`"));
                    }
                }
            }
        }
        Task::ImputeRun => {
            let s = cfg.section(&cfg.impute_run, "impute_run")?;
            if s.checkpoint.is_some() == s.baseline.is_some() {
                return Err(invalid(
                    "impute_run needs exactly one of `checkpoint` and `baseline`",
                ));
            }
        }
        Task::Eval => {
            let s = cfg.section(&cfg.eval, "eval")?;
            if s.samples.is_some() == s.checkpoint.is_some() {
                return Err(invalid(
                    "eval needs exactly one of `samples` and `checkpoint`",
                ));
            }
            if s.sample_count == Some(0) {
                return Err(invalid("sample_count must be positive"));
            }
            if s.imputed.is_some() != s.ground_truth.is_some() {
                return Err(invalid("`imputed` and `ground_truth` go together"));
            }
            if s.tv_reference.is_some() && s.checkpoint.is_none() {
                return Err(invalid("`tv_reference` needs a `checkpoint`"));
            }
            validate_reference(&s.tv_reference)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct UniquenessReport {
    unique: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    solution: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coordinate: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness_a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness_b: Option<Vec<f64>>,
}

impl From<Uniqueness> for UniquenessReport {
    fn from(u: Uniqueness) -> Self {
        match u {
            Uniqueness::Unique(p) => Self {
                unique: true,
                solution: Some(p),
                coordinate: None,
                spread: None,
                witness_a: None,
                witness_b: None,
            },
            Uniqueness::NonUnique {
                witness_a,
                witness_b,
                coordinate,
                spread,
            } => Self {
                unique: false,
                solution: None,
                coordinate: Some(coordinate),
                spread: Some(spread),
                witness_a: Some(witness_a),
                witness_b: Some(witness_b),
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct TauReport {
    tau: f64,
    nullspace_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    uniqueness: Option<UniquenessReport>,
}

#[derive(Debug, Serialize)]
struct IdentifyReport {
    n: usize,
    alphabet: Vec<f64>,
    q: Vec<f64>,
    /// Null-space dimension at the first fill value.
    nullspace_dim: usize,
    tau_invariance: bool,
    max_nullspace_residual: f64,
    per_tau: Vec<TauReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    augmented_uniqueness: Option<UniquenessReport>,
}

fn identify(s: &IdentifyConfig) -> Result<Vec<Artifact>, RunError> {
    let alphabet = Alphabet::new(&s.alphabet, s.n).context("alphabet")?;
    let q = MaskDistribution::new(s.n, s.q.clone()).context("mask distribution")?;
    let taus = s.tau_list.clone().unwrap_or_else(|| s.alphabet.clone());
    let transitions = taus
        .iter()
        .map(|&tau| build_transition(&q, &alphabet, tau))
        .collect::<Result<Vec<_>, _>>()
        .context("building transition matrices")?;
    let first = transitions[0].entries();
    let max_residual = transitions
        .iter()
        .map(|t| nullspace_residual(first, t.entries(), DEFAULT_NULL_TOL))
        .fold(0.0, f64::max);
    let mut per_tau = Vec::new();
    for (&tau, t) in taus.iter().zip(&transitions) {
        let uniqueness = match &s.p_star {
            Some(p) => {
                let y = t.apply(p).context("applying transition")?;
                Some(
                    unique_nonneg_solution(t.entries(), &y)
                        .context("uniqueness LP")?
                        .into(),
                )
            }
            None => None,
        };
        per_tau.push(TauReport {
            tau,
            nullspace_dim: null_space(t.entries(), DEFAULT_NULL_TOL).len(),
            uniqueness,
        });
    }
    let augmented_uniqueness = match &s.p_star {
        Some(p) => Some(
            augment_alphabet(&q, &alphabet)
                .and_then(|a| a.uniqueness(p))
                .context("augmented uniqueness LP")?
                .into(),
        ),
        None => None,
    };
    let report = IdentifyReport {
        n: s.n,
        alphabet: s.alphabet.clone(),
        q: s.q.clone(),
        nullspace_dim: per_tau[0].nullspace_dim,
        tau_invariance: max_residual <= NULLSPACE_MATCH_TOL,
        max_nullspace_residual: max_residual,
        per_tau,
        augmented_uniqueness,
    };
    Ok(vec![Artifact::Text(to_json(&report))])
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn make_data(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, RunError> {
    let s = cfg.section(&cfg.make_data, "make_data")?;
    let rows = match (&s.toy, s.count, &s.complete_file) {
        (Some(toy), Some(count), _) => toy
            .sample(&mut stream(cfg.seed, Stream::Data), count)
            .context("sampling toy")?,
        (_, _, Some(path)) => read_complete(path).context("reading complete data")?,
        _ => unreachable!("checked by validate"),
    };
    let (data, truth) =
        make_incomplete_dataset(&rows, &s.mechanism, &mut stream(cfg.seed, Stream::Mask))
            .context("masking rows")?;
    Ok(vec![Artifact::Incomplete(data), Artifact::Truth(truth)])
}

fn with_seed(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..train.clone()
    }
}

fn tv_reference(r: &Option<TvReferenceConfig>, tau: f64) -> Result<Option<TvReference>, RunError> {
    r.as_ref()
        .map(|r| TvReference::new(&r.toy, &r.mechanism, tau))
        .transpose()
        .context("building TV reference")
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, RunError> {
    Checkpoint::load(path).context(&format!("loading checkpoint {}", path.display()))
}

fn train(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, RunError> {
    let s = cfg.section(&cfg.train, "train")?;
    let data = IncompleteDataset::read(&s.dataset).context("reading dataset")?;
    let mut trainer = match &s.resume_from {
        Some(path) => {
            let mut t = load_checkpoint(path)?
                .resume_trainer()
                .context("restoring trainer")?;
            if t.imputer.is_some() {
                return Err(invalid(
                    "resume_from holds a joint imputer run; use impute-train",
                ));
            }
            t.cfg.total_steps = s.train.total_steps;
            t
        }
        None => {
            let model = MisganModel::new(data.dim(), &s.model, &mut stream(cfg.seed, Stream::Init))
                .context("building model")?;
            Trainer::new(model, with_seed(&s.train, cfg.seed)).context("building trainer")?
        }
    };
    let reference = tv_reference(&s.tv_reference, trainer.model.tau)?;
    let rows = trainer
        .run(&data, reference.as_ref(), s.train.total_steps)
        .context("training")?;
    Ok(vec![
        Artifact::Text(metrics_csv(&rows, false)),
        Artifact::Text(Checkpoint::from_trainer(&trainer, cfg.snapshot()).to_json()),
    ])
}

fn impute_train(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, RunError> {
    let s = cfg.section(&cfg.impute_train, "impute_train")?;
    let resumed = s.resume_from.as_deref().map(load_checkpoint).transpose()?;
    let standalone = match &resumed {
        Some(ck) => ck.kind == ModelKind::Imputer,
        None => s.frozen_gx.is_some(),
    };
    if standalone {
        let mut t = match resumed {
            Some(ck) => ck
                .resume_standalone()
                .context("restoring imputer trainer")?,
            None => {
                let gx_path = s.frozen_gx.as_deref().expect("stand-alone mode");
                let g_x = load_checkpoint(gx_path)?
                    .data_generator()
                    .context("reading G_x")?;
                let mechanism = s.mechanism.clone().expect("checked by validate");
                let imp = ImputerModel::new(
                    g_x.output_dim(),
                    &s.imputer,
                    &mut stream(cfg.seed, Stream::Init),
                )
                .context("building imputer")?;
                StandaloneTrainer::new(imp, g_x, mechanism, with_seed(&s.train, cfg.seed))
                    .context("building imputer trainer")?
            }
        };
        t.cfg.total_steps = s.train.total_steps;
        let rows = t.run(s.train.total_steps).context("training imputer")?;
        return Ok(vec![
            Artifact::Text(metrics_csv(&rows, true)),
            Artifact::Text(Checkpoint::from_standalone(&t, cfg.snapshot()).to_json()),
        ]);
    }

    let dataset = s
        .dataset
        .as_deref()
        .ok_or_else(|| invalid("joint imputer training needs `dataset`"))?;
    let data = IncompleteDataset::read(dataset).context("reading dataset")?;
    let mut trainer = match resumed {
        Some(ck) => {
            let mut t = ck.resume_trainer().context("restoring trainer")?;
            if t.imputer.is_none() {
                return Err(invalid("resume_from holds a checkpoint without an imputer"));
            }
            t.cfg.total_steps = s.train.total_steps;
            t
        }
        None => {
            let mut init = stream(cfg.seed, Stream::Init);
            let model =
                MisganModel::new(data.dim(), &s.model, &mut init).context("building model")?;
            let imp =
                ImputerModel::new(data.dim(), &s.imputer, &mut init).context("building imputer")?;
            Trainer::new(model, with_seed(&s.train, cfg.seed))
                .and_then(|t| t.with_imputer(imp, s.mask_components))
                .context("building trainer")?
        }
    };
    let reference = tv_reference(&s.tv_reference, trainer.model.tau)?;
    let rows = trainer
        .run(&data, reference.as_ref(), s.train.total_steps)
        .context("training")?;
    Ok(vec![
        Artifact::Text(metrics_csv(&rows, true)),
        Artifact::Text(Checkpoint::from_trainer(&trainer, cfg.snapshot()).to_json()),
    ])
}

fn impute_run(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, RunError> {
    let s = cfg.section(&cfg.impute_run, "impute_run")?;
    let data = IncompleteDataset::read(&s.dataset).context("reading dataset")?;
    let rows = if let Some(kind) = s.baseline {
        baseline_impute(&data, kind).context("baseline imputation")?
    } else {
        let path = s.checkpoint.as_deref().expect("checked by validate");
        let imp = load_checkpoint(path)?
            .imputer_model()
            .context("reading imputer")?
            .ok_or_else(|| RunError::Runtime {
                context: format!("checkpoint {}", path.display()),
                source: "it holds no imputer".into(),
            })?;
        let all: Vec<usize> = (0..data.len()).collect();
        let (x, m) = data.batch(&all);
        let omega = normal_tensor(&mut stream(cfg.seed, Stream::Omega), data.len(), data.dim());
        let out = imp.impute_batch(&x, &m, &omega).context("imputing")?;
        (0..data.len()).map(|i| out.row(i).to_vec()).collect()
    };
    Ok(vec![Artifact::Complete(rows)])
}

/// Rows of a complete or ground-truth file.
fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>, RunError> {
    match read_complete(path) {
        Err(DatasetError::WrongKind { found, .. }) if found == "ground_truth" => {
            Ok(GroundTruth::read(path).context("reading rows")?.rows)
        }
        other => other.context(&format!("reading {}", path.display())),
    }
}

fn eval(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, RunError> {
    let s = cfg.section(&cfg.eval, "eval")?;
    let reference = read_rows(&s.reference)?;
    let mut rng = stream(cfg.seed, Stream::Eval);
    let mut report = MetricReport {
        fid: 0.0,
        rmse: None,
        tv_mask: None,
        tv_data: None,
        sample_counts: [0, reference.len()],
    };
    let samples = match (&s.samples, &s.checkpoint) {
        (Some(path), _) => read_rows(path)?,
        (None, Some(path)) => {
            let ck = load_checkpoint(path)?;
            let g_x = ck.data_generator().context("reading G_x")?;
            let count = s.sample_count.unwrap_or(reference.len());
            let z = normal_tensor(&mut rng, count, g_x.input_dim());
            let xs = g_x.apply(&z).context("sampling G_x")?;
            if s.tv_reference.is_some() {
                let model = ck.misgan_model().context("reading model")?;
                if let Some(r) = tv_reference(&s.tv_reference, model.tau)? {
                    let (tv_mask, tv_data) =
                        r.evaluate(&model, &mut rng, count).context("TV metrics")?;
                    report.tv_mask = Some(tv_mask);
                    report.tv_data = Some(tv_data);
                }
            }
            (0..count).map(|i| xs.row(i).to_vec()).collect()
        }
        (None, None) => unreachable!("checked by validate"),
    };
    report.sample_counts[0] = samples.len();
    let fmap = s.feature_map.unwrap_or(match reference.first() {
        Some(r) if r.len() <= DEFAULT_PROJECTION_DIM => FeatureMap::Identity,
        _ => FeatureMap::default(),
    });
    report.fid = frechet_distance(&samples, &reference, &fmap).context("FID")?;
    if let (Some(imputed), Some(truth)) = (&s.imputed, &s.ground_truth) {
        let imputed = read_complete(imputed).context("reading imputed rows")?;
        let truth = GroundTruth::read(truth).context("reading ground truth")?;
        report.rmse = Some(rmse_imputation(&imputed, &truth.rows, &truth.masks).context("RMSE")?);
    }
    Ok(vec![Artifact::Text(to_json(&report))])
}
