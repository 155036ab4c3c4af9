//! Checkpoint files.
//!
//! A checkpoint is a pretty-printed JSON object. Every parameter array and
//! optimizer buffer is stored as the standard padded base64 encoding of its
//! `f64` values in little-endian byte order, together with its shape.
//! Scalars are plain JSON numbers (written and parsed with exact
//! round-tripping). Random streams are stored as `(stream, word position)`
//! pairs relative to the run seed.
//!
//! Top-level sections: `format`, `version`, `byte_order`, `kind`, `seed`,
//! `step`, `hyper`, `train`, `config`, `networks`, `optimizers`, `rng` and,
//! for stand-alone imputers, `mechanism`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::imputer::{ImputerModel, JointImputer, StandaloneTrainer};
use crate::masking::MaskMechanism;
use crate::misgan::{MisganModel, Optimizers, Streams, TrainConfig, TrainError, Trainer};
use crate::nn::{Activation, Layer, Network, RmsProp};
use crate::rng::StreamState;
use crate::tensor::Tensor;

pub const FORMAT: &str = "misgan-lab-checkpoint";
pub const VERSION: u32 = 1;
const BYTE_ORDER: &str = "f64 little-endian, base64";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("checkpoint is not valid JSON: {0}")]
    Json(String),
    #[error("section `{section}` is corrupt: {reason}")]
    Section { section: String, reason: String },
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u64 },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    Kind {
        expected: &'static str,
        found: String,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
}

fn section(name: impl Into<String>, reason: impl ToString) -> CheckpointError {
    CheckpointError::Section {
        section: name.into(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayRecord {
    shape: Vec<usize>,
    data: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(s: &str, expected: usize) -> Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() != expected * 8 {
        return Err(format!(
            "expected {} bytes, found {}",
            expected * 8,
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl ArrayRecord {
    fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: encode(t.data()),
        }
    }

    fn to_tensor(&self) -> Result<Tensor, String> {
        let len = self.shape.iter().product();
        Tensor::new(self.shape.clone(), decode(&self.data, len)?).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    weight: ArrayRecord,
    bias: ArrayRecord,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkRecord {
    layers: Vec<LayerRecord>,
}

impl NetworkRecord {
    fn from_network(net: &Network) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    weight: ArrayRecord::from_tensor(&l.weight),
                    bias: ArrayRecord::from_tensor(&l.bias),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    fn to_network(&self) -> Result<Network, String> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    weight: l.weight.to_tensor()?,
                    bias: l.bias.to_tensor()?,
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Network::from_layers(layers).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerRecord {
    learning_rate: f64,
    decay: f64,
    eps: f64,
    square_avg: Vec<ArrayRecord>,
}

impl OptimizerRecord {
    fn from_rmsprop(o: &RmsProp) -> Self {
        Self {
            learning_rate: o.learning_rate,
            decay: o.decay,
            eps: o.eps,
            square_avg: o
                .square_avg
                .iter()
                .map(|v| ArrayRecord {
                    shape: vec![v.len()],
                    data: encode(v),
                })
                .collect(),
        }
    }

    fn to_rmsprop(&self, net: &Network) -> Result<RmsProp, String> {
        let sizes: Vec<usize> = net.params().map(Tensor::len).collect();
        if sizes.len() != self.square_avg.len() {
            return Err(format!(
                "{} buffers for {} parameters",
                self.square_avg.len(),
                sizes.len()
            ));
        }
        let square_avg = self
            .square_avg
            .iter()
            .zip(sizes)
            .map(|(a, len)| decode(&a.data, len))
            .collect::<Result<_, _>>()?;
        Ok(RmsProp {
            learning_rate: self.learning_rate,
            decay: self.decay,
            eps: self.eps,
            square_avg,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// MisGAN, optionally with a jointly trained imputer.
    Misgan,
    /// Imputer trained against a frozen data generator.
    Imputer,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Misgan => "misgan",
            ModelKind::Imputer => "imputer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub tau: f64,
    pub temperature: f64,
    pub alpha: f64,
    pub noise_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_components: Option<bool>,
}

/// In-memory form of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub seed: u64,
    pub step: usize,
    pub hyper: Hyper,
    pub train: TrainConfig,
    /// Snapshot of the experiment configuration that produced the run.
    pub config: Value,
    networks: BTreeMap<String, NetworkRecord>,
    optimizers: BTreeMap<String, OptimizerRecord>,
    pub rng: Vec<StreamState>,
    pub mechanism: Option<MaskMechanism>,
}

#[derive(Serialize)]
struct FileRef<'a> {
    format: &'static str,
    version: u32,
    byte_order: &'static str,
    kind: ModelKind,
    seed: u64,
    step: usize,
    hyper: &'a Hyper,
    train: &'a TrainConfig,
    config: &'a Value,
    networks: &'a BTreeMap<String, NetworkRecord>,
    optimizers: &'a BTreeMap<String, OptimizerRecord>,
    rng: &'a [StreamState],
    #[serde(skip_serializing_if = "Option::is_none")]
    mechanism: Option<&'a MaskMechanism>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, config: Value) -> Self {
        let m = &t.model;
        let mut networks = BTreeMap::new();
        let mut optimizers = BTreeMap::new();
        for (name, net, opt) in [
            ("g_x", &m.g_x, &t.opt.g_x),
            ("g_m", &m.g_m, &t.opt.g_m),
            ("d_x", &m.d_x, &t.opt.d_x),
            ("d_m", &m.d_m, &t.opt.d_m),
        ] {
            networks.insert(name.to_string(), NetworkRecord::from_network(net));
            optimizers.insert(name.to_string(), OptimizerRecord::from_rmsprop(opt));
        }
        if let Some(imp) = &t.imputer {
            insert_imputer(&mut networks, &mut optimizers, imp);
        }
        Self {
            kind: ModelKind::Misgan,
            seed: t.cfg.seed,
            step: t.step,
            hyper: Hyper {
                tau: m.tau,
                temperature: m.temperature,
                alpha: m.alpha,
                noise_dim: m.noise_dim,
                beta: t.imputer.as_ref().map(|i| i.model.beta),
                mask_components: t.imputer.as_ref().map(|i| i.mask_components),
            },
            train: t.cfg.clone(),
            config,
            networks,
            optimizers,
            rng: t.streams.capture(),
            mechanism: None,
        }
    }

    pub fn from_standalone(t: &StandaloneTrainer, config: Value) -> Self {
        let mut networks = BTreeMap::new();
        let mut optimizers = BTreeMap::new();
        networks.insert("g_x".to_string(), NetworkRecord::from_network(&t.g_x));
        insert_imputer(&mut networks, &mut optimizers, &t.imputer);
        Self {
            kind: ModelKind::Imputer,
            seed: t.cfg.seed,
            step: t.step,
            hyper: Hyper {
                tau: 0.0,
                temperature: 0.0,
                alpha: 0.0,
                noise_dim: t.g_x.input_dim(),
                beta: Some(t.imputer.model.beta),
                mask_components: None,
            },
            train: t.cfg.clone(),
            config,
            networks,
            optimizers,
            rng: t.streams.capture(),
            mechanism: Some(t.mechanism.clone()),
        }
    }

    fn network(&self, name: &str) -> Result<Network, CheckpointError> {
        self.networks
            .get(name)
            .ok_or_else(|| section(format!("networks.{name}"), "missing"))?
            .to_network()
            .map_err(|e| section(format!("networks.{name}"), e))
    }

    fn optimizer(&self, name: &str, net: &Network) -> Result<RmsProp, CheckpointError> {
        self.optimizers
            .get(name)
            .ok_or_else(|| section(format!("optimizers.{name}"), "missing"))?
            .to_rmsprop(net)
            .map_err(|e| section(format!("optimizers.{name}"), e))
    }

    fn expect_kind(&self, expected: ModelKind) -> Result<(), CheckpointError> {
        if self.kind != expected {
            return Err(CheckpointError::Kind {
                expected: expected.name(),
                found: self.kind.name().into(),
            });
        }
        Ok(())
    }

    /// The frozen data generator `G_x` of either kind of checkpoint.
    pub fn data_generator(&self) -> Result<Network, CheckpointError> {
        self.network("g_x")
    }

    pub fn misgan_model(&self) -> Result<MisganModel, CheckpointError> {
        self.expect_kind(ModelKind::Misgan)?;
        Ok(MisganModel {
            g_x: self.network("g_x")?,
            g_m: self.network("g_m")?,
            d_x: self.network("d_x")?,
            d_m: self.network("d_m")?,
            tau: self.hyper.tau,
            temperature: self.hyper.temperature,
            alpha: self.hyper.alpha,
            noise_dim: self.hyper.noise_dim,
        })
    }

    /// The imputer of a joint or stand-alone checkpoint, if any.
    pub fn imputer_model(&self) -> Result<Option<ImputerModel>, CheckpointError> {
        if !self.networks.contains_key("g_i_hat") {
            return Ok(None);
        }
        let beta = self
            .hyper
            .beta
            .ok_or_else(|| section("hyper", "imputer without beta"))?;
        Ok(Some(ImputerModel {
            g_i_hat: self.network("g_i_hat")?,
            d_i: self.network("d_i")?,
            beta,
        }))
    }

    fn joint_imputer(&self) -> Result<Option<JointImputer>, CheckpointError> {
        let Some(model) = self.imputer_model()? else {
            return Ok(None);
        };
        Ok(Some(JointImputer {
            opt_g: self.optimizer("g_i_hat", &model.g_i_hat)?,
            opt_d: self.optimizer("d_i", &model.d_i)?,
            mask_components: self.hyper.mask_components.unwrap_or(true),
            model,
        }))
    }

    /// Rebuilds a trainer positioned exactly where the checkpoint was taken.
    pub fn resume_trainer(&self) -> Result<Trainer, CheckpointError> {
        let model = self.misgan_model()?;
        let opt = Optimizers {
            g_x: self.optimizer("g_x", &model.g_x)?,
            g_m: self.optimizer("g_m", &model.g_m)?,
            d_x: self.optimizer("d_x", &model.d_x)?,
            d_m: self.optimizer("d_m", &model.d_m)?,
        };
        let streams = Streams::restore(self.seed, &self.rng).map_err(|e| section("rng", e))?;
        Ok(Trainer {
            imputer: self.joint_imputer()?,
            model,
            cfg: self.train.clone(),
            opt,
            streams,
            step: self.step,
        })
    }

    pub fn resume_standalone(&self) -> Result<StandaloneTrainer, CheckpointError> {
        self.expect_kind(ModelKind::Imputer)?;
        let imputer = self
            .joint_imputer()?
            .ok_or_else(|| section("networks", "no imputer"))?;
        let mechanism = self
            .mechanism
            .clone()
            .ok_or_else(|| section("mechanism", "missing"))?;
        Ok(StandaloneTrainer {
            imputer,
            g_x: self.network("g_x")?,
            mechanism,
            cfg: self.train.clone(),
            streams: Streams::restore(self.seed, &self.rng).map_err(|e| section("rng", e))?,
            step: self.step,
        })
    }

    pub fn to_json(&self) -> String {
        let file = FileRef {
            format: FORMAT,
            version: VERSION,
            byte_order: BYTE_ORDER,
            kind: self.kind,
            seed: self.seed,
            step: self.step,
            hyper: &self.hyper,
            train: &self.train,
            config: &self.config,
            networks: &self.networks,
            optimizers: &self.optimizers,
            rng: &self.rng,
            mechanism: self.mechanism.as_ref(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let root: Value =
            serde_json::from_str(text).map_err(|e| CheckpointError::Json(e.to_string()))?;
        let obj = root
            .as_object()
            .ok_or_else(|| section("root", "not an object"))?;
        const KNOWN: [&str; 13] = [
            "format",
            "version",
            "byte_order",
            "kind",
            "seed",
            "step",
            "hyper",
            "train",
            "config",
            "networks",
            "optimizers",
            "rng",
            "mechanism",
        ];
        if let Some(k) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(section(k.as_str(), "unknown section"));
        }
        fn field<T: DeserializeOwned>(
            obj: &serde_json::Map<String, Value>,
            name: &str,
        ) -> Result<T, CheckpointError> {
            let v = obj.get(name).ok_or_else(|| section(name, "missing"))?;
            serde_json::from_value(v.clone()).map_err(|e| section(name, e))
        }
        if field::<String>(obj, "format")? != FORMAT {
            return Err(section("format", "not a misgan-lab checkpoint"));
        }
        let version: u64 = field(obj, "version")?;
        if version != u64::from(VERSION) {
            return Err(CheckpointError::Version { found: version });
        }
        if field::<String>(obj, "byte_order")? != BYTE_ORDER {
            return Err(section("byte_order", "unsupported byte order"));
        }
        let mechanism = match obj.get("mechanism") {
            Some(v) => {
                Some(serde_json::from_value(v.clone()).map_err(|e| section("mechanism", e))?)
            }
            None => None,
        };
        let mut ck = Self {
            kind: field(obj, "kind")?,
            seed: field(obj, "seed")?,
            step: field(obj, "step")?,
            hyper: field(obj, "hyper")?,
            train: field(obj, "train")?,
            config: field(obj, "config")?,
            networks: field(obj, "networks")?,
            optimizers: field(obj, "optimizers")?,
            rng: field(obj, "rng")?,
            mechanism,
        };
        ck.train.seed = ck.seed;
        // Decode every array now so corruption is reported at load time.
        for name in ck.networks.keys() {
            let net = ck.network(name)?;
            if ck.optimizers.contains_key(name) {
                ck.optimizer(name, &net)?;
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

fn insert_imputer(
    networks: &mut BTreeMap<String, NetworkRecord>,
    optimizers: &mut BTreeMap<String, OptimizerRecord>,
    imp: &JointImputer,
) {
    networks.insert(
        "g_i_hat".into(),
        NetworkRecord::from_network(&imp.model.g_i_hat),
    );
    networks.insert("d_i".into(), NetworkRecord::from_network(&imp.model.d_i));
    optimizers.insert("g_i_hat".into(), OptimizerRecord::from_rmsprop(&imp.opt_g));
    optimizers.insert("d_i".into(), OptimizerRecord::from_rmsprop(&imp.opt_d));
}
