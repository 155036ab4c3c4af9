//! MisGAN: a mask generator/critic pair and a data generator/critic pair
//! trained on incomplete data with Wasserstein losses and weight clipping.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, GraphError, NodeId};
use crate::dataset::IncompleteDataset;
use crate::evaluation::{tv_distance_keyed, EvalError};
use crate::imputer::{ImputerModel, JointImputer};
use crate::masking::{Mask, MaskError, MaskMechanism};
use crate::nn::{axpy, Activation, BoundNetwork, Network, NetworkError, RmsProp};
use crate::rng::{standard_normal, stream, Rng, Stream, StreamState};
use crate::tensor::{Tensor, TensorError};
use crate::toy::{MaskedClassifier, Toy, ToyError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {loss} at step {step}")]
    NonFinite { step: usize, loss: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("data dimension {got} does not match model dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("bad stream state: {0}")]
    Stream(#[from] std::num::ParseIntError),
}

/// Output activation of a data-space network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataActivation {
    /// Unbounded outputs.
    #[default]
    Identity,
    /// Outputs in `(0, 1)`.
    Sigmoid,
}

impl From<DataActivation> for Activation {
    fn from(a: DataActivation) -> Self {
        match a {
            DataActivation::Identity => Activation::Identity,
            DataActivation::Sigmoid => Activation::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub alpha: f64,
    pub temperature: f64,
    pub tau: f64,
    pub data_activation: DataActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            noise_dim: 16,
            generator_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            alpha: 0.2,
            temperature: 0.66,
            tau: 0.0,
            data_activation: DataActivation::Identity,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.noise_dim == 0 {
            return bad("noise_dim must be positive".into());
        }
        if self
            .generator_hidden
            .iter()
            .chain(&self.critic_hidden)
            .any(|&h| h == 0)
        {
            return bad("hidden widths must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!(
                "alpha must be a non-negative number, got {}",
                self.alpha
            ));
        }
        if !(self.temperature > 0.0 && self.temperature < 1.0) {
            return bad(format!(
                "temperature must lie in (0, 1), got {}",
                self.temperature
            ));
        }
        if !self.tau.is_finite() {
            return bad("tau must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_critic: usize,
    pub learning_rate: f64,
    pub clip_c: f64,
    /// Number of generator steps.
    pub total_steps: usize,
    /// Run seed. Set from the experiment config rather than this section.
    #[serde(skip)]
    pub seed: u64,
    pub ambientgan_mode: bool,
    /// A metric row is recorded after every generator step divisible by this.
    pub log_every: usize,
    /// Samples drawn for each TV estimate.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            n_critic: 5,
            learning_rate: 5e-5,
            clip_c: 0.01,
            total_steps: 1000,
            seed: 0,
            ambientgan_mode: false,
            log_every: 100,
            eval_samples: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.n_critic == 0 {
            return bad("n_critic must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a non-negative number");
        }
        if !(self.clip_c > 0.0 && self.clip_c.is_finite()) {
            return bad("clip_c must be positive");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        if self.eval_samples == 0 {
            return bad("eval_samples must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisganModel {
    pub g_x: Network,
    pub g_m: Network,
    pub d_x: Network,
    pub d_m: Network,
    pub tau: f64,
    pub temperature: f64,
    pub alpha: f64,
    pub noise_dim: usize,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

impl MisganModel {
    pub fn new(n: usize, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self, TrainError> {
        cfg.validate()?;
        if n == 0 {
            return Err(TrainError::Config("data dimension must be positive".into()));
        }
        let g_x = Network::mlp(
            &widths(cfg.noise_dim, &cfg.generator_hidden, n),
            cfg.data_activation.into(),
            rng,
        )?;
        let g_m = Network::mlp(
            &widths(cfg.noise_dim, &cfg.generator_hidden, n),
            Activation::TemperatureSigmoid {
                temperature: cfg.temperature,
            },
            rng,
        )?;
        let d_x = Network::mlp(&widths(n, &cfg.critic_hidden, 1), Activation::Identity, rng)?;
        let d_m = Network::mlp(&widths(n, &cfg.critic_hidden, 1), Activation::Identity, rng)?;
        Ok(Self {
            g_x,
            g_m,
            d_x,
            d_m,
            tau: cfg.tau,
            temperature: cfg.temperature,
            alpha: cfg.alpha,
            noise_dim: cfg.noise_dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.g_x.output_dim()
    }

    /// `count` draws of `G_x(z)` as a `[count, n]` tensor.
    pub fn sample_data(&self, rng: &mut Rng, count: usize) -> Result<Tensor, TrainError> {
        if count == 0 {
            return Ok(Tensor::zeros(&[0, self.dim()]));
        }
        Ok(self.g_x.apply(&normal_tensor(rng, count, self.noise_dim))?)
    }

    /// `count` relaxed masks `G_m(ε)` with entries in `(0, 1)`.
    pub fn sample_masks(&self, rng: &mut Rng, count: usize) -> Result<Tensor, TrainError> {
        if count == 0 {
            return Ok(Tensor::zeros(&[0, self.dim()]));
        }
        Ok(self.g_m.apply(&normal_tensor(rng, count, self.noise_dim))?)
    }
}

/// `[rows, cols]` tensor of independent standard normals.
pub fn normal_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| standard_normal(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("sized")
}

pub(crate) fn sample_indices(rng: &mut Rng, len: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..len)).collect()
}

/// `f_τ` on value tensors with a binary mask: exact selection.
pub fn mask_fill(x: &Tensor, m: &Tensor, tau: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(m.data())
        .map(|(&v, &b)| if b == 1.0 { v } else { tau })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// `x ⊙ m + τ (1 − m)` for relaxed masks, on value tensors.
pub fn soft_fill(x: &Tensor, m: &Tensor, tau: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(m.data())
        .map(|(&v, &w)| v * w + tau * (1.0 - w))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Graph version of [`soft_fill`].
pub fn soft_fill_node(g: &mut Graph, x: NodeId, m: NodeId, tau: f64) -> Result<NodeId, GraphError> {
    let xm = g.mul(x, m)?;
    if tau == 0.0 {
        return Ok(xm);
    }
    let rest = g.one_minus(m)?;
    let rest = g.scale(rest, tau);
    g.add(xm, rest)
}

/// `mean D(real) − mean D(fake)`.
pub fn critic_gap(
    g: &mut Graph,
    critic: &Network,
    bound: &BoundNetwork,
    real: NodeId,
    fake: NodeId,
) -> Result<NodeId, TrainError> {
    if g.value(real).rows() == 0 || g.value(fake).rows() == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let dr = bound.forward(g, critic, real)?;
    let df = bound.forward(g, critic, fake)?;
    let mr = g.mean(dr);
    let mf = g.mean(df);
    Ok(g.sub(mr, mf)?)
}

fn gap_value(critic: &Network, real: Tensor, fake: Tensor) -> Result<f64, TrainError> {
    let mut g = Graph::new();
    let b = critic.bind(&mut g);
    let r = g.leaf(real);
    let f = g.leaf(fake);
    let l = critic_gap(&mut g, critic, &b, r, f)?;
    Ok(g.value(l).item())
}

/// `L_m = E[D_m(m)] − E[D_m(G_m(ε))]`.
pub fn loss_mask(
    d_m: &Network,
    g_m: &Network,
    real_masks: &Tensor,
    eps: &Tensor,
) -> Result<f64, TrainError> {
    if real_masks.rows() == 0 || eps.rows() == 0 {
        return Err(TrainError::EmptyBatch);
    }
    gap_value(d_m, real_masks.clone(), g_m.apply(eps)?)
}

/// `L_x = E[D_x(f_τ(x, m))] − E[D_x(f_τ(G_x(z), G_m(ε)))]`.
#[allow(clippy::too_many_arguments)]
pub fn loss_data(
    d_x: &Network,
    g_x: &Network,
    g_m: &Network,
    x: &Tensor,
    m: &Tensor,
    z: &Tensor,
    eps: &Tensor,
    tau: f64,
) -> Result<f64, TrainError> {
    if x.rows() == 0 || z.rows() == 0 || eps.rows() == 0 {
        return Err(TrainError::EmptyBatch);
    }
    if x.shape() != m.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "loss_data",
            lhs: x.shape().to_vec(),
            rhs: m.shape().to_vec(),
        }
        .into());
    }
    let fake = soft_fill(&g_x.apply(z)?, &g_m.apply(eps)?, tau);
    gap_value(d_x, mask_fill(x, m, tau), fake)
}

/// One RMSProp state per network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub g_x: RmsProp,
    pub g_m: RmsProp,
    pub d_x: RmsProp,
    pub d_m: RmsProp,
}

impl Optimizers {
    pub fn new(model: &MisganModel, lr: f64) -> Self {
        Self {
            g_x: RmsProp::new(&model.g_x, lr),
            g_m: RmsProp::new(&model.g_m, lr),
            d_x: RmsProp::new(&model.d_x, lr),
            d_m: RmsProp::new(&model.d_m, lr),
        }
    }
}

/// Live random streams of a training run.
#[derive(Debug, Clone)]
pub struct Streams {
    pub batch: Rng,
    pub z: Rng,
    pub epsilon: Rng,
    pub omega: Rng,
    pub mask: Rng,
    pub eval: Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            batch: stream(seed, Stream::Batch),
            z: stream(seed, Stream::Z),
            epsilon: stream(seed, Stream::Epsilon),
            omega: stream(seed, Stream::Omega),
            mask: stream(seed, Stream::Mask),
            eval: stream(seed, Stream::Eval),
        }
    }

    pub fn capture(&self) -> Vec<StreamState> {
        vec![
            StreamState::capture(Stream::Batch, &self.batch),
            StreamState::capture(Stream::Z, &self.z),
            StreamState::capture(Stream::Epsilon, &self.epsilon),
            StreamState::capture(Stream::Omega, &self.omega),
            StreamState::capture(Stream::Mask, &self.mask),
            StreamState::capture(Stream::Eval, &self.eval),
        ]
    }

    pub fn restore(seed: u64, states: &[StreamState]) -> Result<Self, TrainError> {
        let mut s = Self::new(seed);
        for st in states {
            let rng = st.restore(seed)?;
            match st.stream {
                Stream::Batch => s.batch = rng,
                Stream::Z => s.z = rng,
                Stream::Epsilon => s.epsilon = rng,
                Stream::Omega => s.omega = rng,
                Stream::Mask => s.mask = rng,
                Stream::Eval => s.eval = rng,
                other => {
                    return Err(TrainError::Config(format!(
                        "unexpected stream {other:?} in state"
                    )))
                }
            }
        }
        Ok(s)
    }
}

/// One row of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub loss_mask: Option<f64>,
    pub loss_data: Option<f64>,
    pub loss_imputer: Option<f64>,
    pub tv_mask: Option<f64>,
    pub tv_data: Option<f64>,
}

/// Renders the log as CSV. The imputer column appears only when requested.
pub fn metrics_csv(rows: &[MetricRow], with_imputer: bool) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("step,loss_mask,loss_data,tv_mask,tv_data");
    if with_imputer {
        out.push_str(",loss_imputer");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.step,
            cell(r.loss_mask),
            cell(r.loss_data),
            cell(r.tv_mask),
            cell(r.tv_data)
        ));
        if with_imputer {
            out.push(',');
            out.push_str(&cell(r.loss_imputer));
        }
        out.push('\n');
    }
    out
}

/// Exact references for the TV metrics on a toy with an enumerable
/// mechanism.
#[derive(Debug, Clone)]
pub struct TvReference {
    classifier: MaskedClassifier,
    masks: BTreeMap<Mask, f64>,
    masked_data: BTreeMap<(Mask, usize), f64>,
}

impl TvReference {
    pub fn new(toy: &Toy, mechanism: &MaskMechanism, tau: f64) -> Result<Self, TrainError> {
        let q = mechanism.exact_distribution(toy.dim())?;
        let classifier = MaskedClassifier::from_toy(toy, tau)?;
        let masked_data = classifier.exact_histogram(&toy.support()?, &q)?;
        Ok(Self {
            classifier,
            masks: q.into_iter().collect(),
            masked_data,
        })
    }

    /// `(TV of thresholded generated masks vs q, TV of masked generated data
    /// vs masked real data)` from `count` fresh samples.
    pub fn evaluate(
        &self,
        model: &MisganModel,
        rng: &mut Rng,
        count: usize,
    ) -> Result<(f64, f64), TrainError> {
        let xs = model.sample_data(rng, count)?;
        let ms = model.sample_masks(rng, count)?;
        let masks: Vec<Mask> = (0..count).map(|i| Mask::threshold(ms.row(i))).collect();
        let rows: Vec<Vec<f64>> = (0..count).map(|i| xs.row(i).to_vec()).collect();
        let mut mask_hist: BTreeMap<Mask, f64> = BTreeMap::new();
        for m in &masks {
            *mask_hist.entry(m.clone()).or_insert(0.0) += 1.0 / count as f64;
        }
        let data_hist = self.classifier.empirical_histogram(&rows, &masks)?;
        Ok((
            tv_distance_keyed(&mask_hist, &self.masks)?,
            tv_distance_keyed(&data_hist, &self.masked_data)?,
        ))
    }
}

fn check_finite(v: f64, step: usize, loss: &'static str) -> Result<f64, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::NonFinite { step, loss })
    }
}

/// Takes one clipped ascent step of `mean D(real) − mean D(fake)` for a critic.
pub(crate) fn critic_ascent(
    critic: &mut Network,
    opt: &mut RmsProp,
    real: Tensor,
    fake: Tensor,
    clip_c: f64,
) -> Result<f64, TrainError> {
    let mut g = Graph::new();
    let b = critic.bind(&mut g);
    let r = g.leaf(real);
    let f = g.leaf(fake);
    let l = critic_gap(&mut g, critic, &b, r, f)?;
    let grads = g.backward(l)?;
    let neg: Vec<Tensor> = b
        .gradients(&grads, critic)
        .iter()
        .map(|t| t.map(|v| -v))
        .collect();
    opt.step(critic, &neg)?;
    critic.clip_parameters(clip_c)?;
    Ok(g.value(l).item())
}

fn scaled(ts: Vec<Tensor>, s: f64) -> Vec<Tensor> {
    ts.into_iter().map(|t| t.map(|v| s * v)).collect()
}

/// Complete training state: models, optimizer moments, random streams and
/// the number of finished generator steps.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MisganModel,
    pub imputer: Option<JointImputer>,
    pub cfg: TrainConfig,
    pub opt: Optimizers,
    pub streams: Streams,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: MisganModel, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Self {
            opt: Optimizers::new(&model, cfg.learning_rate),
            streams: Streams::new(cfg.seed),
            model,
            imputer: None,
            cfg,
            step: 0,
        })
    }

    /// Joint training with an imputer. With `mask_components = false` the
    /// mask networks and `D_x` are left untouched and `G_x`, `G_i` are
    /// trained on `L_i` alone.
    pub fn with_imputer(
        mut self,
        imputer: ImputerModel,
        mask_components: bool,
    ) -> Result<Self, TrainError> {
        if imputer.dim() != self.model.dim() {
            return Err(TrainError::Dimension {
                expected: self.model.dim(),
                got: imputer.dim(),
            });
        }
        self.imputer = Some(JointImputer::new(
            imputer,
            mask_components,
            self.cfg.learning_rate,
        ));
        Ok(self)
    }

    fn uses_masks(&self) -> bool {
        self.imputer.as_ref().is_none_or(|i| i.mask_components)
    }

    /// Runs generator steps until `self.step == until`, returning the
    /// metric rows produced on the way.
    pub fn run(
        &mut self,
        data: &IncompleteDataset,
        reference: Option<&TvReference>,
        until: usize,
    ) -> Result<Vec<MetricRow>, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if data.dim() != self.model.dim() {
            return Err(TrainError::Dimension {
                expected: self.model.dim(),
                got: data.dim(),
            });
        }
        let mut log = Vec::new();
        while self.step < until {
            let step = self.step + 1;
            for _ in 0..self.cfg.n_critic {
                self.critic_round(data, step)?;
            }
            let mut row = self.generator_step(data, step)?;
            self.step = step;
            if step.is_multiple_of(self.cfg.log_every) {
                if let Some(r) = reference {
                    let (tm, td) =
                        r.evaluate(&self.model, &mut self.streams.eval, self.cfg.eval_samples)?;
                    row.tv_mask = Some(tm);
                    row.tv_data = Some(td);
                }
                log.push(row);
            }
        }
        Ok(log)
    }

    fn draw_batch(&mut self, data: &IncompleteDataset) -> (Tensor, Tensor, Tensor, Tensor) {
        let b = self.cfg.batch_size;
        let idx = sample_indices(&mut self.streams.batch, data.len(), b);
        let (x, m) = data.batch(&idx);
        let z = normal_tensor(&mut self.streams.z, b, self.model.noise_dim);
        let eps = normal_tensor(&mut self.streams.epsilon, b, self.model.noise_dim);
        (x, m, z, eps)
    }

    fn critic_round(&mut self, data: &IncompleteDataset, step: usize) -> Result<(), TrainError> {
        let (x, m, z, eps) = self.draw_batch(data);
        let omega = self.imputer.as_ref().map(|_| {
            normal_tensor(
                &mut self.streams.omega,
                self.cfg.batch_size,
                self.model.dim(),
            )
        });
        let c = self.cfg.clip_c;
        let x_fake = self.model.g_x.apply(&z)?;
        if self.uses_masks() {
            let m_fake = self.model.g_m.apply(&eps)?;
            let fake = soft_fill(&x_fake, &m_fake, self.model.tau);
            let real = mask_fill(&x, &m, self.model.tau);
            let lx = critic_ascent(&mut self.model.d_x, &mut self.opt.d_x, real, fake, c)?;
            check_finite(lx, step, "loss_data")?;
            if !self.cfg.ambientgan_mode {
                let lm =
                    critic_ascent(&mut self.model.d_m, &mut self.opt.d_m, m.clone(), m_fake, c)?;
                check_finite(lm, step, "loss_mask")?;
            }
        }
        if let (Some(imp), Some(omega)) = (self.imputer.as_mut(), omega) {
            let li = imp.critic_step(x_fake, &x, &m, &omega, c)?;
            check_finite(li, step, "loss_imputer")?;
        }
        Ok(())
    }

    fn generator_step(
        &mut self,
        data: &IncompleteDataset,
        step: usize,
    ) -> Result<MetricRow, TrainError> {
        let (x, m, z, eps) = self.draw_batch(data);
        let omega = self.imputer.as_ref().map(|_| {
            normal_tensor(
                &mut self.streams.omega,
                self.cfg.batch_size,
                self.model.dim(),
            )
        });
        let uses_masks = self.uses_masks();
        let model = &self.model;
        let mut g = Graph::new();
        let bgx = model.g_x.bind(&mut g);
        let zn = g.leaf(z);
        let xf = bgx.forward(&mut g, &model.g_x, zn)?;
        let mut row = MetricRow {
            step,
            loss_mask: None,
            loss_data: None,
            loss_imputer: None,
            tv_mask: None,
            tv_data: None,
        };
        let mut gx_grad: Vec<Tensor> = model
            .g_x
            .params()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        let mut gm_grad: Option<Vec<Tensor>> = None;

        if uses_masks {
            let bgm = model.g_m.bind(&mut g);
            let en = g.leaf(eps);
            let mf = bgm.forward(&mut g, &model.g_m, en)?;
            let fake = soft_fill_node(&mut g, xf, mf, model.tau)?;
            let real = g.leaf(mask_fill(&x, &m, model.tau));
            let bdx = model.d_x.bind(&mut g);
            let lx = critic_gap(&mut g, &model.d_x, &bdx, real, fake)?;
            row.loss_data = Some(check_finite(g.value(lx).item(), step, "loss_data")?);

            let grads = g.backward(lx)?;
            axpy(&mut gx_grad, 1.0, &bgx.gradients(&grads, &model.g_x));
            let from_lx = bgm.gradients(&grads, &model.g_m);
            let mut total = if self.cfg.ambientgan_mode {
                model
                    .g_m
                    .params()
                    .map(|p| Tensor::zeros(p.shape()))
                    .collect()
            } else {
                let bdm = model.d_m.bind(&mut g);
                let real_m = g.leaf(m.clone());
                let lm = critic_gap(&mut g, &model.d_m, &bdm, real_m, mf)?;
                row.loss_mask = Some(check_finite(g.value(lm).item(), step, "loss_mask")?);
                bgm.gradients(&g.backward(lm)?, &model.g_m)
            };
            axpy(&mut total, model.alpha, &from_lx);
            gm_grad = Some(total);
        }

        let gi_grad = match (self.imputer.as_ref(), omega) {
            (Some(imp), Some(omega)) => {
                let (li, from_gx, gi) =
                    imp.generator_grads(&mut g, xf, &bgx, &model.g_x, &x, &m, &omega)?;
                row.loss_imputer = Some(check_finite(li, step, "loss_imputer")?);
                let coeff = if uses_masks { imp.model.beta } else { 1.0 };
                axpy(&mut gx_grad, coeff, &from_gx);
                Some(gi)
            }
            _ => None,
        };

        self.opt.g_x.step(&mut self.model.g_x, &gx_grad)?;
        if let Some(gm) = gm_grad {
            self.opt.g_m.step(&mut self.model.g_m, &gm)?;
        }
        if let (Some(imp), Some(gi)) = (self.imputer.as_mut(), gi_grad) {
            imp.generator_update(&gi)?;
        }
        Ok(row)
    }

    /// Gradient of the `G_m` objective at a fresh batch, for inspection.
    pub fn mask_generator_gradient(
        &mut self,
        data: &IncompleteDataset,
    ) -> Result<MaskGradients, TrainError> {
        let (x, m, z, eps) = self.draw_batch(data);
        let model = &self.model;
        let mut g = Graph::new();
        let bgx = model.g_x.bind(&mut g);
        let bgm = model.g_m.bind(&mut g);
        let zn = g.leaf(z);
        let en = g.leaf(eps);
        let xf = bgx.forward(&mut g, &model.g_x, zn)?;
        let mf = bgm.forward(&mut g, &model.g_m, en)?;
        let fake = soft_fill_node(&mut g, xf, mf, model.tau)?;
        let real = g.leaf(mask_fill(&x, &m, model.tau));
        let bdx = model.d_x.bind(&mut g);
        let lx = critic_gap(&mut g, &model.d_x, &bdx, real, fake)?;
        let bdm = model.d_m.bind(&mut g);
        let real_m = g.leaf(m);
        let lm = critic_gap(&mut g, &model.d_m, &bdm, real_m, mf)?;
        let from_lx = bgm.gradients(&g.backward(lx)?, &model.g_m);
        let from_lm = bgm.gradients(&g.backward(lm)?, &model.g_m);
        let mut total = from_lm.clone();
        axpy(&mut total, model.alpha, &from_lx);
        Ok(MaskGradients {
            from_loss_data: scaled(from_lx, model.alpha),
            from_loss_mask: from_lm,
            total,
        })
    }
}

/// Decomposition of the `G_m` gradient into its `L_m` and `α L_x` parts.
#[derive(Debug, Clone)]
pub struct MaskGradients {
    pub from_loss_data: Vec<Tensor>,
    pub from_loss_mask: Vec<Tensor>,
    pub total: Vec<Tensor>,
}

/// Trains a fresh run for `cfg.total_steps` generator steps.
pub fn train(
    model: MisganModel,
    data: &IncompleteDataset,
    cfg: &TrainConfig,
    reference: Option<&TvReference>,
) -> Result<(MisganModel, Vec<MetricRow>), TrainError> {
    let mut t = Trainer::new(model, cfg.clone())?;
    let log = t.run(data, reference, cfg.total_steps)?;
    Ok((t.model, log))
}
