//! Missing-data imputer `G_i(x, m, ω) = x ⊙ m + Ĝ_i(x ⊙ m + ω ⊙ m̄) ⊙ m̄`
//! trained adversarially against samples of a data generator.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::masking::{Mask, MaskMechanism};
use crate::misgan::{
    critic_ascent, critic_gap, mask_fill, normal_tensor, DataActivation, MetricRow, Streams,
    TrainConfig, TrainError,
};
use crate::nn::{Activation, BoundNetwork, Network, RmsProp};
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputerConfig {
    /// Hidden widths of `Ĝ_i`.
    pub hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub beta: f64,
    pub output_activation: DataActivation,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![500, 500],
            critic_hidden: vec![64, 64],
            beta: 0.1,
            output_activation: DataActivation::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerModel {
    pub g_i_hat: Network,
    pub d_i: Network,
    pub beta: f64,
}

fn check_shapes(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TrainError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

impl ImputerModel {
    pub fn new(n: usize, cfg: &ImputerConfig, rng: &mut Rng) -> Result<Self, TrainError> {
        if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
            return Err(TrainError::Config(format!(
                "beta must be non-negative, got {}",
                cfg.beta
            )));
        }
        if n == 0 || cfg.hidden.iter().chain(&cfg.critic_hidden).any(|&h| h == 0) {
            return Err(TrainError::Config("imputer widths must be positive".into()));
        }
        let dims: Vec<usize> = std::iter::once(n)
            .chain(cfg.hidden.iter().copied())
            .chain([n])
            .collect();
        let critic: Vec<usize> = std::iter::once(n)
            .chain(cfg.critic_hidden.iter().copied())
            .chain([1])
            .collect();
        Ok(Self {
            g_i_hat: Network::mlp(&dims, cfg.output_activation.into(), rng)?,
            d_i: Network::mlp(&critic, Activation::Identity, rng)?,
            beta: cfg.beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.g_i_hat.input_dim()
    }

    /// `x ⊙ m + ω ⊙ m̄`, the input of `Ĝ_i`.
    pub fn noisy_input(x: &Tensor, m: &Tensor, omega: &Tensor) -> Result<Tensor, TrainError> {
        check_shapes("noisy_input", x, m)?;
        check_shapes("noisy_input", x, omega)?;
        let data = x
            .data()
            .iter()
            .zip(m.data())
            .zip(omega.data())
            .map(|((&v, &b), &w)| if b == 1.0 { v } else { w })
            .collect();
        Ok(Tensor::new(x.shape().to_vec(), data)?)
    }

    /// Completes a batch. Observed entries are copied, never recomputed.
    pub fn impute_batch(
        &self,
        x: &Tensor,
        m: &Tensor,
        omega: &Tensor,
    ) -> Result<Tensor, TrainError> {
        let inner = Self::noisy_input(x, m, omega)?;
        let out = self.g_i_hat.apply(&inner)?;
        let data = x
            .data()
            .iter()
            .zip(m.data())
            .zip(out.data())
            .map(|((&v, &b), &o)| if b == 1.0 { v } else { o })
            .collect();
        Ok(Tensor::new(x.shape().to_vec(), data)?)
    }

    pub fn impute(&self, x: &[f64], m: &Mask, omega: &[f64]) -> Result<Vec<f64>, TrainError> {
        let n = x.len();
        if m.len() != n || omega.len() != n {
            return Err(TrainError::Dimension {
                expected: n,
                got: if m.len() != n { m.len() } else { omega.len() },
            });
        }
        let x = Tensor::row_vector(x);
        let m = Tensor::row_vector(&m.to_f64());
        let w = Tensor::row_vector(omega);
        Ok(self.impute_batch(&x, &m, &w)?.into_data())
    }

    /// Graph node for `G_i(x, m, ω)`, differentiable in `Ĝ_i`'s parameters.
    pub fn impute_node(
        &self,
        g: &mut Graph,
        bound: &BoundNetwork,
        x: &Tensor,
        m: &Tensor,
        omega: &Tensor,
    ) -> Result<NodeId, TrainError> {
        let inner = g.leaf(Self::noisy_input(x, m, omega)?);
        let out = bound.forward(g, &self.g_i_hat, inner)?;
        let keep = g.leaf(m.map(|b| 1.0 - b));
        let filled = g.mul(out, keep)?;
        let observed = g.leaf(mask_fill(x, m, 0.0));
        Ok(g.add(observed, filled)?)
    }
}

/// `L_i = E[D_i(G_x(z))] − E[D_i(G_i(x, m, ω))]`.
pub fn loss_imputer(
    imp: &ImputerModel,
    g_x: &Network,
    z: &Tensor,
    x: &Tensor,
    m: &Tensor,
    omega: &Tensor,
) -> Result<f64, TrainError> {
    if z.rows() == 0 || x.rows() == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let mut g = Graph::new();
    let bd = imp.d_i.bind(&mut g);
    let real = g.leaf(g_x.apply(z)?);
    let fake = g.leaf(imp.impute_batch(x, m, omega)?);
    let l = critic_gap(&mut g, &imp.d_i, &bd, real, fake)?;
    Ok(g.value(l).item())
}

/// Imputer trained together with MisGAN.
#[derive(Debug, Clone)]
pub struct JointImputer {
    pub model: ImputerModel,
    pub mask_components: bool,
    pub opt_g: RmsProp,
    pub opt_d: RmsProp,
}

impl JointImputer {
    pub fn new(model: ImputerModel, mask_components: bool, lr: f64) -> Self {
        Self {
            opt_g: RmsProp::new(&model.g_i_hat, lr),
            opt_d: RmsProp::new(&model.d_i, lr),
            model,
            mask_components,
        }
    }

    pub(crate) fn critic_step(
        &mut self,
        generated: Tensor,
        x: &Tensor,
        m: &Tensor,
        omega: &Tensor,
        clip_c: f64,
    ) -> Result<f64, TrainError> {
        let imputed = self.model.impute_batch(x, m, omega)?;
        critic_ascent(
            &mut self.model.d_i,
            &mut self.opt_d,
            generated,
            imputed,
            clip_c,
        )
    }

    /// `L_i` with its gradients for `G_x` (through `xf`) and `Ĝ_i`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn generator_grads(
        &self,
        g: &mut Graph,
        xf: NodeId,
        bgx: &BoundNetwork,
        g_x: &Network,
        x: &Tensor,
        m: &Tensor,
        omega: &Tensor,
    ) -> Result<(f64, Vec<Tensor>, Vec<Tensor>), TrainError> {
        let bgi = self.model.g_i_hat.bind(g);
        let imputed = self.model.impute_node(g, &bgi, x, m, omega)?;
        let bdi = self.model.d_i.bind(g);
        let li = critic_gap(g, &self.model.d_i, &bdi, xf, imputed)?;
        let grads = g.backward(li)?;
        Ok((
            g.value(li).item(),
            bgx.gradients(&grads, g_x),
            bgi.gradients(&grads, &self.model.g_i_hat),
        ))
    }

    pub(crate) fn generator_update(&mut self, grads: &[Tensor]) -> Result<(), TrainError> {
        self.opt_g.step(&mut self.model.g_i_hat, grads)?;
        Ok(())
    }
}

/// Imputer trained against a frozen data generator, with masks drawn from
/// a mechanism that may differ from the training missingness.
#[derive(Debug, Clone)]
pub struct StandaloneTrainer {
    pub imputer: JointImputer,
    pub g_x: Network,
    pub mechanism: MaskMechanism,
    pub cfg: TrainConfig,
    pub streams: Streams,
    pub step: usize,
}

impl StandaloneTrainer {
    pub fn new(
        imp: ImputerModel,
        g_x: Network,
        mechanism: MaskMechanism,
        cfg: TrainConfig,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if g_x.output_dim() != imp.dim() {
            return Err(TrainError::Dimension {
                expected: imp.dim(),
                got: g_x.output_dim(),
            });
        }
        mechanism.validate(imp.dim())?;
        Ok(Self {
            imputer: JointImputer::new(imp, true, cfg.learning_rate),
            streams: Streams::new(cfg.seed),
            g_x,
            mechanism,
            cfg,
            step: 0,
        })
    }

    /// Generator samples `G_x(z)`, masks from the mechanism and `ω`.
    fn draw(&mut self) -> Result<(Tensor, Tensor, Tensor), TrainError> {
        let (b, n) = (self.cfg.batch_size, self.imputer.model.dim());
        let z = normal_tensor(&mut self.streams.z, b, self.g_x.input_dim());
        let xg = self.g_x.apply(&z)?;
        let mut bits = Vec::with_capacity(b * n);
        for _ in 0..b {
            bits.extend(self.mechanism.sample(&mut self.streams.mask, n)?.to_f64());
        }
        let m = Tensor::new(vec![b, n], bits)?;
        let omega = normal_tensor(&mut self.streams.omega, b, n);
        Ok((xg, m, omega))
    }

    pub fn run(&mut self, until: usize) -> Result<Vec<MetricRow>, TrainError> {
        let mut log = Vec::new();
        while self.step < until {
            let step = self.step + 1;
            for _ in 0..self.cfg.n_critic {
                let (xg, m, omega) = self.draw()?;
                let li = self
                    .imputer
                    .critic_step(xg.clone(), &xg, &m, &omega, self.cfg.clip_c)?;
                if !li.is_finite() {
                    return Err(TrainError::NonFinite {
                        step,
                        loss: "loss_imputer",
                    });
                }
            }
            let (xg, m, omega) = self.draw()?;
            let imp = &self.imputer.model;
            let mut g = Graph::new();
            let bgi = imp.g_i_hat.bind(&mut g);
            let imputed = imp.impute_node(&mut g, &bgi, &xg, &m, &omega)?;
            let bdi = imp.d_i.bind(&mut g);
            let real = g.leaf(xg);
            let li = critic_gap(&mut g, &imp.d_i, &bdi, real, imputed)?;
            let value = g.value(li).item();
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    loss: "loss_imputer",
                });
            }
            let grads = bgi.gradients(&g.backward(li)?, &imp.g_i_hat);
            self.imputer.generator_update(&grads)?;
            self.step = step;
            if step.is_multiple_of(self.cfg.log_every) {
                log.push(MetricRow {
                    step,
                    loss_mask: None,
                    loss_data: None,
                    loss_imputer: Some(value),
                    tv_mask: None,
                    tv_data: None,
                });
            }
        }
        Ok(log)
    }
}

/// Trains a stand-alone imputer for `cfg.total_steps` steps; `g_x` is only read.
pub fn train_standalone(
    imp: ImputerModel,
    g_x: &Network,
    mask_source: &MaskMechanism,
    cfg: &TrainConfig,
) -> Result<(ImputerModel, Vec<MetricRow>), TrainError> {
    let mut t = StandaloneTrainer::new(imp, g_x.clone(), mask_source.clone(), cfg.clone())?;
    let log = t.run(cfg.total_steps)?;
    Ok((t.imputer.model, log))
}
