//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use misgan_lab::autodiff::{Graph, NodeId};
use misgan_lab::identify::{Alphabet, MaskDistribution};
use misgan_lab::nn::{Activation, Network};
use misgan_lab::rng::{stream, Rng, Stream};
use misgan_lab::tensor::Tensor;
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Every differentiable graph operation, with each broadcast form listed
/// separately, plus a small network as a composite case.
pub const OPS: [&str; 19] = [
    "matmul",
    "add",
    "add_rhs_scalar",
    "add_lhs_scalar",
    "add_row",
    "sub",
    "sub_rhs_scalar",
    "sub_lhs_scalar",
    "sub_row",
    "mul",
    "mul_rhs_scalar",
    "mul_row",
    "scale",
    "relu",
    "temperature_sigmoid",
    "sum",
    "mean",
    "sum_rows",
    "mlp",
];

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.random_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

/// Entries bounded away from zero so finite differences never straddle the
/// ReLU kink.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    random_tensor(rng, shape).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

type Build = Box<dyn Fn(&mut Graph, &[NodeId]) -> NodeId>;

fn case(op: &str, rng: &mut Rng) -> (Vec<Tensor>, Build) {
    let r = rng.random_range(1..=4);
    let c = rng.random_range(1..=4);
    let k = rng.random_range(1..=4);
    let lambda = rng.random_range(0.3..2.0);
    let factor = rng.random_range(-2.0..2.0);
    let m = |rng: &mut Rng| random_tensor(rng, &[r, c]);
    let s = |rng: &mut Rng| random_tensor(rng, &[1, 1]);
    let row = |rng: &mut Rng| random_tensor(rng, &[1, c]);
    match op {
        "matmul" => (
            vec![random_tensor(rng, &[r, k]), random_tensor(rng, &[k, c])],
            Box::new(|g, x| g.matmul(x[0], x[1]).unwrap()),
        ),
        "add" => (
            vec![m(rng), m(rng)],
            Box::new(|g, x| g.add(x[0], x[1]).unwrap()),
        ),
        "add_rhs_scalar" => (
            vec![m(rng), s(rng)],
            Box::new(|g, x| g.add(x[0], x[1]).unwrap()),
        ),
        "add_lhs_scalar" => (
            vec![s(rng), m(rng)],
            Box::new(|g, x| g.add(x[0], x[1]).unwrap()),
        ),
        "add_row" => (
            vec![m(rng), row(rng)],
            Box::new(|g, x| g.add(x[0], x[1]).unwrap()),
        ),
        "sub" => (
            vec![m(rng), m(rng)],
            Box::new(|g, x| g.sub(x[0], x[1]).unwrap()),
        ),
        "sub_rhs_scalar" => (
            vec![m(rng), s(rng)],
            Box::new(|g, x| g.sub(x[0], x[1]).unwrap()),
        ),
        "sub_lhs_scalar" => (
            vec![s(rng), m(rng)],
            Box::new(|g, x| g.sub(x[0], x[1]).unwrap()),
        ),
        "sub_row" => (
            vec![m(rng), row(rng)],
            Box::new(|g, x| g.sub(x[0], x[1]).unwrap()),
        ),
        "mul" => (
            vec![m(rng), m(rng)],
            Box::new(|g, x| g.mul(x[0], x[1]).unwrap()),
        ),
        "mul_rhs_scalar" => (
            vec![m(rng), s(rng)],
            Box::new(|g, x| g.mul(x[0], x[1]).unwrap()),
        ),
        "mul_row" => (
            vec![m(rng), row(rng)],
            Box::new(|g, x| g.mul(x[0], x[1]).unwrap()),
        ),
        "scale" => (vec![m(rng)], Box::new(move |g, x| g.scale(x[0], factor))),
        "relu" => (
            vec![away_from_zero(rng, &[r, c])],
            Box::new(|g, x| g.relu(x[0])),
        ),
        "temperature_sigmoid" => (
            vec![m(rng)],
            Box::new(move |g, x| g.temperature_sigmoid(x[0], lambda)),
        ),
        "sum" => (vec![m(rng)], Box::new(|g, x| g.sum(x[0]))),
        "mean" => (vec![m(rng)], Box::new(|g, x| g.mean(x[0]))),
        "sum_rows" => (vec![m(rng)], Box::new(|g, x| g.sum_rows(x[0]).unwrap())),
        other => panic!("unknown op {other}"),
    }
}

/// Scalar root `Σ w ⊙ op(inputs)` with a fixed random `w`.
fn evaluate(build: &Build, inputs: &[Tensor], w: &Tensor) -> (Graph, Vec<NodeId>, NodeId) {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &ids);
    let wid = g.leaf(w.clone());
    let prod = g.mul(out, wid).unwrap();
    let root = g.sum(prod);
    (g, ids, root)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_TOL)
}

/// Largest relative error between backward and central differences over
/// every input entry of one random instance of `op`.
pub fn op_max_rel_error(op: &str, seed: u64) -> f64 {
    let mut rng = stream(seed, Stream::Eval);
    if op == "mlp" {
        return mlp_max_rel_error(&mut rng);
    }
    let (inputs, build) = case(op, &mut rng);
    let shape = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &ids);
        g.value(out).shape().to_vec()
    };
    let w = random_tensor(&mut rng, &shape);
    let (g, ids, root) = evaluate(&build, &inputs, &w);
    let grads = g.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (i, id) in ids.iter().enumerate() {
        let analytic = grads.get_or_zeros(*id, inputs[i].shape());
        for j in 0..inputs[i].len() {
            let f = |delta: f64| {
                let mut moved = inputs.clone();
                moved[i].data_mut()[j] += delta;
                let (g, _, root) = evaluate(&build, &moved, &w);
                g.value(root).item()
            };
            let numeric = (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Two-layer network `σ_λ(relu(x W0 + b0) W1 + b1)` with a mean readout;
/// checks gradients with respect to every parameter and the input.
fn mlp_max_rel_error(rng: &mut Rng) -> f64 {
    let dims = [
        rng.random_range(1..=4),
        rng.random_range(2..=6),
        rng.random_range(1..=3),
    ];
    let batch = rng.random_range(1..=4);
    let temperature = rng.random_range(0.5..1.0);
    let mut net = Network::mlp(&dims, Activation::TemperatureSigmoid { temperature }, rng).unwrap();
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let x = random_tensor(rng, &[batch, dims[0]]);
    let value = |net: &Network, x: &Tensor| {
        let out = net.apply(x).unwrap();
        out.data().iter().sum::<f64>() / out.len() as f64
    };
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let xi = g.leaf(x.clone());
    let out = bound.forward(&mut g, &net, xi).unwrap();
    let root = g.mean(out);
    let grads = g.backward(root).unwrap();
    let param_grads = bound.gradients(&grads, &net);

    let mut worst: f64 = 0.0;
    for (pi, analytic) in param_grads.iter().enumerate() {
        for j in 0..analytic.len() {
            let shifted = |delta: f64| {
                let mut n = net.clone();
                n.params_mut().nth(pi).unwrap().data_mut()[j] += delta;
                value(&n, &x)
            };
            let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    let analytic = grads.get_or_zeros(xi, x.shape());
    for j in 0..x.len() {
        let shifted = |delta: f64| {
            let mut moved = x.clone();
            moved.data_mut()[j] += delta;
            value(&net, &moved)
        };
        let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic.data()[j], numeric));
    }
    worst
}

/// A random small problem: `n ≤ 3`, `|P| ≤ 3`, and a mask distribution on a
/// random support of at most `max_support` masks (`None` for any size).
pub struct Instance {
    pub values: Vec<f64>,
    pub alphabet: Alphabet,
    pub q: MaskDistribution,
    pub n: usize,
}

pub fn random_instance(rng: &mut Rng, max_support: Option<usize>) -> Instance {
    let n = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let pool = [0.0, 1.0, -0.5, 2.5, 0.25];
    let mut values: Vec<f64> = Vec::new();
    while values.len() < k {
        let v = pool[rng.random_range(0..pool.len())];
        if !values.contains(&v) {
            values.push(v);
        }
    }
    let masks = 1usize << n;
    let size = rng.random_range(1..=max_support.unwrap_or(masks).min(masks));
    let mut support: Vec<usize> = Vec::new();
    while support.len() < size {
        let m = rng.random_range(0..masks);
        if !support.contains(&m) {
            support.push(m);
        }
    }
    let mut probs = vec![0.0; masks];
    let weights: Vec<f64> = support.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for (&m, w) in support.iter().zip(&weights) {
        probs[m] = w / total;
    }
    Instance {
        alphabet: Alphabet::new(&values, n).unwrap(),
        q: MaskDistribution::new(n, probs).unwrap(),
        values,
        n,
    }
}

/// A random probability vector; with `sparse` most entries are zero.
pub fn random_distribution(rng: &mut Rng, len: usize, sparse: bool) -> Vec<f64> {
    let mut p: Vec<f64> = (0..len)
        .map(|_| {
            if sparse && rng.random_bool(0.7) {
                0.0
            } else {
                rng.random_range(0.05..1.0)
            }
        })
        .collect();
    if p.iter().all(|&v| v == 0.0) {
        p[rng.random_range(0..len)] = 1.0;
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Digits of `state` in base `radix`, coordinate 0 most significant.
pub fn digits(state: usize, radix: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    let mut s = state;
    for d in (0..n).rev() {
        out[d] = s % radix;
        s /= radix;
    }
    out
}

/// Bit `d` of mask index `m` (coordinate 0 most significant); true = observed.
pub fn observed(m: usize, n: usize, d: usize) -> bool {
    (m >> (n - 1 - d)) & 1 == 1
}

/// `T(t, s) = Σ_m q(m) [f_τ(s, m) = t]` by enumerating every `(m, s)`.
pub fn brute_transition(inst: &Instance, tau_pos: usize) -> Vec<Vec<f64>> {
    let (k, n) = (inst.values.len(), inst.n);
    let states = k.pow(n as u32);
    let mut t = vec![vec![0.0; states]; states];
    for (m, &qm) in inst.q.probs().iter().enumerate() {
        if qm == 0.0 {
            continue;
        }
        for (s, col) in (0..states).map(|s| (s, digits(s, k, n))) {
            let masked: Vec<usize> = (0..n)
                .map(|d| if observed(m, n, d) { col[d] } else { tau_pos })
                .collect();
            let target = masked.iter().fold(0, |acc, &dg| acc * k + dg);
            t[target][s] += qm;
        }
    }
    t
}

/// `x([v]_m)`: total mass of states agreeing with `v` wherever `m` observes.
pub fn brute_marginal(x: &[f64], inst: &Instance, m: usize, v: usize) -> f64 {
    let (k, n) = (inst.values.len(), inst.n);
    let dv = digits(v, k, n);
    x.iter()
        .enumerate()
        .filter(|(u, _)| {
            let du = digits(*u, k, n);
            (0..n).all(|d| !observed(m, n, d) || du[d] == dv[d])
        })
        .map(|(_, p)| p)
        .sum()
}

use misgan_lab::dataset::{make_incomplete_dataset, IncompleteDataset};
use misgan_lab::masking::MaskMechanism;
use misgan_lab::misgan::{MisganModel, ModelConfig, TrainConfig};
use misgan_lab::toy::Toy;

pub fn ring_data(seed: u64, count: usize, rate: f64) -> IncompleteDataset {
    let rows = Toy::ring()
        .sample(&mut stream(seed, Stream::Data), count)
        .unwrap();
    make_incomplete_dataset(
        &rows,
        &MaskMechanism::Dropout { rate },
        &mut stream(seed, Stream::Mask),
    )
    .unwrap()
    .0
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        noise_dim: 4,
        generator_hidden: vec![8],
        critic_hidden: vec![8],
        ..ModelConfig::default()
    }
}

pub fn small_model(seed: u64, n: usize) -> MisganModel {
    MisganModel::new(n, &small_model_config(), &mut stream(seed, Stream::Init)).unwrap()
}

pub fn short_run(seed: u64, steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        n_critic: 2,
        learning_rate: 1e-3,
        total_steps: steps,
        seed,
        log_every: 1,
        ..TrainConfig::default()
    }
}
