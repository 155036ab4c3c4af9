//! Sample-quality metrics and simple imputation baselines.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::IncompleteDataset;
use crate::masking::Mask;
use crate::rng::{standard_normal, Rng};

/// Ridge added to both covariances before taking square roots.
pub const COVARIANCE_RIDGE: f64 = 1e-6;
/// Histogram mass may deviate from 1 by this much.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Seed of the default random projection.
pub const DEFAULT_PROJECTION_SEED: u64 = 20_190_101;
pub const DEFAULT_PROJECTION_DIM: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 samples per side, got {0}")]
    TooFewSamples(usize),
    #[error("samples have inconsistent dimension: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("projection to {out_dim} features exceeds input dimension {n}")]
    ProjectionTooWide { out_dim: usize, n: usize },
    #[error("histogram is not normalized (total {0})")]
    NotNormalized(f64),
    #[error("histogram has a negative entry {0}")]
    NegativeMass(f64),
    #[error("no missing coordinates to score")]
    NothingMissing,
    #[error("rank {rank} must be below min(rows, columns) = {limit}")]
    RankTooLarge { rank: usize, limit: usize },
    #[error("linear solve failed in matrix factorization")]
    Singular,
}

/// Features on which Fréchet distances are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureMap {
    Identity,
    /// `x ↦ W x` with `W` drawn once from `N(0, 1/n)` using `seed`.
    FixedRandomLinear {
        seed: u64,
        out_dim: usize,
    },
}

impl Default for FeatureMap {
    fn default() -> Self {
        FeatureMap::FixedRandomLinear {
            seed: DEFAULT_PROJECTION_SEED,
            out_dim: DEFAULT_PROJECTION_DIM,
        }
    }
}

impl FeatureMap {
    pub fn apply(&self, samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, EvalError> {
        let n = samples.first().map_or(0, Vec::len);
        if let Some(bad) = samples.iter().find(|s| s.len() != n) {
            return Err(EvalError::Dimension {
                expected: n,
                got: bad.len(),
            });
        }
        match *self {
            FeatureMap::Identity => Ok(samples.to_vec()),
            FeatureMap::FixedRandomLinear { seed, out_dim } => {
                if out_dim > n || out_dim == 0 {
                    return Err(EvalError::ProjectionTooWide { out_dim, n });
                }
                let mut rng = Rng::seed_from_u64(seed);
                let scale = 1.0 / (n as f64).sqrt();
                let w: Vec<f64> = (0..out_dim * n)
                    .map(|_| scale * standard_normal(&mut rng))
                    .collect();
                Ok(samples
                    .iter()
                    .map(|x| {
                        w.chunks(n)
                            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

fn moments(samples: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = samples[0].len();
    let count = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= count;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = DVector::from_column_slice(s) - &mean;
        cov += &c * c.transpose();
    }
    cov /= count - 1.0;
    for i in 0..d {
        cov[(i, i)] += COVARIANCE_RIDGE;
    }
    (mean, cov)
}

fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `tr((Σ_a Σ_b)^{1/2})` through the symmetric product `Σ_a^{1/2} Σ_b Σ_a^{1/2}`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ra = sym_sqrt(a);
    let inner = &ra * b * &ra;
    let sym = (&inner + inner.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum()
}

/// Fréchet distance between Gaussians fitted to the mapped samples:
/// `‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2 (Σ_a Σ_b)^{1/2})`.
pub fn frechet_distance(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    fmap: &FeatureMap,
) -> Result<f64, EvalError> {
    let smallest = a.len().min(b.len());
    if smallest < 2 {
        return Err(EvalError::TooFewSamples(smallest));
    }
    let fa = fmap.apply(a)?;
    let fb = fmap.apply(b)?;
    if fa[0].len() != fb[0].len() {
        return Err(EvalError::Dimension {
            expected: fa[0].len(),
            got: fb[0].len(),
        });
    }
    let (mu_a, cov_a) = moments(&fa);
    let (mu_b, cov_b) = moments(&fb);
    let mean_term = (&mu_a - &mu_b).norm_squared();
    // Averaging both orders makes the result exactly symmetric.
    let cross = 0.5 * (trace_sqrt_product(&cov_a, &cov_b) + trace_sqrt_product(&cov_b, &cov_a));
    Ok((mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0))
}

/// RMSE over coordinates with `m_d = 0`.
pub fn rmse_imputation(
    imputed: &[Vec<f64>],
    truth: &[Vec<f64>],
    masks: &[Mask],
) -> Result<f64, EvalError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ((x, t), m) in imputed.iter().zip(truth).zip(masks) {
        if x.len() != t.len() || m.len() != t.len() {
            return Err(EvalError::Dimension {
                expected: t.len(),
                got: x.len().min(m.len()),
            });
        }
        for d in (0..t.len()).filter(|&d| !m.is_observed(d)) {
            total += (x[d] - t[d]).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::NothingMissing);
    }
    Ok((total / count as f64).sqrt())
}

fn check_histogram(h: &[f64]) -> Result<(), EvalError> {
    if let Some(&v) = h.iter().find(|&&v| v < 0.0) {
        return Err(EvalError::NegativeMass(v));
    }
    let total: f64 = h.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(EvalError::NotNormalized(total));
    }
    Ok(())
}

/// `½ Σ |a − b|` over a shared support.
pub fn tv_distance(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    check_histogram(a)?;
    check_histogram(b)?;
    Ok((0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()).min(1.0))
}

/// [`tv_distance`] on histograms keyed by outcome; missing keys have mass 0.
pub fn tv_distance_keyed<K: Ord + Clone>(
    a: &BTreeMap<K, f64>,
    b: &BTreeMap<K, f64>,
) -> Result<f64, EvalError> {
    let keys: std::collections::BTreeSet<&K> = a.keys().chain(b.keys()).collect();
    let get = |h: &BTreeMap<K, f64>, k: &K| h.get(k).copied().unwrap_or(0.0);
    let va: Vec<f64> = keys.iter().map(|k| get(a, k)).collect();
    let vb: Vec<f64> = keys.iter().map(|k| get(b, k)).collect();
    tv_distance(&va, &vb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Baseline {
    Zero,
    Mean,
    MatrixFactorization {
        #[serde(default = "default_rank")]
        rank: usize,
        #[serde(default = "default_iters")]
        iters: usize,
        #[serde(default = "default_reg")]
        reg: f64,
    },
}

fn default_rank() -> usize {
    8
}
fn default_iters() -> usize {
    100
}
fn default_reg() -> f64 {
    1e-3
}

impl Baseline {
    pub fn matrix_factorization() -> Self {
        Baseline::MatrixFactorization {
            rank: default_rank(),
            iters: default_iters(),
            reg: default_reg(),
        }
    }
}

/// Fills missing entries; observed entries are copied unchanged.
pub fn baseline_impute(
    data: &IncompleteDataset,
    kind: Baseline,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let (rows, n) = (data.len(), data.dim());
    let fill: Box<dyn Fn(usize, usize) -> f64> = match kind {
        Baseline::Zero => Box::new(|_, _| 0.0),
        Baseline::Mean => {
            let mut sums = vec![0.0; n];
            let mut counts = vec![0usize; n];
            for i in 0..rows {
                let m = data.mask(i);
                for (d, &v) in data
                    .x(i)
                    .iter()
                    .enumerate()
                    .filter(|&(d, _)| m.is_observed(d))
                {
                    sums[d] += v;
                    counts[d] += 1;
                }
            }
            let means: Vec<f64> = sums
                .iter()
                .zip(&counts)
                .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
                .collect();
            Box::new(move |_, d| means[d])
        }
        Baseline::MatrixFactorization { rank, iters, reg } => {
            let (u, v) = als(data, rank, iters, reg)?;
            Box::new(move |i, d| u.row(i).dot(&v.row(d)))
        }
    };
    Ok((0..rows)
        .map(|i| {
            let m = data.mask(i);
            data.x(i)
                .iter()
                .enumerate()
                .map(|(d, &v)| if m.is_observed(d) { v } else { fill(i, d) })
                .collect()
        })
        .collect())
}

/// Alternating ridge regressions for `X ≈ U Vᵀ` on observed entries.
fn als(
    data: &IncompleteDataset,
    rank: usize,
    iters: usize,
    reg: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), EvalError> {
    let (rows, n) = (data.len(), data.dim());
    let limit = rows.min(n);
    if rank == 0 || rank >= limit {
        return Err(EvalError::RankTooLarge { rank, limit });
    }
    let masks = data.masks();
    let mut rng = Rng::seed_from_u64(0);
    let mut init =
        |r: usize| DMatrix::from_fn(r, rank, |_, _| 0.1 * standard_normal(&mut rng) + 0.1);
    let mut u: DMatrix<f64> = init(rows);
    let mut v: DMatrix<f64> = init(n);

    // Solves min_w Σ_{j ∈ obs} (y_j − f_j·w)² + reg‖w‖².
    let ridge = |factors: &DMatrix<f64>,
                 obs: &mut dyn Iterator<Item = (usize, f64)>|
     -> Result<DVector<f64>, EvalError> {
        let mut gram = DMatrix::identity(rank, rank) * reg;
        let mut rhs = DVector::zeros(rank);
        for (j, y) in obs {
            let f = factors.row(j).transpose();
            gram += &f * f.transpose();
            rhs += f * y;
        }
        gram.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(EvalError::Singular)
    };

    for _ in 0..iters {
        for (i, m) in masks.iter().enumerate() {
            let x = data.x(i);
            let mut obs = (0..n).filter(|&d| m.is_observed(d)).map(|d| (d, x[d]));
            let w = ridge(&v, &mut obs)?;
            u.set_row(i, &w.transpose());
        }
        for d in 0..n {
            let mut obs = (0..rows)
                .filter(|&i| masks[i].is_observed(d))
                .map(|i| (i, data.x(i)[d]));
            let w = ridge(&u, &mut obs)?;
            v.set_row(d, &w.transpose());
        }
    }
    Ok((u, v))
}

/// Summary written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv_mask: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv_data: Option<f64>,
    pub sample_counts: [usize; 2],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn gaussian(rng: &mut Rng, count: usize, mean: &[f64], sd: f64) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                mean.iter()
                    .map(|&m| m + sd * standard_normal(rng))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn fid_of_identical_sets_is_zero() {
        let mut rng = stream(1, Stream::Eval);
        let a = gaussian(&mut rng, 500, &[0.0, 1.0, -2.0], 1.5);
        assert!(frechet_distance(&a, &a, &FeatureMap::Identity).unwrap() <= 1e-8);
    }

    #[test]
    fn fid_equal_covariance_gaussians() {
        let mut rng = stream(2, Stream::Eval);
        let a = gaussian(&mut rng, 10_000, &[0.0, 0.0], 1.0);
        let b = gaussian(&mut rng, 10_000, &[1.0, 2.0], 1.0);
        let d = frechet_distance(&a, &b, &FeatureMap::Identity).unwrap();
        assert!((d - 5.0).abs() < 0.05 * 5.0, "{d}");
        assert_eq!(d, frechet_distance(&b, &a, &FeatureMap::Identity).unwrap());
    }

    #[test]
    fn fid_univariate_scale() {
        let mut rng = stream(1, Stream::Eval);
        let a = gaussian(&mut rng, 10_000, &[0.0], 1.0);
        let b = gaussian(&mut rng, 10_000, &[0.0], 2.0);
        let d = frechet_distance(&a, &b, &FeatureMap::Identity).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
        // Univariate closed form on the fitted moments.
        let fit = |xs: &[Vec<f64>]| {
            let m = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x[0] - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            (m, (v + COVARIANCE_RIDGE).sqrt())
        };
        let ((ma, sa), (mb, sb)) = (fit(&a), fit(&b));
        let exact = (ma - mb).powi(2) + (sa - sb).powi(2);
        assert!((d - exact).abs() < 1e-9, "{d} vs {exact}");
    }

    #[test]
    fn fid_needs_two_samples() {
        let a = vec![vec![1.0]];
        assert_eq!(
            frechet_distance(&a, &a, &FeatureMap::Identity).unwrap_err(),
            EvalError::TooFewSamples(1)
        );
    }

    #[test]
    fn projection_is_deterministic() {
        let xs = vec![vec![1.0; 16], vec![0.5; 16]];
        let f = FeatureMap::default();
        assert_eq!(f.apply(&xs).unwrap(), f.apply(&xs).unwrap());
        assert_eq!(f.apply(&xs).unwrap()[0].len(), 8);
        assert!(FeatureMap::FixedRandomLinear {
            seed: 1,
            out_dim: 17
        }
        .apply(&xs)
        .is_err());
    }

    #[test]
    fn rmse_examples() {
        let truth = vec![vec![1.0, 2.0]];
        let m = vec![Mask::new(vec![1, 0]).unwrap()];
        assert_eq!(rmse_imputation(&truth, &truth, &m).unwrap(), 0.0);
        assert_eq!(rmse_imputation(&[vec![1.0, 2.5]], &truth, &m).unwrap(), 0.5);
        let ones = vec![vec![1.0; 3]; 4];
        let zeros = vec![vec![0.0; 3]; 4];
        let missing = vec![Mask::zeros(3); 4];
        assert_eq!(rmse_imputation(&zeros, &ones, &missing).unwrap(), 1.0);
        assert_eq!(
            rmse_imputation(&truth, &truth, &[Mask::ones(2)]).unwrap_err(),
            EvalError::NothingMissing
        );
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(
            tv_distance(&[0.5, 0.6], &[1.0, 0.0]),
            Err(EvalError::NotNormalized(_))
        ));
        let a = BTreeMap::from([("x", 1.0)]);
        let b = BTreeMap::from([("y", 1.0)]);
        assert_eq!(tv_distance_keyed(&a, &b).unwrap(), 1.0);
    }

    fn dataset(rows: &[Vec<f64>], masks: &[Mask]) -> IncompleteDataset {
        IncompleteDataset::new(rows, masks).unwrap()
    }

    #[test]
    fn zero_and_mean_baselines() {
        let rows = vec![vec![0.2, 5.0], vec![0.4, 6.0], vec![9.0, 7.0]];
        let masks = vec![Mask::ones(2), Mask::ones(2), Mask::new(vec![0, 1]).unwrap()];
        let d = dataset(&rows, &masks);
        assert_eq!(
            baseline_impute(&d, Baseline::Zero).unwrap()[2],
            vec![0.0, 7.0]
        );
        let mean = baseline_impute(&d, Baseline::Mean).unwrap();
        assert!((mean[2][0] - 0.3).abs() < 1e-15);
        assert_eq!(mean[0], rows[0]);
    }

    #[test]
    fn mean_of_never_observed_column_is_zero() {
        let rows = vec![vec![1.0, 2.0]; 2];
        let d = dataset(
            &rows,
            &[
                Mask::new(vec![1, 0]).unwrap(),
                Mask::new(vec![1, 0]).unwrap(),
            ],
        );
        assert_eq!(
            baseline_impute(&d, Baseline::Mean).unwrap()[0],
            vec![1.0, 0.0]
        );
    }

    #[test]
    fn rank_one_recovery() {
        let mut rng = stream(4, Stream::Data);
        let a: Vec<f64> = (0..60)
            .map(|_| 1.0 + standard_normal(&mut rng) * 0.3)
            .collect();
        let b: Vec<f64> = (0..12)
            .map(|_| 1.0 + standard_normal(&mut rng) * 0.3)
            .collect();
        let rows: Vec<Vec<f64>> = a
            .iter()
            .map(|x| b.iter().map(|y| x * y).collect())
            .collect();
        let mut mrng = stream(4, Stream::Mask);
        let masks: Vec<Mask> = rows
            .iter()
            .map(|_| crate::masking::sample_dropout_mask(&mut mrng, 12, 0.3).unwrap())
            .collect();
        let d = dataset(&rows, &masks);
        let kind = Baseline::MatrixFactorization {
            rank: 1,
            iters: 100,
            reg: 1e-3,
        };
        let filled = baseline_impute(&d, kind).unwrap();
        let rmse = rmse_imputation(&filled, &rows, &masks).unwrap();
        assert!(rmse < 1e-3, "{rmse}");
        for (f, (r, m)) in filled.iter().zip(rows.iter().zip(&masks)) {
            for dd in 0..12 {
                if m.is_observed(dd) {
                    assert_eq!(f[dd].to_bits(), r[dd].to_bits());
                }
            }
        }
    }

    #[test]
    fn rank_must_be_small() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 5];
        let d = dataset(&rows, &vec![Mask::ones(3); 5]);
        let kind = Baseline::MatrixFactorization {
            rank: 3,
            iters: 1,
            reg: 1e-3,
        };
        assert_eq!(
            baseline_impute(&d, kind).unwrap_err(),
            EvalError::RankTooLarge { rank: 3, limit: 3 }
        );
    }
}
