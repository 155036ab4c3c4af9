//! Built-in toy datasets with exactly known distributions.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masking::{apply_mask, Mask, MaskError};
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToyError {
    #[error("ring needs at least one cluster and a positive radius")]
    BadRing,
    #[error("bars side must be in 1..=8, got {0}")]
    BadSide(usize),
    #[error("bar probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

fn default_radius() -> f64 {
    2.0
}
fn default_clusters() -> usize {
    8
}
fn default_side() -> usize {
    6
}
fn default_bar_prob() -> f64 {
    0.2
}

/// `ring`: equally weighted point masses on a circle.
/// `bars`: binary `side × side` images, the union of rows and columns each
/// switched on independently with probability `bar_prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "toy", rename_all = "snake_case", deny_unknown_fields)]
pub enum Toy {
    Ring {
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_clusters")]
        clusters: usize,
    },
    Bars {
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default = "default_bar_prob")]
        bar_prob: f64,
    },
}

impl Toy {
    pub fn ring() -> Self {
        Toy::Ring {
            radius: default_radius(),
            clusters: default_clusters(),
        }
    }

    pub fn bars() -> Self {
        Toy::Bars {
            side: default_side(),
            bar_prob: default_bar_prob(),
        }
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        match *self {
            Toy::Ring { radius, clusters } => {
                if clusters == 0 || radius.is_nan() || radius <= 0.0 || !radius.is_finite() {
                    return Err(ToyError::BadRing);
                }
            }
            Toy::Bars { side, bar_prob } => {
                if side == 0 || side > 8 {
                    return Err(ToyError::BadSide(side));
                }
                if !(0.0..=1.0).contains(&bar_prob) {
                    return Err(ToyError::BadProbability(bar_prob));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match *self {
            Toy::Ring { .. } => 2,
            Toy::Bars { side, .. } => side * side,
        }
    }

    fn ring_point(radius: f64, clusters: usize, k: usize) -> Vec<f64> {
        let angle = std::f64::consts::TAU * k as f64 / clusters as f64;
        vec![radius * angle.cos(), radius * angle.sin()]
    }

    fn bars_image(side: usize, rows: u32, cols: u32) -> Vec<f64> {
        (0..side * side)
            .map(|i| {
                let on = rows >> (i / side) & 1 == 1 || cols >> (i % side) & 1 == 1;
                f64::from(u8::from(on))
            })
            .collect()
    }

    /// Support points with probabilities; duplicates merged, order fixed.
    pub fn support(&self) -> Result<Vec<(Vec<f64>, f64)>, ToyError> {
        self.validate()?;
        Ok(match *self {
            Toy::Ring { radius, clusters } => (0..clusters)
                .map(|k| (Self::ring_point(radius, clusters, k), 1.0 / clusters as f64))
                .collect(),
            Toy::Bars { side, bar_prob } => {
                let mut merged: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
                for rows in 0..1u32 << side {
                    for cols in 0..1u32 << side {
                        let on = (rows.count_ones() + cols.count_ones()) as i32;
                        let p = bar_prob.powi(on) * (1.0 - bar_prob).powi(2 * side as i32 - on);
                        if p == 0.0 {
                            continue;
                        }
                        let key = Self::bars_image(side, rows, cols)
                            .iter()
                            .map(|&v| v as u8)
                            .collect();
                        *merged.entry(key).or_insert(0.0) += p;
                    }
                }
                merged
                    .into_iter()
                    .map(|(k, p)| (k.into_iter().map(f64::from).collect(), p))
                    .collect()
            }
        })
    }

    pub fn sample(&self, rng: &mut Rng, count: usize) -> Result<Vec<Vec<f64>>, ToyError> {
        self.validate()?;
        Ok((0..count)
            .map(|_| match *self {
                Toy::Ring { radius, clusters } => {
                    Self::ring_point(radius, clusters, rng.random_range(0..clusters))
                }
                Toy::Bars { side, bar_prob } => {
                    let mut draw = || {
                        (0..side).fold(0u32, |acc, i| {
                            acc | u32::from(rng.random::<f64>() < bar_prob) << i
                        })
                    };
                    let rows = draw();
                    let cols = draw();
                    Self::bars_image(side, rows, cols)
                }
            })
            .collect())
    }
}

/// Masked support points closer than this in every coordinate share a class.
const MERGE_TOL: f64 = 1e-9;

/// Assigns a masked observation to the nearest distinct masked support
/// point. Two support points whose masked versions coincide share a class,
/// so classes are well defined for every mask.
#[derive(Debug, Clone)]
pub struct MaskedClassifier {
    support: Vec<Vec<f64>>,
    tau: f64,
}

impl MaskedClassifier {
    pub fn new(support: Vec<Vec<f64>>, tau: f64) -> Self {
        Self { support, tau }
    }

    pub fn from_toy(toy: &Toy, tau: f64) -> Result<Self, ToyError> {
        Ok(Self::new(
            toy.support()?.into_iter().map(|(s, _)| s).collect(),
            tau,
        ))
    }

    /// Class of `f_τ(x, m)` under mask `m`: the index of the first support
    /// point whose masked version equals that of the nearest one.
    pub fn classify(&self, x: &[f64], m: &Mask) -> Result<usize, ToyError> {
        let observed = apply_mask(x, m, self.tau)?;
        let masked: Vec<Vec<f64>> = self
            .support
            .iter()
            .map(|s| apply_mask(s, m, self.tau))
            .collect::<Result<_, _>>()?;
        let dist =
            |s: &[f64]| -> f64 { s.iter().zip(&observed).map(|(a, b)| (a - b).powi(2)).sum() };
        let nearest = masked
            .iter()
            .enumerate()
            .min_by(|a, b| dist(a.1).total_cmp(&dist(b.1)))
            .map(|(i, _)| i)
            .expect("non-empty support");
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(u, v)| (u - v).abs() <= MERGE_TOL);
        Ok(masked
            .iter()
            .position(|s| same(s, &masked[nearest]))
            .expect("present"))
    }

    /// Exact distribution of `(m, class)` for data drawn from `p` and masks
    /// from `q`.
    pub fn exact_histogram(
        &self,
        p: &[(Vec<f64>, f64)],
        q: &[(Mask, f64)],
    ) -> Result<BTreeMap<(Mask, usize), f64>, ToyError> {
        let mut hist = BTreeMap::new();
        for (m, qm) in q {
            for (s, ps) in p {
                let class = self.classify(s, m)?;
                *hist.entry((m.clone(), class)).or_insert(0.0) += qm * ps;
            }
        }
        Ok(hist)
    }

    /// Empirical distribution of `(m, class)` over paired samples.
    pub fn empirical_histogram(
        &self,
        xs: &[Vec<f64>],
        masks: &[Mask],
    ) -> Result<BTreeMap<(Mask, usize), f64>, ToyError> {
        let mut hist = BTreeMap::new();
        let w = 1.0 / xs.len().max(1) as f64;
        for (x, m) in xs.iter().zip(masks) {
            *hist.entry((m.clone(), self.classify(x, m)?)).or_insert(0.0) += w;
        }
        Ok(hist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::MaskMechanism;
    use crate::rng::{stream, Stream};

    #[test]
    fn ring_support() {
        let s = Toy::ring().support().unwrap();
        assert_eq!(s.len(), 8);
        for (x, p) in &s {
            assert!((x[0].hypot(x[1]) - 2.0).abs() < 1e-12);
            assert_eq!(*p, 0.125);
        }
    }

    #[test]
    fn bars_support_is_normalized_and_merged() {
        let s = Toy::bars().support().unwrap();
        let total: f64 = s.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // All rows on and all columns on both give the full image.
        assert!(s.len() < 1 << 12);
        let full = s.iter().find(|(x, _)| x.iter().all(|&v| v == 1.0)).unwrap();
        assert!(full.1 > 0.2f64.powi(6));
    }

    #[test]
    fn bars_samples_match_support() {
        let toy = Toy::Bars {
            side: 3,
            bar_prob: 0.3,
        };
        let support = toy.support().unwrap();
        let mut rng = stream(1, Stream::Data);
        let xs = toy.sample(&mut rng, 20_000).unwrap();
        let mut tv = 0.0;
        for (s, p) in &support {
            let freq = xs.iter().filter(|x| *x == s).count() as f64 / xs.len() as f64;
            tv += (freq - p).abs() / 2.0;
        }
        assert!(tv < 0.03, "{tv}");
    }

    #[test]
    fn masked_classes_on_ring() {
        let c = MaskedClassifier::from_toy(&Toy::ring(), 0.0).unwrap();
        let full = Mask::ones(2);
        assert_eq!(c.classify(&[2.0, 0.01], &full).unwrap(), 0);
        // Observing only the first coordinate merges clusters 1 and 7.
        let first = Mask::new(vec![1, 0]).unwrap();
        let x7 = Toy::ring().support().unwrap()[7].0.clone();
        assert_eq!(c.classify(&x7, &first).unwrap(), 1);
        assert_eq!(c.classify(&[5.0, -5.0], &Mask::zeros(2)).unwrap(), 0);
    }

    #[test]
    fn exact_masked_histogram_on_ring() {
        let toy = Toy::ring();
        let c = MaskedClassifier::from_toy(&toy, 0.0).unwrap();
        let q = MaskMechanism::Dropout { rate: 0.5 }
            .exact_distribution(2)
            .unwrap();
        let h = c.exact_histogram(&toy.support().unwrap(), &q).unwrap();
        // 8 full classes, 5 distinct projections on each axis, one empty class.
        assert_eq!(h.len(), 8 + 5 + 5 + 1);
        let total: f64 = h.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
