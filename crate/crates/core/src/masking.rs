//! The masking operator `f_τ(x, m) = x ⊙ m + τ · m̄` and the MCAR mask
//! mechanisms used by the experiments.
//!
//! Masks are flat row-major bit vectors (`1` = observed); spatial shape only
//! matters while sampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("length mismatch: data has {data} entries, mask has {mask}")]
    LengthMismatch { data: usize, mask: usize },
    #[error("mask entries must be 0 or 1, found {0}")]
    NotBinary(u8),
    #[error("square side {k} does not fit a {height}×{width} image")]
    SquareTooLarge {
        k: usize,
        height: usize,
        width: usize,
    },
    #[error("dropout rate {0} is outside [0, 1]")]
    BadRate(f64),
    #[error("quadrant masks need even image dimensions, got {height}×{width}")]
    OddQuadrant { height: usize, width: usize },
    #[error("image shape {height}×{width} does not match data dimension {n}")]
    ShapeMismatch {
        height: usize,
        width: usize,
        n: usize,
    },
    #[error("cannot enumerate dropout masks over {0} coordinates")]
    TooManyMasks(usize),
}

/// Largest dimension for which dropout masks are enumerated exactly.
pub const MAX_ENUMERATED_DIM: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mask {
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(bits: Vec<u8>) -> Result<Self, MaskError> {
        if let Some(&b) = bits.iter().find(|&&b| b > 1) {
            return Err(MaskError::NotBinary(b));
        }
        Ok(Self { bits })
    }

    pub fn ones(n: usize) -> Self {
        Self { bits: vec![1; n] }
    }

    pub fn zeros(n: usize) -> Self {
        Self { bits: vec![0; n] }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_observed(&self, d: usize) -> bool {
        self.bits[d] == 1
    }

    pub fn observed_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn missing_rate(&self) -> f64 {
        1.0 - self.observed_count() as f64 / self.bits.len() as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(b)).collect()
    }

    /// Rounds relaxed mask values at 0.5.
    pub fn threshold(soft: &[f64]) -> Self {
        Self {
            bits: soft.iter().map(|&v| u8::from(v > 0.5)).collect(),
        }
    }
}

/// `f_τ(x, m)`: observed coordinates are copied, the rest set to `τ`.
pub fn apply_mask(x: &[f64], m: &Mask, tau: f64) -> Result<Vec<f64>, MaskError> {
    if x.len() != m.len() {
        return Err(MaskError::LengthMismatch {
            data: x.len(),
            mask: m.len(),
        });
    }
    Ok(x.iter()
        .zip(&m.bits)
        .map(|(&v, &b)| if b == 1 { v } else { tau })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(self) -> usize {
        self.height * self.width
    }
}

fn iproduct(a: usize, b: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..a).flat_map(move |i| (0..b).map(move |j| (i, j)))
}

fn rect_mask(shape: ImageShape, top: usize, left: usize, h: usize, w: usize) -> Mask {
    let mut bits = vec![0; shape.pixels()];
    for r in top..top + h {
        bits[r * shape.width + left..r * shape.width + left + w].fill(1);
    }
    Mask { bits }
}

/// Everything missing except a `k × k` square with uniformly placed corner.
pub fn sample_square_mask(rng: &mut Rng, shape: ImageShape, k: usize) -> Result<Mask, MaskError> {
    if k == 0 || k > shape.height.min(shape.width) {
        return Err(MaskError::SquareTooLarge {
            k,
            height: shape.height,
            width: shape.width,
        });
    }
    let top = rng.random_range(0..=shape.height - k);
    let left = rng.random_range(0..=shape.width - k);
    Ok(rect_mask(shape, top, left, k, k))
}

/// Each coordinate independently missing with probability `rate`.
pub fn sample_dropout_mask(rng: &mut Rng, n: usize, rate: f64) -> Result<Mask, MaskError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(MaskError::BadRate(rate));
    }
    Ok(Mask {
        bits: (0..n)
            .map(|_| u8::from(rng.random::<f64>() >= rate))
            .collect(),
    })
}

/// Inclusive side-length range `[⌈L/4⌉, ⌊3L/4⌋]` of the observed rectangle.
pub fn variable_rect_bounds(length: usize) -> (usize, usize) {
    let lo = length.div_ceil(4);
    let hi = (3 * length / 4).max(lo);
    (lo, hi)
}

/// Observed rectangle whose height and width are drawn independently and
/// uniformly from [`variable_rect_bounds`], placed uniformly.
pub fn sample_variable_rect_mask(rng: &mut Rng, shape: ImageShape) -> Mask {
    let (h_lo, h_hi) = variable_rect_bounds(shape.height);
    let (w_lo, w_hi) = variable_rect_bounds(shape.width);
    let h = rng.random_range(h_lo..=h_hi);
    let w = rng.random_range(w_lo..=w_hi);
    let top = rng.random_range(0..=shape.height - h);
    let left = rng.random_range(0..=shape.width - w);
    rect_mask(shape, top, left, h, w)
}

/// One of the four non-overlapping quadrants observed, each with
/// probability 1/4. Quadrants are numbered row-major: 0 top-left,
/// 1 top-right, 2 bottom-left, 3 bottom-right.
pub fn sample_quadrant_mask(rng: &mut Rng, shape: ImageShape) -> Result<Mask, MaskError> {
    quadrant_mask(shape, rng.random_range(0..4))
}

pub fn quadrant_mask(shape: ImageShape, quadrant: usize) -> Result<Mask, MaskError> {
    if !shape.height.is_multiple_of(2) || !shape.width.is_multiple_of(2) {
        return Err(MaskError::OddQuadrant {
            height: shape.height,
            width: shape.width,
        });
    }
    let (h, w) = (shape.height / 2, shape.width / 2);
    let top = if quadrant >= 2 { h } else { 0 };
    let left = if quadrant % 2 == 1 { w } else { 0 };
    Ok(rect_mask(shape, top, left, h, w))
}

/// Mask mechanism as selected in experiment configs, e.g.
/// `{"mechanism": "square", "k": 9, "image_shape": {"height": 28, "width": 28}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskMechanism {
    Square {
        k: usize,
        image_shape: ImageShape,
    },
    Dropout {
        rate: f64,
    },
    #[serde(rename = "var_rect")]
    VariableRect {
        image_shape: ImageShape,
    },
    Quadrant {
        image_shape: ImageShape,
    },
}

impl MaskMechanism {
    /// Checks parameters against a data dimension `n`.
    pub fn validate(&self, n: usize) -> Result<(), MaskError> {
        let check_shape = |s: ImageShape| {
            if s.pixels() != n {
                Err(MaskError::ShapeMismatch {
                    height: s.height,
                    width: s.width,
                    n,
                })
            } else {
                Ok(())
            }
        };
        match *self {
            MaskMechanism::Square { k, image_shape } => {
                check_shape(image_shape)?;
                if k == 0 || k > image_shape.height.min(image_shape.width) {
                    return Err(MaskError::SquareTooLarge {
                        k,
                        height: image_shape.height,
                        width: image_shape.width,
                    });
                }
                Ok(())
            }
            MaskMechanism::Dropout { rate } => {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(MaskError::BadRate(rate));
                }
                Ok(())
            }
            MaskMechanism::VariableRect { image_shape } => check_shape(image_shape),
            MaskMechanism::Quadrant { image_shape } => {
                check_shape(image_shape)?;
                quadrant_mask(image_shape, 0).map(|_| ())
            }
        }
    }

    /// Exact support of the mechanism with probabilities, sorted by mask.
    pub fn exact_distribution(&self, n: usize) -> Result<Vec<(Mask, f64)>, MaskError> {
        self.validate(n)?;
        let mut out: Vec<(Mask, f64)> = match *self {
            MaskMechanism::Dropout { rate } => {
                if n > MAX_ENUMERATED_DIM {
                    return Err(MaskError::TooManyMasks(n));
                }
                (0..1usize << n)
                    .map(|code| {
                        let bits: Vec<u8> =
                            (0..n).map(|d| ((code >> (n - 1 - d)) & 1) as u8).collect();
                        let observed = bits.iter().filter(|&&b| b == 1).count() as i32;
                        let p = (1.0 - rate).powi(observed) * rate.powi(n as i32 - observed);
                        (Mask { bits }, p)
                    })
                    .filter(|(_, p)| *p > 0.0)
                    .collect()
            }
            MaskMechanism::Square { k, image_shape: s } => {
                let places = (s.height - k + 1) * (s.width - k + 1);
                iproduct(s.height - k + 1, s.width - k + 1)
                    .map(|(t, l)| (rect_mask(s, t, l, k, k), 1.0 / places as f64))
                    .collect()
            }
            MaskMechanism::VariableRect { image_shape: s } => {
                let (h_lo, h_hi) = variable_rect_bounds(s.height);
                let (w_lo, w_hi) = variable_rect_bounds(s.width);
                let sizes = ((h_hi - h_lo + 1) * (w_hi - w_lo + 1)) as f64;
                let mut v = Vec::new();
                for h in h_lo..=h_hi {
                    for w in w_lo..=w_hi {
                        let places = ((s.height - h + 1) * (s.width - w + 1)) as f64;
                        v.extend(
                            iproduct(s.height - h + 1, s.width - w + 1)
                                .map(|(t, l)| (rect_mask(s, t, l, h, w), 1.0 / (sizes * places))),
                        );
                    }
                }
                v
            }
            MaskMechanism::Quadrant { image_shape } => (0..4)
                .map(|i| quadrant_mask(image_shape, i).map(|m| (m, 0.25)))
                .collect::<Result<_, _>>()?,
        };
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    pub fn sample(&self, rng: &mut Rng, n: usize) -> Result<Mask, MaskError> {
        self.validate(n)?;
        match *self {
            MaskMechanism::Square { k, image_shape } => sample_square_mask(rng, image_shape, k),
            MaskMechanism::Dropout { rate } => sample_dropout_mask(rng, n, rate),
            MaskMechanism::VariableRect { image_shape } => {
                Ok(sample_variable_rect_mask(rng, image_shape))
            }
            MaskMechanism::Quadrant { image_shape } => sample_quadrant_mask(rng, image_shape),
        }
    }
}
