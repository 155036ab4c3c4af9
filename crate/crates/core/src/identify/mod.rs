//! Exact identifiability analysis for MCAR masking over a finite alphabet.
//!
//! Data vectors take values in `Pⁿ` for a finite alphabet `P`. A mask
//! distribution `q` over `{0,1}ⁿ` and a fill value `τ` induce a
//! column-stochastic transition matrix that maps a data distribution to the
//! distribution of its `τ`-masked observations. This module builds those
//! matrices, computes their null spaces, reconstructs observed marginals from
//! masked distributions and decides whether the non-negative preimage of a
//! masked distribution is unique.
//!
//! Indexing conventions, shared by every function here:
//!
//! * masks are indexed `0..2ⁿ` in lexicographic order, coordinate 0 being the
//!   most significant bit (`n = 2` gives `00, 01, 10, 11`);
//! * states are indexed `0..|P|ⁿ` in lexicographic order over alphabet
//!   positions, coordinate 0 most significant.

mod augment;
mod marginals;
mod nullspace;
pub mod simplex;
mod transition;
mod uniqueness;

pub use augment::{augment_alphabet, AugmentedSystem};
pub use marginals::{marginals, reconstruct_marginals, MarginalTable, Marginals};
pub use nullspace::{null_space, nullspace_residual, same_nullspace, DEFAULT_NULL_TOL};
pub use transition::{apply_transition_via_marginals, build_transition, TransitionMatrix};
pub use uniqueness::{
    unique_nonneg_solution, unique_nonneg_solution_on, Uniqueness, UNIQUENESS_TOL,
};

use std::fmt;
use thiserror::Error;

/// Default cap on `|P|ⁿ` (and on `2ⁿ`).
pub const DEFAULT_STATE_LIMIT: usize = 100_000;

/// Tolerance on `Σ probs = 1` for distributions.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentifyError {
    #[error("state space of size {size} exceeds the limit {limit}")]
    StateSpaceTooLarge { size: u128, limit: usize },
    #[error(
        "fill value {0} is not in the alphabet (augment the alphabet to use an outside value)"
    )]
    TauNotInAlphabet(f64),
    #[error("alphabet must be non-empty with distinct values")]
    BadAlphabet,
    #[error("{what}: {reason}")]
    BadDistribution { what: &'static str, reason: String },
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("masked distribution is inconsistent at state {state:?} (residual {residual:e})")]
    Inconsistent { state: Vec<Symbol>, residual: f64 },
    #[error("linear system has no non-negative solution (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("simplex failed: {0}")]
    Lp(#[from] simplex::LpError),
}

/// One feature value. `Psi` is the reserved out-of-alphabet marker used by
/// the augmented construction; it never compares equal to a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Symbol {
    Value(f64),
    Psi,
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Value(v) => write!(f, "{v}"),
            Symbol::Psi => f.write_str("ψ"),
        }
    }
}

/// Finite alphabet `P` together with the dimensionality `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    symbols: Vec<Symbol>,
    n: usize,
    size: usize,
}

impl Alphabet {
    pub fn new(values: &[f64], n: usize) -> Result<Self, IdentifyError> {
        Self::with_limit(values, n, DEFAULT_STATE_LIMIT)
    }

    pub fn with_limit(values: &[f64], n: usize, limit: usize) -> Result<Self, IdentifyError> {
        let symbols = values.iter().map(|&v| Symbol::Value(v)).collect();
        Self::from_symbols(symbols, n, limit)
    }

    pub(crate) fn from_symbols(
        symbols: Vec<Symbol>,
        n: usize,
        limit: usize,
    ) -> Result<Self, IdentifyError> {
        if symbols.is_empty() || n == 0 {
            return Err(IdentifyError::BadAlphabet);
        }
        for (i, a) in symbols.iter().enumerate() {
            if let Symbol::Value(v) = a {
                if !v.is_finite() {
                    return Err(IdentifyError::BadAlphabet);
                }
            }
            if symbols[..i].contains(a) {
                return Err(IdentifyError::BadAlphabet);
            }
        }
        let size = checked_pow(symbols.len(), n, limit)?;
        checked_pow(2, n, limit)?;
        Ok(Self { symbols, n, size })
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    /// Number of distinct values `|P|`.
    pub fn radix(&self) -> usize {
        self.symbols.len()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `|P|ⁿ`.
    pub fn state_count(&self) -> usize {
        self.size
    }

    pub fn mask_count(&self) -> usize {
        1 << self.n
    }

    /// Position of a numeric value in the alphabet.
    pub fn position(&self, value: f64) -> Option<usize> {
        self.symbols.iter().position(|s| *s == Symbol::Value(value))
    }

    /// Alphabet positions of each coordinate of `state`.
    pub fn digits(&self, state: usize) -> Vec<usize> {
        let k = self.radix();
        let mut out = vec![0; self.n];
        let mut s = state;
        for d in (0..self.n).rev() {
            out[d] = s % k;
            s /= k;
        }
        out
    }

    pub fn state_index(&self, digits: &[usize]) -> usize {
        digits.iter().fold(0, |acc, &d| acc * self.radix() + d)
    }

    pub fn state_symbols(&self, state: usize) -> Vec<Symbol> {
        self.digits(state)
            .into_iter()
            .map(|d| self.symbols[d])
            .collect()
    }

    /// `f_τ(s, m)` on indices: unobserved coordinates replaced by `tau_pos`.
    pub fn mask_state(&self, state: usize, mask: usize, tau_pos: usize) -> usize {
        let mut digits = self.digits(state);
        for (d, digit) in digits.iter_mut().enumerate() {
            if !mask_bit(mask, self.n, d) {
                *digit = tau_pos;
            }
        }
        self.state_index(&digits)
    }
}

fn checked_pow(base: usize, exp: usize, limit: usize) -> Result<usize, IdentifyError> {
    let size = (base as u128).checked_pow(exp as u32).unwrap_or(u128::MAX);
    if exp > 64 || size > limit as u128 {
        return Err(IdentifyError::StateSpaceTooLarge { size, limit });
    }
    Ok(size as usize)
}

/// Whether coordinate `d` is observed under mask index `mask`.
pub fn mask_bit(mask: usize, n: usize, d: usize) -> bool {
    (mask >> (n - 1 - d)) & 1 == 1
}

/// All `2ⁿ` masks as bit vectors, in lexicographic order.
pub fn enumerate_masks(n: usize) -> Result<Vec<Vec<u8>>, IdentifyError> {
    enumerate_masks_with_limit(n, DEFAULT_STATE_LIMIT)
}

pub fn enumerate_masks_with_limit(n: usize, limit: usize) -> Result<Vec<Vec<u8>>, IdentifyError> {
    let count = checked_pow(2, n, limit)?;
    Ok((0..count)
        .map(|m| (0..n).map(|d| u8::from(mask_bit(m, n, d))).collect())
        .collect())
}

fn check_probabilities(what: &'static str, probs: &[f64]) -> Result<(), IdentifyError> {
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(IdentifyError::BadDistribution {
            what,
            reason: format!("entry {p} is negative or not finite"),
        });
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(IdentifyError::BadDistribution {
            what,
            reason: format!("entries sum to {total}, not 1"),
        });
    }
    Ok(())
}

/// Distribution `q` over `{0,1}ⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDistribution {
    n: usize,
    probs: Vec<f64>,
}

impl MaskDistribution {
    pub fn new(n: usize, probs: Vec<f64>) -> Result<Self, IdentifyError> {
        let expected = checked_pow(2, n, DEFAULT_STATE_LIMIT)?;
        if probs.len() != expected {
            return Err(IdentifyError::DimensionMismatch {
                what: "mask distribution",
                expected,
                got: probs.len(),
            });
        }
        check_probabilities("mask distribution", &probs)?;
        Ok(Self { n, probs })
    }

    /// All mass on the fully observed mask.
    pub fn fully_observed(n: usize) -> Result<Self, IdentifyError> {
        let count = checked_pow(2, n, DEFAULT_STATE_LIMIT)?;
        let mut probs = vec![0.0; count];
        probs[count - 1] = 1.0;
        Self::new(n, probs)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Support `S_q`: masks with positive probability, ascending.
    pub fn support(&self) -> Vec<usize> {
        (0..self.probs.len())
            .filter(|&m| self.probs[m] > 0.0)
            .collect()
    }

    /// `q(1…1)`.
    pub fn fully_observed_mass(&self) -> f64 {
        self.probs[self.probs.len() - 1]
    }
}

/// Distribution over the state space `Pⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(alphabet: &Alphabet, probs: Vec<f64>) -> Result<Self, IdentifyError> {
        if probs.len() != alphabet.state_count() {
            return Err(IdentifyError::DimensionMismatch {
                what: "data distribution",
                expected: alphabet.state_count(),
                got: probs.len(),
            });
        }
        check_probabilities("data distribution", &probs)?;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}
