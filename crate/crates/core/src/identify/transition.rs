use super::marginals::{class_index, marginals_by_index};
use super::{mask_bit, Alphabet, IdentifyError, MaskDistribution, Symbol};
use nalgebra::{DMatrix, DVector};

/// Column-stochastic `T_{q,τ}`: entry `(t, s)` is the probability that state
/// `s` is observed as `t` after masking with `f_τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: DMatrix<f64>,
    tau: Symbol,
    tau_pos: usize,
    alphabet: Alphabet,
    q: MaskDistribution,
}

impl TransitionMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn tau(&self) -> Symbol {
        self.tau
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn mask_distribution(&self) -> &MaskDistribution {
        &self.q
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, IdentifyError> {
        check_len("state vector", self.entries.ncols(), x.len())?;
        Ok((&self.entries * DVector::from_column_slice(x))
            .as_slice()
            .to_vec())
    }
}

pub(super) fn check_len(
    what: &'static str,
    expected: usize,
    got: usize,
) -> Result<(), IdentifyError> {
    if expected != got {
        return Err(IdentifyError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

fn check_mask_dim(q: &MaskDistribution, alphabet: &Alphabet) -> Result<(), IdentifyError> {
    check_len("mask dimension", alphabet.dim(), q.dim())
}

pub(super) fn tau_position(alphabet: &Alphabet, tau: f64) -> Result<usize, IdentifyError> {
    alphabet
        .position(tau)
        .ok_or(IdentifyError::TauNotInAlphabet(tau))
}

/// Builds `T_{q,τ}` by enumerating every `(mask, state)` pair.
pub fn build_transition(
    q: &MaskDistribution,
    alphabet: &Alphabet,
    tau: f64,
) -> Result<TransitionMatrix, IdentifyError> {
    let tau_pos = tau_position(alphabet, tau)?;
    build_transition_at(q, alphabet, tau_pos)
}

pub(super) fn build_transition_at(
    q: &MaskDistribution,
    alphabet: &Alphabet,
    tau_pos: usize,
) -> Result<TransitionMatrix, IdentifyError> {
    check_mask_dim(q, alphabet)?;
    let size = alphabet.state_count();
    let mut entries = DMatrix::zeros(size, size);
    let support = q.support();
    for s in 0..size {
        for &m in &support {
            let t = alphabet.mask_state(s, m, tau_pos);
            entries[(t, s)] += q.probs()[m];
        }
    }
    Ok(TransitionMatrix {
        entries,
        tau: alphabet.symbols()[tau_pos],
        tau_pos,
        alphabet: alphabet.clone(),
        q: q.clone(),
    })
}

/// Masks `m ∈ S_q` consistent with `v`: `v` equals `τ` wherever `m` is 0.
pub(super) fn consistent_masks(
    alphabet: &Alphabet,
    support: &[usize],
    v: usize,
    tau_pos: usize,
) -> Vec<usize> {
    let digits = alphabet.digits(v);
    let n = alphabet.dim();
    support
        .iter()
        .copied()
        .filter(|&m| (0..n).all(|d| mask_bit(m, n, d) || digits[d] == tau_pos))
        .collect()
}

/// `(T x)(v) = Σ_{m ∈ M_{τ,v}} q(m) · x([v]_m)`, computed from marginals of
/// `x` without forming the matrix.
pub fn apply_transition_via_marginals(
    x: &[f64],
    q: &MaskDistribution,
    alphabet: &Alphabet,
    tau: f64,
) -> Result<Vec<f64>, IdentifyError> {
    let tau_pos = tau_position(alphabet, tau)?;
    apply_via_marginals_at(x, q, alphabet, tau_pos)
}

pub(super) fn apply_via_marginals_at(
    x: &[f64],
    q: &MaskDistribution,
    alphabet: &Alphabet,
    tau_pos: usize,
) -> Result<Vec<f64>, IdentifyError> {
    check_mask_dim(q, alphabet)?;
    check_len("state vector", alphabet.state_count(), x.len())?;
    let support = q.support();
    let tables: Vec<(usize, Vec<f64>)> = support
        .iter()
        .map(|&m| (m, marginals_by_index(x, alphabet, m)))
        .collect();
    let mut out = vec![0.0; alphabet.state_count()];
    for (v, slot) in out.iter_mut().enumerate() {
        let digits = alphabet.digits(v);
        for (m, masses) in &tables {
            let n = alphabet.dim();
            if (0..n).all(|d| mask_bit(*m, n, d) || digits[d] == tau_pos) {
                *slot += q.probs()[*m] * masses[class_index(alphabet, &digits, *m)];
            }
        }
    }
    Ok(out)
}
