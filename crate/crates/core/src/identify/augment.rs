use super::transition::{build_transition_at, check_len};
use super::uniqueness::{unique_nonneg_solution_on, Uniqueness};
use super::{
    Alphabet, IdentifyError, MaskDistribution, Symbol, TransitionMatrix, DEFAULT_STATE_LIMIT,
};

/// The masking problem over `P' = P ∪ {ψ}` with `τ = ψ`, where a `ψ` in an
/// observation marks exactly the missing coordinates.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    original: Alphabet,
    alphabet: Alphabet,
    transition: TransitionMatrix,
    /// Index in `P'ⁿ` of every state of `Pⁿ`, in `Pⁿ` order.
    embedding: Vec<usize>,
}

/// Appends the reserved marker `ψ` to the alphabet and builds `T'_{q,ψ}`.
pub fn augment_alphabet(
    q: &MaskDistribution,
    alphabet: &Alphabet,
) -> Result<AugmentedSystem, IdentifyError> {
    let mut symbols = alphabet.symbols().to_vec();
    if symbols.contains(&Symbol::Psi) {
        return Err(IdentifyError::BadAlphabet);
    }
    symbols.push(Symbol::Psi);
    let augmented = Alphabet::from_symbols(symbols, alphabet.dim(), DEFAULT_STATE_LIMIT)?;
    let psi_pos = augmented.radix() - 1;
    let transition = build_transition_at(q, &augmented, psi_pos)?;
    let embedding = (0..alphabet.state_count())
        .map(|s| augmented.state_index(&alphabet.digits(s)))
        .collect();
    Ok(AugmentedSystem {
        original: alphabet.clone(),
        alphabet: augmented,
        transition,
        embedding,
    })
}

impl AugmentedSystem {
    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }

    pub fn original_states(&self) -> &[usize] {
        &self.embedding
    }

    /// Extends a vector over `Pⁿ` by zeros on states containing `ψ`.
    pub fn embed(&self, p: &[f64]) -> Result<Vec<f64>, IdentifyError> {
        check_len("state vector", self.original.state_count(), p.len())?;
        let mut out = vec![0.0; self.alphabet.state_count()];
        for (&j, &v) in self.embedding.iter().zip(p) {
            out[j] = v;
        }
        Ok(out)
    }

    /// Uniqueness of `{p' ≥ 0 : T' p' = T' p*', p'(s) = 0 for s ∉ Pⁿ}`.
    /// Witnesses are reported over `P'ⁿ`.
    pub fn uniqueness(&self, p_star: &[f64]) -> Result<Uniqueness, IdentifyError> {
        let embedded = self.embed(p_star)?;
        let y = self.transition.apply(&embedded)?;
        unique_nonneg_solution_on(self.transition.entries(), &y, &self.embedding)
    }
}
