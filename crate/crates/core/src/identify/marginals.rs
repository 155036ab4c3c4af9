use super::transition::{check_len, consistent_masks, tau_position};
use super::{mask_bit, Alphabet, IdentifyError, MaskDistribution};

/// Tolerance for the consistency checks of [`reconstruct_marginals`],
/// relative to `max(1, ‖y‖∞)`.
pub const CONSISTENCY_TOL: f64 = 1e-9;

/// Index of the `~_m` class of a state, given its digits: the observed
/// digits read as a base-`|P|` number.
pub(super) fn class_index(alphabet: &Alphabet, digits: &[usize], mask: usize) -> usize {
    let n = alphabet.dim();
    (0..n)
        .filter(|&d| mask_bit(mask, n, d))
        .fold(0, |acc, d| acc * alphabet.radix() + digits[d])
}

fn class_count(alphabet: &Alphabet, mask: usize) -> usize {
    alphabet.radix().pow(mask.count_ones())
}

pub(super) fn marginals_by_index(x: &[f64], alphabet: &Alphabet, mask: usize) -> Vec<f64> {
    let mut masses = vec![0.0; class_count(alphabet, mask)];
    for (s, &xs) in x.iter().enumerate() {
        masses[class_index(alphabet, &alphabet.digits(s), mask)] += xs;
    }
    masses
}

/// Masses `x([v]_m)` of the equivalence classes of `~_m` (states agreeing on
/// the coordinates observed under `m`).
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub mask: usize,
    /// Indexed by the observed digits read as a base-`|P|` number.
    pub masses: Vec<f64>,
}

impl Marginals {
    pub fn mass_of(&self, alphabet: &Alphabet, state: usize) -> f64 {
        self.masses[class_index(alphabet, &alphabet.digits(state), self.mask)]
    }
}

pub fn marginals(x: &[f64], alphabet: &Alphabet, mask: usize) -> Result<Marginals, IdentifyError> {
    check_len("state vector", alphabet.state_count(), x.len())?;
    check_len(
        "mask index bound",
        alphabet.mask_count(),
        alphabet.mask_count().max(mask + 1),
    )?;
    Ok(Marginals {
        mask,
        masses: marginals_by_index(x, alphabet, mask),
    })
}

/// `{x([v]_m) : m ∈ S_q, v ∈ Pⁿ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    alphabet: Alphabet,
    entries: Vec<Marginals>,
}

impl MarginalTable {
    pub fn masks(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.mask)
    }

    pub fn marginals(&self, mask: usize) -> Option<&Marginals> {
        self.entries.iter().find(|e| e.mask == mask)
    }

    /// `x([v]_m)`, or `None` when `m ∉ S_q`.
    pub fn get(&self, mask: usize, state: usize) -> Option<f64> {
        self.marginals(mask)
            .map(|m| m.mass_of(&self.alphabet, state))
    }
}

/// Recovers every marginal `x([v]_m)`, `m ∈ S_q`, from `y = T_{q,τ} x` alone.
///
/// States are processed by increasing `|M_{τ,v}|`. For a state `v₀` with
/// consistent masks `m₀…m_k` and meet `m = ⋀ m_ℓ`, the classes
/// `[v]_{m_ℓ}` for `v ∈ [v₀]_{m ∨ m̄_ℓ} \ {v₀}` belong to states with fewer
/// consistent masks and are already known, so
///
/// ```text
/// x([v₀]_m)   = (y(v₀) + Σ_ℓ q(m_ℓ) R_ℓ) / Σ_ℓ q(m_ℓ)
/// x([v₀]_m_ℓ) = x([v₀]_m) − R_ℓ,   R_ℓ = Σ_{v ∈ [v₀]_{m ∨ m̄_ℓ} \ {v₀}} x([v]_{m_ℓ})
/// ```
///
/// The range of `T` is exactly the set of vectors vanishing on states that
/// no supported mask can produce, so mass on such a state is reported as
/// inconsistent. The recovered marginals are then cross-checked: any two
/// masks must agree on their common coordinates.
pub fn reconstruct_marginals(
    y: &[f64],
    q: &MaskDistribution,
    alphabet: &Alphabet,
    tau: f64,
) -> Result<MarginalTable, IdentifyError> {
    let tau_pos = tau_position(alphabet, tau)?;
    reconstruct_marginals_at(y, q, alphabet, tau_pos)
}

pub(super) fn reconstruct_marginals_at(
    y: &[f64],
    q: &MaskDistribution,
    alphabet: &Alphabet,
    tau_pos: usize,
) -> Result<MarginalTable, IdentifyError> {
    check_len("mask dimension", alphabet.dim(), q.dim())?;
    check_len("masked distribution", alphabet.state_count(), y.len())?;
    let n = alphabet.dim();
    let size = alphabet.state_count();
    let scale = y.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = CONSISTENCY_TOL * scale;
    let support = q.support();

    let consistent: Vec<Vec<usize>> = (0..size)
        .map(|v| consistent_masks(alphabet, &support, v, tau_pos))
        .collect();
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by_key(|&v| consistent[v].len());

    let slot = |m: usize| support.binary_search(&m).expect("mask in support");
    let mut table: Vec<Vec<Option<f64>>> = support
        .iter()
        .map(|&m| vec![None; class_count(alphabet, m)])
        .collect();

    for &v0 in &order {
        let masks = &consistent[v0];
        if masks.is_empty() {
            if y[v0].abs() > tol {
                return Err(IdentifyError::Inconsistent {
                    state: alphabet.state_symbols(v0),
                    residual: y[v0].abs(),
                });
            }
            continue;
        }
        let digits0 = alphabet.digits(v0);
        let meet = masks.iter().fold(usize::MAX, |acc, &m| acc & m) & (alphabet.mask_count() - 1);

        let mut rests = Vec::with_capacity(masks.len());
        for &ml in masks {
            // Coordinates free to vary: observed by m_ℓ but not by the meet.
            let free: Vec<usize> = (0..n)
                .filter(|&d| mask_bit(ml, n, d) && !mask_bit(meet, n, d))
                .collect();
            let col = &table[slot(ml)];
            let mut rest = 0.0;
            let mut digits = digits0.clone();
            for combo in 0..alphabet.radix().pow(free.len() as u32) {
                let mut c = combo;
                for &d in free.iter().rev() {
                    digits[d] = c % alphabet.radix();
                    c /= alphabet.radix();
                }
                if digits == digits0 {
                    continue;
                }
                rest += col[class_index(alphabet, &digits, ml)]
                    .expect("classes of states with fewer consistent masks are resolved first");
            }
            rests.push(rest);
        }

        let q_total: f64 = masks.iter().map(|&m| q.probs()[m]).sum();
        let weighted: f64 = masks
            .iter()
            .zip(&rests)
            .map(|(&m, r)| q.probs()[m] * r)
            .sum();
        let meet_mass = (y[v0] + weighted) / q_total;
        for (&ml, rest) in masks.iter().zip(&rests) {
            table[slot(ml)][class_index(alphabet, &digits0, ml)] = Some(meet_mass - rest);
        }
    }

    let entries: Vec<Marginals> = support
        .iter()
        .zip(table)
        .map(|(&mask, col)| Marginals {
            mask,
            masses: col
                .into_iter()
                .map(|v| v.expect("every class of a supported mask has a canonical state"))
                .collect(),
        })
        .collect();

    check_pairwise_consistency(alphabet, &entries, tol)?;
    Ok(MarginalTable {
        alphabet: alphabet.clone(),
        entries,
    })
}

/// Marginals of two masks must agree after coarsening both to `m ∧ m'`.
fn check_pairwise_consistency(
    alphabet: &Alphabet,
    entries: &[Marginals],
    tol: f64,
) -> Result<(), IdentifyError> {
    let coarsen = |e: &Marginals, meet: usize| -> Vec<f64> {
        let mut out = vec![0.0; class_count(alphabet, meet)];
        for s in 0..alphabet.state_count() {
            let digits = alphabet.digits(s);
            // one canonical state per class: zero digits off the mask
            if (0..alphabet.dim()).any(|d| !mask_bit(e.mask, alphabet.dim(), d) && digits[d] != 0) {
                continue;
            }
            out[class_index(alphabet, &digits, meet)] +=
                e.masses[class_index(alphabet, &digits, e.mask)];
        }
        out
    };
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            let meet = a.mask & b.mask;
            let (ca, cb) = (coarsen(a, meet), coarsen(b, meet));
            if let Some((class, diff)) = ca
                .iter()
                .zip(&cb)
                .map(|(x, y)| (x - y).abs())
                .enumerate()
                .max_by(|l, r| l.1.total_cmp(&r.1))
            {
                if diff > tol {
                    let state = state_of_class(alphabet, meet, class);
                    return Err(IdentifyError::Inconsistent {
                        state: alphabet.state_symbols(state),
                        residual: diff,
                    });
                }
            }
        }
    }
    Ok(())
}

/// A representative state (zero digits off the mask) of a class.
fn state_of_class(alphabet: &Alphabet, mask: usize, class: usize) -> usize {
    let n = alphabet.dim();
    let mut digits = vec![0; n];
    let mut c = class;
    for d in (0..n).rev() {
        if mask_bit(mask, n, d) {
            digits[d] = c % alphabet.radix();
            c /= alphabet.radix();
        }
    }
    alphabet.state_index(&digits)
}
