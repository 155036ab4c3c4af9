use super::simplex::{FeasibleBasis, LpError};
use super::IdentifyError;
use nalgebra::DMatrix;

/// Coordinate-wise `max − min` above this means the solution set is not a point.
pub const UNIQUENESS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Uniqueness {
    Unique(Vec<f64>),
    /// Two feasible solutions that differ by `spread` in `coordinate`.
    NonUnique {
        witness_a: Vec<f64>,
        witness_b: Vec<f64>,
        coordinate: usize,
        spread: f64,
    },
}

impl Uniqueness {
    pub fn is_unique(&self) -> bool {
        matches!(self, Uniqueness::Unique(_))
    }
}

/// Decides whether `{p ≥ 0 : T p = y}` is a single point by solving
/// `max p_i` and `min p_i` for every coordinate.
pub fn unique_nonneg_solution(t: &DMatrix<f64>, y: &[f64]) -> Result<Uniqueness, IdentifyError> {
    let all: Vec<usize> = (0..t.ncols()).collect();
    unique_nonneg_solution_on(t, y, &all)
}

/// As [`unique_nonneg_solution`], with every variable outside `columns`
/// pinned to zero. Witnesses are reported in the full coordinate space.
pub fn unique_nonneg_solution_on(
    t: &DMatrix<f64>,
    y: &[f64],
    columns: &[usize],
) -> Result<Uniqueness, IdentifyError> {
    if y.len() != t.nrows() {
        return Err(IdentifyError::DimensionMismatch {
            what: "right-hand side",
            expected: t.nrows(),
            got: y.len(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..t.nrows())
        .map(|i| columns.iter().map(|&j| t[(i, j)]).collect())
        .collect();
    let basis = FeasibleBasis::new(&rows, y).map_err(|e| match e {
        LpError::Infeasible(r) => IdentifyError::Infeasible(r),
        other => IdentifyError::Lp(other),
    })?;
    let embed = |x: Vec<f64>| {
        let mut full = vec![0.0; t.ncols()];
        for (&j, v) in columns.iter().zip(x) {
            full[j] = v;
        }
        full
    };

    let k = columns.len();
    let mut objective = vec![0.0; k];
    for i in 0..k {
        objective[i] = 1.0;
        let (lo, x_lo) = basis.minimize(&objective)?;
        objective[i] = -1.0;
        let (neg_hi, x_hi) = basis.minimize(&objective)?;
        objective[i] = 0.0;
        let spread = -neg_hi - lo;
        if spread > UNIQUENESS_TOL {
            return Ok(Uniqueness::NonUnique {
                witness_a: embed(x_hi),
                witness_b: embed(x_lo),
                coordinate: columns[i],
                spread,
            });
        }
    }
    Ok(Uniqueness::Unique(embed(basis.point())))
}
