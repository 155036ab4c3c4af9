use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold below which a direction counts as null.
pub const DEFAULT_NULL_TOL: f64 = 1e-10;

/// Orthonormal basis of `Null(T)` from the SVD: right singular vectors whose
/// singular value is at most `tol · σ_max`.
pub fn null_space(t: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let ncols = t.ncols();
    if ncols == 0 {
        return Vec::new();
    }
    // Pad to square so V is complete even for wide matrices.
    let padded;
    let square = if t.nrows() < ncols {
        padded = {
            let mut p = DMatrix::zeros(ncols, ncols);
            p.view_mut((0, 0), (t.nrows(), ncols)).copy_from(t);
            p
        };
        &padded
    } else {
        t
    };
    let svd = square.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sigma_max = svd.singular_values.max();
    let threshold = tol * sigma_max.max(f64::MIN_POSITIVE);
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= threshold)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect()
}

/// Largest `‖T_b v‖` over basis vectors of `Null(T_a)` and `‖T_a v‖` over
/// `Null(T_b)`; `+∞` when the dimensions differ or shapes are incompatible.
pub fn nullspace_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, null_tol: f64) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    let na = null_space(a, null_tol);
    let nb = null_space(b, null_tol);
    if na.len() != nb.len() {
        return f64::INFINITY;
    }
    na.iter()
        .map(|v| (b * v).norm())
        .chain(nb.iter().map(|v| (a * v).norm()))
        .fold(0.0, f64::max)
}

/// Each basis vector of `Null(T₁)` lies in `Null(T₂)` and vice versa, up to
/// residual `tol`.
pub fn same_nullspace(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    let residual = if a.shape() != b.shape() {
        f64::INFINITY
    } else {
        null_space(a, DEFAULT_NULL_TOL)
            .iter()
            .map(|v| (b * v).norm())
            .chain(
                null_space(b, DEFAULT_NULL_TOL)
                    .iter()
                    .map(|v| (a * v).norm()),
            )
            .fold(0.0, f64::max)
    };
    residual <= tol
}
