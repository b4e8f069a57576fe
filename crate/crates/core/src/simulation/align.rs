//! Orthogonal Procrustes alignment of estimated factors to simulation truth.
//! Used for validation only; the estimator never sees the truth.

use nalgebra::DMatrix;

/// `R` minimizing `‖source·R − target‖_F` over matrices with orthonormal
/// columns (or rows, when `source` has fewer columns than `target`).
pub fn procrustes(source: &DMatrix<f64>, target: &DMatrix<f64>) -> DMatrix<f64> {
    let m = source.tr_mul(target);
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    u * v_t
}

/// Rotates estimated loadings and the matching d×k coefficient matrix onto
/// the truth's factor basis. Returns `(L̂R, Ω̂R)`.
pub fn procrustes_align(
    l_hat: &DMatrix<f64>,
    l_true: &DMatrix<f64>,
    omega_hat: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = procrustes(l_hat, l_true);
    (l_hat * &r, omega_hat * &r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_rotation() {
        let l = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0, -1.0, 3.0]);
        let (s, c) = (0.3_f64.sin(), 0.3_f64.cos());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let rotated = &l * rot.transpose();
        let r = procrustes(&rotated, &l);
        assert_relative_eq!(&rotated * r, l, epsilon = 1e-12);
    }
}
