//! Input validation, nuisance rotation and the treatment/residual split of
//! the response matrix.
//!
//! With `A` an orthonormal basis of `ker(Xᵀ)`, the response splits into
//! `Y1 = Y X (XᵀX)⁻¹` (p×d, carries the covariate effects) and `Y2 = Y A`
//! (p×(n−d), free of the design). Under Gaussian noise the two pieces are
//! independent, and `Y = Y1 Xᵀ + Y2 Aᵀ`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{check_finite, householder_complement, spd_condition, spd_inverse};

/// Largest accepted condition number of `XᵀX`.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance for accepting a caller-supplied complement basis.
const BASIS_TOL: f64 = 1e-10;

/// Response matrix plus observed covariates, with row and column labels.
#[derive(Debug, Clone)]
pub struct ObservedData {
    /// Features × samples.
    pub y: DMatrix<f64>,
    /// Samples × covariates of interest.
    pub x: DMatrix<f64>,
    /// Samples × nuisance covariates (intercept, batch, ...).
    pub z: Option<DMatrix<f64>>,
    pub feature_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    pub covariate_ids: Vec<String>,
}

impl ObservedData {
    /// Validates shapes, finiteness, rank of `[X Z]` and the `p > n` regime.
    pub fn new(
        y: DMatrix<f64>,
        x: DMatrix<f64>,
        z: Option<DMatrix<f64>>,
        feature_ids: Vec<String>,
        sample_ids: Vec<String>,
        covariate_ids: Vec<String>,
    ) -> Result<Self> {
        let data = Self {
            y,
            x,
            z,
            feature_ids,
            sample_ids,
            covariate_ids,
        };
        data.validate()?;
        Ok(data)
    }

    /// Unlabelled constructor; ids are generated as `f0, f1, ...` etc.
    pub fn unlabeled(y: DMatrix<f64>, x: DMatrix<f64>, z: Option<DMatrix<f64>>) -> Result<Self> {
        let feature_ids = (0..y.nrows()).map(|i| format!("f{i}")).collect();
        let sample_ids = (0..y.ncols()).map(|i| format!("s{i}")).collect();
        let covariate_ids = (0..x.ncols()).map(|i| format!("x{i}")).collect();
        Self::new(y, x, z, feature_ids, sample_ids, covariate_ids)
    }

    pub fn p(&self) -> usize {
        self.y.nrows()
    }

    pub fn n(&self) -> usize {
        self.y.ncols()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Number of nuisance covariates.
    pub fn r(&self) -> usize {
        self.z.as_ref().map_or(0, |z| z.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let (p, n) = self.y.shape();
        if self.x.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} samples but x has {} rows",
                self.x.nrows()
            )));
        }
        if self.x.ncols() == 0 {
            return Err(Error::Dimension("x has no columns".into()));
        }
        if let Some(z) = &self.z {
            if z.nrows() != n {
                return Err(Error::Dimension(format!(
                    "y has {n} samples but z has {} rows",
                    z.nrows()
                )));
            }
        }
        if self.feature_ids.len() != p
            || self.sample_ids.len() != n
            || self.covariate_ids.len() != self.x.ncols()
        {
            return Err(Error::Dimension("label vectors do not match matrix shapes".into()));
        }
        check_finite(&self.y, "y")?;
        check_finite(&self.x, "x")?;
        if let Some(z) = &self.z {
            check_finite(z, "z")?;
        }
        if n <= self.d() + self.r() {
            return Err(Error::Dimension(format!(
                "need more samples ({n}) than covariates ({}) plus nuisance covariates ({})",
                self.d(),
                self.r()
            )));
        }
        if p <= n {
            return Err(Error::Dimension(format!(
                "expected more features than samples, got p = {p}, n = {n}"
            )));
        }
        householder_complement(&self.joint_design(), "[x z]")?;
        Ok(())
    }

    /// `[X Z]`, or `X` when there are no nuisance covariates.
    pub fn joint_design(&self) -> DMatrix<f64> {
        match &self.z {
            None => self.x.clone(),
            Some(z) => {
                let mut xz = DMatrix::zeros(self.n(), self.d() + z.ncols());
                xz.columns_mut(0, self.d()).copy_from(&self.x);
                xz.columns_mut(self.d(), z.ncols()).copy_from(z);
                xz
            }
        }
    }
}

/// The split of the response into design and residual pieces.
#[derive(Debug, Clone)]
pub struct Partition {
    /// p×d.
    pub y1: DMatrix<f64>,
    /// p×(n−d).
    pub y2: DMatrix<f64>,
    /// n×(n−d) orthonormal basis of `ker(Xᵀ)`.
    pub a_basis: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub xtx: DMatrix<f64>,
    pub xtx_inv: DMatrix<f64>,
    /// Sample count after nuisance rotation.
    pub n_eff: usize,
    pub d: usize,
}

impl Partition {
    pub fn p(&self) -> usize {
        self.y1.nrows()
    }

    /// Residual degrees of freedom before factor estimation.
    pub fn residual_dim(&self) -> usize {
        self.n_eff - self.d
    }

    /// `Y1 Xᵀ + Y2 Aᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.y1 * self.x.transpose() + &self.y2 * self.a_basis.transpose()
    }
}

/// Orthonormal basis of `ker(Xᵀ)`, taken from the trailing columns of a
/// Householder QR of `x`.
pub fn orthonormal_complement(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    householder_complement(x, "x")
}

/// Rotation `Q` (n×(n−r)) onto `ker(Zᵀ)`, or `None` without nuisance covariates.
pub fn nuisance_rotation(data: &ObservedData) -> Result<Option<DMatrix<f64>>> {
    match &data.z {
        None => Ok(None),
        Some(z) => {
            householder_complement(&data.joint_design(), "[x z]")?;
            Ok(Some(householder_complement(z, "z")?))
        }
    }
}

/// Removes observed nuisance covariates by right-multiplying `Y` with a basis
/// `Q` of `ker(Zᵀ)` and replacing `X` with `QᵀX`. Sample labels no longer
/// refer to physical samples afterwards and are renamed `rot0, rot1, ...`.
pub fn remove_nuisance(data: &ObservedData) -> Result<ObservedData> {
    match nuisance_rotation(data)? {
        None => Ok(data.clone()),
        Some(q) => Ok(rotate(data, &q)),
    }
}

pub(crate) fn rotate(data: &ObservedData, q: &DMatrix<f64>) -> ObservedData {
    ObservedData {
        y: &data.y * q,
        x: q.transpose() * &data.x,
        z: None,
        feature_ids: data.feature_ids.clone(),
        sample_ids: (0..q.ncols()).map(|i| format!("rot{i}")).collect(),
        covariate_ids: data.covariate_ids.clone(),
    }
}

fn design_gram(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let xtx = x.transpose() * x;
    let condition = spd_condition(&xtx);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned {
            condition,
            limit: MAX_CONDITION,
        });
    }
    let xtx_inv = spd_inverse(&xtx, "XᵀX")?;
    Ok((xtx, xtx_inv))
}

/// Splits nuisance-free data into `Y1` and `Y2`.
pub fn partition(data: &ObservedData) -> Result<Partition> {
    if data.z.is_some() {
        return Err(Error::Config(
            "nuisance covariates must be removed before partitioning".into(),
        ));
    }
    design_gram(&data.x)?;
    let a = orthonormal_complement(&data.x)?;
    partition_with_basis(data, a)
}

/// Like [`partition`] but with a caller-chosen basis of `ker(Xᵀ)`.
pub fn partition_with_basis(data: &ObservedData, a_basis: DMatrix<f64>) -> Result<Partition> {
    if data.z.is_some() {
        return Err(Error::Config(
            "nuisance covariates must be removed before partitioning".into(),
        ));
    }
    let (n, d) = data.x.shape();
    if a_basis.shape() != (n, n - d) {
        return Err(Error::Dimension(format!(
            "complement basis must be {n}×{}, got {}×{}",
            n - d,
            a_basis.nrows(),
            a_basis.ncols()
        )));
    }
    let ortho = (a_basis.transpose() * &a_basis - DMatrix::<f64>::identity(n - d, n - d)).amax();
    let cross = (data.x.transpose() * &a_basis).amax() / data.x.amax().max(f64::MIN_POSITIVE);
    if ortho > BASIS_TOL || cross > BASIS_TOL {
        return Err(Error::Config(
            "supplied basis is not an orthonormal basis of ker(Xᵀ)".into(),
        ));
    }
    let (xtx, xtx_inv) = design_gram(&data.x)?;
    let y1 = &data.y * &data.x * &xtx_inv;
    let y2 = &data.y * &a_basis;
    Ok(Partition {
        y1,
        y2,
        a_basis,
        x: data.x.clone(),
        xtx,
        xtx_inv,
        n_eff: n,
        d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::linalg::spectral_norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn complement_of_first_basis_vector() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let a = orthonormal_complement(&x).unwrap();
        assert_eq!(a.shape(), (3, 2));
        assert!(a.row(0).amax() < 1e-15);
        assert_relative_eq!(a.transpose() * &a, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn complement_random_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 10, 3);
        let a = orthonormal_complement(&x).unwrap();
        assert!(spectral_norm(&(x.transpose() * &a)) <= 1e-10);
        assert!(spectral_norm(&(a.transpose() * &a - DMatrix::identity(7, 7))) <= 1e-10);
    }

    fn intercept(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    fn group(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 1, |i, _| if i < n / 2 { 0.0 } else { 1.0 })
    }

    #[test]
    fn intercept_removal_annihilates_constant_rows() {
        let n = 6;
        let y = DMatrix::from_fn(9, n, |i, _| i as f64 + 0.5);
        let data = ObservedData::unlabeled(y, group(n), Some(intercept(n))).unwrap();
        let rotated = remove_nuisance(&data).unwrap();
        assert_eq!(rotated.n(), n - 1);
        assert!(rotated.y.amax() < 1e-12);
        assert!(rotated.z.is_none());
    }

    #[test]
    fn no_nuisance_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_matrix(&mut rng, 8, 5);
        let data = ObservedData::unlabeled(y.clone(), group(5), None).unwrap();
        let out = remove_nuisance(&data).unwrap();
        assert_eq!(out.y, y);
        assert_eq!(out.x, data.x);
    }

    #[test]
    fn nuisance_signal_only_is_removed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 12;
        let z = random_matrix(&mut rng, n, 2);
        let m = random_matrix(&mut rng, 20, 2);
        let y = &m * z.transpose();
        let data = ObservedData::unlabeled(y, group(n), Some(z)).unwrap();
        let out = remove_nuisance(&data).unwrap();
        assert!(out.y.amax() <= 1e-10);
    }

    #[test]
    fn x_absorbed_by_nuisance_is_rejected() {
        let n = 6;
        let z = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i % 2) as f64 });
        let x = DMatrix::from_fn(n, 1, |i, _| 3.0 - 2.0 * (i % 2) as f64);
        let y = DMatrix::from_element(10, n, 1.0);
        assert!(matches!(
            ObservedData::unlabeled(y, x, Some(z)),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn noiseless_effects_land_in_y1() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 8;
        let x = random_matrix(&mut rng, n, 2);
        let b = random_matrix(&mut rng, 11, 2);
        let data = ObservedData::unlabeled(&b * x.transpose(), x, None).unwrap();
        let part = partition(&data).unwrap();
        assert_relative_eq!(part.y1, b, epsilon = 1e-12);
        assert!(part.y2.amax() < 1e-12);
    }

    #[test]
    fn latent_in_design_span_lands_in_y1() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 9;
        let x = random_matrix(&mut rng, n, 1);
        let omega = random_matrix(&mut rng, 1, 2);
        let l = random_matrix(&mut rng, 12, 2);
        let c = &x * &omega;
        let data = ObservedData::unlabeled(&l * c.transpose(), x, None).unwrap();
        let part = partition(&data).unwrap();
        assert_relative_eq!(part.y1, &l * omega.transpose(), epsilon = 1e-12);
        assert!(part.y2.amax() < 1e-12);
    }

    #[test]
    fn ill_conditioned_design_is_rejected() {
        let n = 6;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { 1.0 + 1e-9 * i as f64 });
        let y = DMatrix::from_element(10, n, 1.0);
        let data = ObservedData {
            y,
            x,
            z: None,
            feature_ids: vec![String::new(); 10],
            sample_ids: vec![String::new(); n],
            covariate_ids: vec![String::new(); 2],
        };
        assert!(matches!(partition(&data), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn non_finite_is_rejected_with_coordinates() {
        let mut y = DMatrix::from_element(10, 4, 1.0);
        y[(3, 2)] = f64::NAN;
        match ObservedData::unlabeled(y, group(4), None) {
            Err(Error::NonFinite { row, col, .. }) => assert_eq!((row, col), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn requires_more_features_than_samples() {
        let y = DMatrix::from_element(4, 6, 1.0);
        assert!(ObservedData::unlabeled(y, group(6), None).is_err());
    }
}
