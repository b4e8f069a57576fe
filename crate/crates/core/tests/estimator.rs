use approx::assert_relative_eq;
use latent_adjust::design::{partition_with_basis, remove_nuisance};
use latent_adjust::factors::estimate_factors;
use latent_adjust::inference::{
    confounding_test_for, effects_oracle, effects_unadjusted, effects_with_omega,
};
use latent_adjust::omega::naive_omega;
use latent_adjust::pipeline::fit_partition;
use latent_adjust::validation::gram_vs_direct;
use latent_adjust::{fit, partition, AdjustOptions, FactorEstimate, Method, ObservedData};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Two covariates, three latent factors correlated with them, plus noise.
fn confounded(seed: u64, p: usize, n: usize) -> ObservedData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal(&mut rng, n, 2);
    let omega = normal(&mut rng, 2, 3) * 0.5;
    let c = &x * &omega + normal(&mut rng, n, 3);
    let l = normal(&mut rng, p, 3) * 0.8;
    let b = DMatrix::from_fn(p, 2, |g, j| if g % 10 == j { 1.0 } else { 0.0 });
    let y = &b * x.transpose() + &l * c.transpose() + normal(&mut rng, p, n);
    ObservedData::unlabeled(y, x, None).unwrap()
}

#[test]
fn downstream_estimates_do_not_depend_on_complement_basis() {
    let data = confounded(1, 200, 30);
    let opts = AdjustOptions::new(3);
    let base = partition(&data).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let m = base.residual_dim();
    let rotation = normal(&mut rng, m, m).qr().q();
    let rotated = partition_with_basis(&data, &base.a_basis * rotation).unwrap();

    let a = fit_partition(base, &opts).unwrap();
    let b = fit_partition(rotated, &opts).unwrap();
    let (ta, tb) = (a.bias_corrected(), b.bias_corrected());
    assert_relative_eq!(ta.beta_hat, tb.beta_hat, epsilon = 1e-9);
    assert_relative_eq!(ta.se, tb.se, epsilon = 1e-9);
    for (x, y) in a.factors.lambda_hat.iter().zip(&b.factors.lambda_hat) {
        assert_relative_eq!(x, y, max_relative = 1e-10);
    }
    assert_relative_eq!(a.factors.rho_hat, b.factors.rho_hat, max_relative = 1e-10);
}

#[test]
fn gram_route_matches_direct_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let l = normal(&mut rng, 40, 2);
        let c = normal(&mut rng, 12, 2);
        let y2 = &l * c.transpose() + normal(&mut rng, 40, 12) * 0.2;
        assert!(gram_vs_direct(&y2, 2).unwrap() < 1e-8);
    }
}

#[test]
fn scaling_the_response_scales_effects_and_keeps_t_statistics() {
    let data = confounded(4, 150, 25);
    let mut scaled = data.clone();
    scaled.y *= 3.0;
    let opts = AdjustOptions::new(3);
    let a = fit(&data, &opts).unwrap();
    let b = fit(&scaled, &opts).unwrap();
    assert_relative_eq!(&a.bias_corrected().beta_hat * 3.0, b.bias_corrected().beta_hat, epsilon = 1e-9);
    assert_relative_eq!(a.bias_corrected().t_stat, b.bias_corrected().t_stat, epsilon = 1e-8);
    assert_relative_eq!(a.factors.rho_hat * 9.0, b.factors.rho_hat, max_relative = 1e-10);
    assert_relative_eq!(
        a.omega.omega_bc.abs(),
        b.omega.omega_bc.abs(),
        epsilon = 1e-9
    );
}

#[test]
fn per_feature_offsets_vanish_with_an_intercept_nuisance() {
    let data = confounded(5, 120, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let offsets = normal(&mut rng, data.p(), 1);
    let ones = DMatrix::from_element(data.n(), 1, 1.0);
    let with_z = ObservedData::unlabeled(data.y.clone(), data.x.clone(), Some(ones.clone())).unwrap();
    let shifted = ObservedData::unlabeled(&data.y + &offsets * ones.transpose(), data.x.clone(), Some(ones)).unwrap();
    let opts = AdjustOptions::new(2);
    let a = fit(&with_z, &opts).unwrap();
    let b = fit(&shifted, &opts).unwrap();
    assert_relative_eq!(a.bias_corrected().beta_hat, b.bias_corrected().beta_hat, epsilon = 1e-9);
    assert_relative_eq!(a.bias_corrected().p_value, b.bias_corrected().p_value, epsilon = 1e-9);
}

#[test]
fn nuisance_only_response_rotates_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = normal(&mut rng, 15, 2);
    let y = normal(&mut rng, 30, 2) * z.transpose();
    let data = ObservedData::unlabeled(y, normal(&mut rng, 15, 1), Some(z)).unwrap();
    let rotated = remove_nuisance(&data).unwrap();
    assert!(rotated.y.amax() < 1e-10);
    assert_eq!(rotated.n(), 13);
}

#[test]
fn no_factors_reduces_to_least_squares() {
    let data = confounded(9, 100, 20);
    let part = partition(&data).unwrap();
    let none = FactorEstimate::none(&part.y2);
    let omega = naive_omega(&part.y1, &none.l_hat).unwrap();
    assert_eq!(omega.shape(), (2, 0));
    let t = effects_with_omega(Method::AdjustedBiasCorrected, &part, &none, &omega).unwrap();
    let ols = effects_unadjusted(&data).unwrap();
    assert_relative_eq!(t.beta_hat, ols.beta_hat, epsilon = 1e-12);
    assert_relative_eq!(t.se, ols.se, epsilon = 1e-12);
    assert_eq!(t.dof, ols.dof);
}

#[test]
fn noiseless_latent_structure_is_removed_exactly() {
    // Latent covariates orthogonal to the design, effects orthogonal to the
    // loadings, no noise.
    let (p, n) = (60, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = normal(&mut rng, n, 1);
    let a = latent_adjust::design::orthonormal_complement(&x).unwrap();
    let c = &a * normal(&mut rng, n - 1, 2);
    let l = normal(&mut rng, p, 2);
    let raw = normal(&mut rng, p, 1);
    let b = &raw - &l * (l.tr_mul(&l)).try_inverse().unwrap() * l.tr_mul(&raw);
    let y = &b * x.transpose() + &l * c.transpose();
    let part = partition(&ObservedData::unlabeled(y, x, None).unwrap()).unwrap();
    let f = estimate_factors(&part.y2, 2).unwrap();
    assert!(f.rho_hat < 1e-20);
    let fitted = fit_partition(part, &AdjustOptions::new(2)).unwrap();
    assert_relative_eq!(fitted.bias_corrected().beta_hat, b, epsilon = 1e-6);
}

#[test]
fn unadjusted_bias_equals_loadings_times_omega() {
    let (p, n) = (40, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = normal(&mut rng, n, 1);
    let omega = DMatrix::from_row_slice(1, 2, &[0.7, -0.4]);
    let c = &x * &omega;
    let l = normal(&mut rng, p, 2);
    let b = normal(&mut rng, p, 1);
    let y = &b * x.transpose() + &l * c.transpose();
    let t = effects_unadjusted(&ObservedData::unlabeled(y, x, None).unwrap()).unwrap();
    assert_relative_eq!(t.beta_hat, b + l * omega.transpose(), epsilon = 1e-10);
}

#[test]
fn oracle_recovers_effects_without_noise() {
    let (p, n) = (50, 18);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = normal(&mut rng, n, 1);
    let c = &x * DMatrix::from_row_slice(1, 2, &[1.0, 0.5]) + normal(&mut rng, n, 2);
    let l = normal(&mut rng, p, 2);
    let b = normal(&mut rng, p, 1);
    let y = &b * x.transpose() + &l * c.transpose();
    let t = effects_oracle(&ObservedData::unlabeled(y, x, None).unwrap(), &c).unwrap();
    assert_relative_eq!(t.beta_hat, b, epsilon = 1e-9);
}

#[test]
fn confounding_statistic_closed_form() {
    // XᵀX = 4, Ω = 0.5 → statistic 1, p = P(χ²₁ > 1).
    let t = confounding_test_for(&DMatrix::from_element(1, 1, 0.5), &DMatrix::from_element(1, 1, 4.0)).unwrap();
    assert_relative_eq!(t.per_covariate_chi2[0], 1.0, epsilon = 1e-12);
    // 2·(1 − Φ(1)), computed independently.
    assert_relative_eq!(t.p_values[0], 0.317_310_507_862_914_1, epsilon = 1e-12);

    let zero = confounding_test_for(&DMatrix::zeros(1, 3), &DMatrix::from_element(1, 1, 4.0)).unwrap();
    assert_eq!(zero.per_covariate_chi2[0], 0.0);
    assert_eq!(zero.p_values[0], 1.0);
}
