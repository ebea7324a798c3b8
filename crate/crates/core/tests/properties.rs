use nalgebra::DMatrix;
use proptest::prelude::*;

use gsw::estimator::{predicted_variances, residual_projection};
use gsw::linalg::{build_setup, step_direction, CovariateSetup, InverseCache};
use gsw::montecarlo::{srswor_bruteforce, srswor_moments, SrsworCase};
use gsw::rng::{Lane, RngStream};
use gsw::sampler::{gsw_step, DesignState, FREEZE_TOL};

fn covariates() -> impl Strategy<Value = (DMatrix<f64>, f64)> {
    (1usize..=30, 0usize..=4, 0.05f64..0.95).prop_flat_map(|(n, d, phi)| {
        proptest::collection::vec(-5.0f64..5.0, n * d)
            .prop_map(move |vals| (DMatrix::from_vec(n, d, vals), phi))
    })
}

fn setup_of((x, phi): (DMatrix<f64>, f64)) -> CovariateSetup {
    build_setup(x, phi).unwrap()
}

/// Active set drawn from a mask; falls back to all units when the mask is empty.
fn active_from(mask: &[bool], n: usize) -> Vec<usize> {
    let active: Vec<usize> = (0..n).filter(|&i| mask[i % mask.len()]).collect();
    if active.is_empty() {
        (0..n).collect()
    } else {
        active
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inverse_cache_is_a_contraction(
        cov in covariates(),
        mask in proptest::collection::vec(any::<bool>(), 1..40),
    ) {
        let setup = setup_of(cov);
        let active = active_from(&mask, setup.n());
        let cache = InverseCache::for_active(&setup, &active).unwrap();
        prop_assert!(cache.residual(&setup, &active) < 1e-10);
        if setup.dim() > 0 {
            let eig = cache.matrix().clone().symmetric_eigen().eigenvalues;
            for &l in eig.iter() {
                prop_assert!(l > 0.0 && l <= 1.0 + 1e-12, "eigenvalue {l}");
            }
        }
    }

    #[test]
    fn step_direction_shape_and_norm(
        cov in covariates(),
        mask in proptest::collection::vec(any::<bool>(), 1..40),
        pick in any::<prop::sample::Index>(),
    ) {
        let setup = setup_of(cov);
        let active = active_from(&mask, setup.n());
        let p = active[pick.index(active.len())];
        let cache = InverseCache::for_active(&setup, &active).unwrap();
        let dir = step_direction(&setup, &active, p, &cache).unwrap();
        prop_assert_eq!(dir.u[p], 1.0);
        for i in 0..setup.n() {
            if !active.contains(&i) {
                prop_assert_eq!(dir.u[i], 0.0);
            }
        }
        let slack = 1e-12 * setup.c1();
        prop_assert!(dir.bu_norm_sq >= 1.0 - slack);
        prop_assert!(dir.bu_norm_sq <= setup.c1() + slack);
    }

    #[test]
    fn walk_stays_in_the_cube_and_ends_at_signs(cov in covariates(), seed in any::<u64>()) {
        let setup = setup_of(cov);
        let mut state = DesignState::new(&setup).unwrap();
        let mut draws = RngStream::for_replication(seed, 0, Lane::Main);
        let mut prev = state.active().len();
        while !state.is_complete() {
            prop_assert!(state.t() < setup.n());
            gsw_step(&mut state, &setup, &mut draws, FREEZE_TOL).unwrap();
            let now = state.active().len();
            prop_assert!(now < prev, "active set did not shrink");
            prev = now;
            prop_assert!(state.z().iter().all(|z| z.abs() <= 1.0));
            for &i in state.active() {
                prop_assert!(state.z()[i].abs() < 1.0);
            }
        }
        let z = state.assignment().unwrap();
        prop_assert!(z.iter().all(|&s| s == 1 || s == -1));
    }

    #[test]
    fn residual_split_is_orthogonal(
        cov in covariates(),
        mu in proptest::collection::vec(-10.0f64..10.0, 30),
    ) {
        let (x, _) = cov;
        let mu = &mu[..x.nrows()];
        let decomp = residual_projection(mu, &x).unwrap();
        let mu_sq: f64 = mu.iter().map(|m| m * m).sum();
        let fit_sq: f64 = mu.iter().zip(&decomp.v).map(|(m, v)| (m - v).powi(2)).sum();
        prop_assert!((decomp.v_norm_sq + fit_sq - mu_sq).abs() <= 1e-8 * mu_sq.max(1.0));
        let (var_iid, var_gsw) = predicted_variances(&decomp, mu);
        prop_assert!(var_gsw <= var_iid * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn srswor_formula_matches_enumeration(
        x in proptest::collection::vec(-3.0f64..3.0, 1..=10),
        pick in any::<prop::sample::Index>(),
    ) {
        let a = 1 + pick.index(x.len());
        let case = SrsworCase::new(x, a).unwrap();
        let s2: f64 = case.x().iter().map(|v| v * v).sum::<f64>().max(1.0);
        let formula = srswor_moments(&case);
        let brute = srswor_bruteforce(&case).unwrap();
        prop_assert!((formula.m2 - brute.m2).abs() <= 1e-10 * s2);
        if let (Some(f), Some(b)) = (formula.m4, brute.m4) {
            prop_assert!((f - b).abs() <= 1e-10 * s2 * s2);
        }
    }
}
