//! Oracle and invariant checks behind `gsw verify`.
//!
//! These are quick desk-scale versions of the checks in the acceptance tests;
//! each compares a fast path against a slow, independent computation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{GswError, Result};
use crate::estimator::{ate, OutcomeData};
use crate::linalg::{
    build_setup, direction_inner_product, dot, step_direction, CovariateSetup, InverseCache,
};
use crate::montecarlo::{
    exact_enumeration, matrix_concentration_check, srswor_bruteforce, srswor_moments, SrsworCase,
};
use crate::rng::RngStream;
use crate::skeletal::{run_coupled_replication, CoupledOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Srswor,
    Enumeration,
    Identities,
    Downdate,
    QuadraticVariation,
    Concentration,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Srswor,
        Suite::Enumeration,
        Suite::Identities,
        Suite::Downdate,
        Suite::QuadraticVariation,
        Suite::Concentration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Srswor => "srswor",
            Suite::Enumeration => "enumeration",
            Suite::Identities => "identities",
            Suite::Downdate => "downdate",
            Suite::QuadraticVariation => "quadratic-variation",
            Suite::Concentration => "concentration",
        }
    }

    /// `all` expands to every suite.
    pub fn parse_list(s: &str) -> Result<Vec<Suite>> {
        if s == "all" {
            return Ok(Self::ALL.to_vec());
        }
        s.split(',')
            .map(|part| {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|x| x.name() == part.trim())
                    .ok_or_else(|| {
                        GswError::Parameter(format!(
                            "unknown suite '{part}' (expected all or one of: {})",
                            Self::ALL.map(Suite::name).join(", ")
                        ))
                    })
            })
            .collect()
    }
}

/// One row of the verification table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub suite: Suite,
    pub case: String,
    /// Largest observed discrepancy.
    pub delta: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(suite: Suite, case: String, delta: f64, tolerance: f64) -> Self {
        Self {
            suite,
            case,
            delta,
            tolerance,
            passed: delta <= tolerance,
        }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckResult>> {
    match suite {
        Suite::Srswor => srswor_suite(seed),
        Suite::Enumeration => enumeration_suite(),
        Suite::Identities => identities_suite(seed),
        Suite::Downdate => downdate_suite(seed),
        Suite::QuadraticVariation => qv_suite(seed),
        Suite::Concentration => concentration_suite(seed),
    }
}

fn rel_delta(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn srswor_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = RngStream::for_data(seed, 10);
    let mut out = Vec::new();
    for n in 1..=8 {
        for a in 1..=n {
            let mut worst: f64 = 0.0;
            for _ in 0..10 {
                let x: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
                let case = SrsworCase::new(x, a)?;
                let f = srswor_moments(&case);
                let b = srswor_bruteforce(&case)?;
                worst = worst.max(rel_delta(f.m2, b.m2));
                if let (Some(f4), Some(b4)) = (f.m4, b.m4) {
                    worst = worst.max(rel_delta(f4, b4));
                }
            }
            out.push(CheckResult::new(
                Suite::Srswor,
                format!("n={n} a={a}"),
                worst,
                1e-10,
            ));
        }
    }
    let case = SrsworCase::new(vec![1.0, 1.0, -1.0, -1.0], 2)?;
    let m4 = srswor_moments(&case).m4.unwrap_or(f64::NAN);
    out.push(CheckResult::new(
        Suite::Srswor,
        "x=(1,1,-1,-1) a=2: m4 = 16/3".into(),
        (m4 - 16.0 / 3.0).abs(),
        1e-12,
    ));
    Ok(out)
}

fn enumeration_suite() -> Result<Vec<CheckResult>> {
    let cases: [(usize, usize); 5] = [(1, 0), (2, 0), (2, 1), (3, 1), (4, 2)];
    let mut out = Vec::new();
    for (k, &(n, d)) in cases.iter().enumerate() {
        let mut rng = RngStream::for_data(k as u64, 11);
        let x = DMatrix::from_fn(n, d, |_, _| rng.next_normal());
        let a: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let setup = build_setup(x, 0.5)?;
        let outcomes = OutcomeData::from_ab(a.clone(), b.clone())?;
        let law = exact_enumeration(&setup, Some(&outcomes))?;
        let tau = ate(&a, &b)?;
        let mean_z = law.mean_z.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let bias = (law.mean_tau_hat.unwrap_or(f64::NAN) - tau).abs();
        let mass = (law.total_prob - 1.0).abs();
        out.push(CheckResult::new(
            Suite::Enumeration,
            format!("n={n} d={d}: |E z|, |E tau_hat - tau|, |sum p - 1|"),
            mean_z.max(bias).max(mass),
            1e-10,
        ));
    }
    Ok(out)
}

/// Least-squares direction from the explicit matrix `B`: minimize
/// `‖B_A' c + B e_p‖` over the other active columns.
fn direction_oracle(setup: &CovariateSetup, active: &[usize], p: usize) -> Result<Vec<f64>> {
    let b = setup.augmented_matrix();
    let others: Vec<usize> = active.iter().copied().filter(|&i| i != p).collect();
    let mut u = vec![0.0; setup.n()];
    u[p] = 1.0;
    if others.is_empty() {
        return Ok(u);
    }
    let cols = DMatrix::from_fn(b.nrows(), others.len(), |r, c| b[(r, others[c])]);
    let rhs = -b.column(p).into_owned();
    let coef = cols
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| GswError::Numeric(e.to_string()))?;
    for (k, &i) in others.iter().enumerate() {
        u[i] = coef[k];
    }
    Ok(u)
}

fn random_instance(rng: &mut RngStream, max_n: usize, max_d: usize) -> Result<CovariateSetup> {
    let n = 1 + rng.next_index(max_n);
    let d = rng.next_index(max_d + 1);
    let phi = 0.05 + 0.9 * rng.next_index(1000) as f64 / 1000.0;
    let x = DMatrix::from_fn(n, d, |_, _| rng.next_normal());
    build_setup(x, phi)
}

fn random_subset(rng: &mut RngStream, n: usize) -> Vec<usize> {
    let mut a: Vec<usize> = (0..n).filter(|_| rng.next_index(2) == 1).collect();
    if a.is_empty() {
        a.push(rng.next_index(n));
    }
    a
}

fn identities_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = RngStream::for_data(seed, 12);
    let (mut dir_err, mut norm_err, mut bound_err, mut ip_err) =
        (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..200 {
        let setup = random_instance(&mut rng, 30, 4)?;
        let active = random_subset(&mut rng, setup.n());
        let p = active[rng.next_index(active.len())];
        let cache = InverseCache::for_active(&setup, &active)?;
        let dir = step_direction(&setup, &active, p, &cache)?;
        let oracle = direction_oracle(&setup, &active, p)?;
        let scale = oracle.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        for (a, b) in dir.u.iter().zip(&oracle) {
            dir_err = dir_err.max((a - b).abs() / scale);
        }
        let bu = DVector::from_vec(dir.augmented(&setup));
        norm_err = norm_err.max(rel_delta(dir.bu_norm_sq, bu.norm_squared()));
        if dir.bu_norm_sq < 1.0 - 1e-12 || dir.bu_norm_sq > setup.c1() * (1.0 + 1e-12) {
            bound_err = bound_err.max(1.0);
        }
        let v: Vec<f64> = (0..setup.n()).map(|_| rng.next_normal()).collect();
        let fast = direction_inner_product(&setup, &active, p, &cache, &v)?;
        ip_err = ip_err.max(rel_delta(fast, dot(&dir.u, &v)));
    }
    Ok(vec![
        CheckResult::new(
            Suite::Identities,
            "direction vs explicit least squares".into(),
            dir_err,
            1e-8,
        ),
        CheckResult::new(
            Suite::Identities,
            "‖Bu‖² closed form".into(),
            norm_err,
            1e-10,
        ),
        CheckResult::new(
            Suite::Identities,
            "1 ≤ ‖Bu‖² ≤ C₁(ζ)".into(),
            bound_err,
            0.0,
        ),
        CheckResult::new(Suite::Identities, "⟨u,v⟩ closed form".into(), ip_err, 1e-10),
    ])
}

fn downdate_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = RngStream::for_data(seed, 13);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = 2 + rng.next_index(49);
        let d = 1 + rng.next_index(5);
        let x = DMatrix::from_fn(n, d, |_, _| rng.next_normal());
        let setup = build_setup(x, 0.5)?;
        let mut active: Vec<usize> = (0..n).collect();
        let mut cache = InverseCache::for_active(&setup, &active)?;
        while !active.is_empty() {
            let pos = rng.next_index(active.len());
            let p = active.remove(pos);
            cache.downdate(&setup, p, &active)?;
            let fresh = InverseCache::for_active(&setup, &active)?;
            let diff = (cache.matrix() - fresh.matrix()).norm() / (d as f64).sqrt();
            worst = worst.max(diff);
        }
    }
    Ok(vec![CheckResult::new(
        Suite::Downdate,
        "rank-one downdates vs recomputation (Frobenius/√d)".into(),
        worst,
        1e-8,
    )])
}

fn qv_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut data = RngStream::for_data(seed, 14);
    let (n, d) = (60, 3);
    let x = DMatrix::from_fn(n, d, |_, _| data.next_normal());
    let setup = build_setup(x, 0.5)?;
    let mu: Vec<f64> = (0..n).map(|_| data.next_normal()).collect();
    let v = crate::estimator::residual_projection(&mu, setup.x())?.v;
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let traj = run_coupled_replication(&setup, &v, seed, k, &CoupledOptions::default())?;
        worst = worst.max((traj.quadratic_variation - traj.v_norm_sq).abs() / traj.v_norm_sq);
    }
    Ok(vec![CheckResult::new(
        Suite::QuadraticVariation,
        "Σ⟨Bu/‖Bu‖,(v;0)⟩² = ‖v‖² (relative)".into(),
        worst,
        1e-8,
    )])
}

fn concentration_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = RngStream::for_data(seed, 15);
    let (n, d, a) = (20, 2, 8);
    let mats: Vec<DMatrix<f64>> = (0..n)
        .map(|_| {
            let g = DMatrix::from_fn(d, d, |_, _| rng.next_normal());
            let s = &g + g.transpose();
            let norm = crate::linalg::sym_op_norm(&s);
            s / norm
        })
        .collect();
    let grid: Vec<f64> = (0..6).map(|k| 0.5 + k as f64).collect();
    let rows = matrix_concentration_check(&mats, a, &grid, 10_000, seed)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            CheckResult::new(
                Suite::Concentration,
                format!(
                    "x={}: empirical {:.4} vs bound {:.4}",
                    r.x, r.empirical_prob, r.bound
                ),
                (r.empirical_prob - r.bound - 3.0 * r.binomial_se).max(0.0),
                0.0,
            )
        })
        .collect())
}
