//! Empirical tails of sums of symmetric matrices over random subsets.
//!
//! For matrices `M_1, …, M_n` with `‖M_i‖_op ≤ 1` and a uniformly random
//! `a`-subset `S`, `W = Σ_{i∈S} M_i` satisfies
//! `P[‖W − E W‖_op ≥ x] ≤ 2d·exp(−n x²/(2a(n−a)))`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::stats::binomial_standard_error;
use crate::error::{GswError, Result};
use crate::linalg::sym_op_norm;
use crate::rng::{Lane, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub x: f64,
    pub empirical_prob: f64,
    pub bound: f64,
    pub binomial_se: f64,
    /// `empirical_prob ≤ bound + 3·binomial_se`.
    pub within_bound: bool,
}

/// `2d·exp(−n x²/(2a(n−a)))`; `0` for `a = n` and `x > 0` since `W` is then constant.
pub fn tail_bound(d: usize, n: usize, a: usize, x: f64) -> f64 {
    if a == n {
        return if x > 0.0 { 0.0 } else { 2.0 * d as f64 };
    }
    let denom = 2.0 * a as f64 * (n - a) as f64;
    2.0 * d as f64 * (-(n as f64) * x * x / denom).exp()
}

fn validate(matrices: &[DMatrix<f64>]) -> Result<usize> {
    let first = matrices
        .first()
        .ok_or_else(|| GswError::Data("no matrices supplied".into()))?;
    let d = first.nrows();
    for (i, m) in matrices.iter().enumerate() {
        if m.nrows() != d || m.ncols() != d {
            return Err(GswError::Data(format!("matrix {} is not {d}×{d}", i + 1)));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GswError::Data(format!(
                "matrix {} has non-finite entries",
                i + 1
            )));
        }
        let asym = (m - m.transpose()).amax();
        if asym > 1e-12 * m.amax().max(1.0) {
            return Err(GswError::Data(format!("matrix {} is not symmetric", i + 1)));
        }
        let norm = sym_op_norm(m);
        if norm > 1.0 + 1e-12 {
            return Err(GswError::Data(format!(
                "matrix {} has operator norm {norm} > 1",
                i + 1
            )));
        }
    }
    Ok(d)
}

/// `‖W − E W‖_op` for one subset drawn by partial Fisher–Yates.
fn deviation(
    matrices: &[DMatrix<f64>],
    expected: &DMatrix<f64>,
    a: usize,
    rng: &mut RngStream,
) -> f64 {
    let n = matrices.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut w = -expected.clone();
    for j in 0..a {
        let k = j + rng.next_index(n - j);
        idx.swap(j, k);
        w += &matrices[idx[j]];
    }
    sym_op_norm(&w)
}

/// Estimates the tail at every `x` in `x_grid` from `reps` subsets. Draw `k`
/// uses replication stream `k` of `seed`.
pub fn matrix_concentration_check(
    matrices: &[DMatrix<f64>],
    a: usize,
    x_grid: &[f64],
    reps: usize,
    seed: u64,
) -> Result<Vec<ConcentrationRow>> {
    let d = validate(matrices)?;
    let n = matrices.len();
    if a == 0 || a > n {
        return Err(GswError::Parameter(format!(
            "subset size must lie in 1..={n}, got {a}"
        )));
    }
    if reps == 0 {
        return Err(GswError::Parameter("at least one draw is required".into()));
    }
    let mut total = DMatrix::zeros(d, d);
    for m in matrices {
        total += m;
    }
    let expected = total * (a as f64 / n as f64);
    let deviations: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::for_replication(seed, k as u64, Lane::Main);
            deviation(matrices, &expected, a, &mut rng)
        })
        .collect();
    Ok(x_grid
        .iter()
        .map(|&x| {
            // W is constant when a = n; rounding must not create a tail
            let hits = if a == n {
                0
            } else {
                deviations.iter().filter(|&&dev| dev >= x).count()
            };
            let p = hits as f64 / reps as f64;
            let bound = tail_bound(d, n, a, x);
            let se = binomial_standard_error(p, reps);
            ConcentrationRow {
                x,
                empirical_prob: p,
                bound,
                binomial_se: se,
                within_bound: p <= bound + 3.0 * se,
            }
        })
        .collect())
}
