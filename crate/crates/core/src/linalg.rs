//! Augmented-matrix geometry for the walk.
//!
//! The walk balances the columns of `B = [I_n; Yᵀ]` where
//! `Y = ξ⁻¹·√((1−φ)/φ)·X`. Everything the walk needs about `B` restricted to an
//! active column set `A` is expressed through the small `d×d` matrix
//! `D = (I_d + Y_AᵀY_A)⁻¹`, which is maintained incrementally as rows leave
//! `A`. With `p ∈ A` the pivot and `w = D·y_p`:
//!
//! * step direction: `u = (e_p − I_n[:,A]·Y_A·w) / (1 − y_pᵀw)`, so `u[p] = 1`;
//! * `‖Bu‖² = 1 / (1 − y_pᵀw)`, which lies in `[1, 1 + ζ²(1+ζ²)]`;
//! * `⟨u, v⟩ = ‖Bu‖²·(v_p − Σ_{i∈A} v_i·y_iᵀw)`.
//!
//! Active sets are passed as ascending index slices.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{GswError, Result};

/// Below this value of `1 − y_pᵀ D y_p` the rank-one formulas are not trusted.
pub const DOWNDATE_THRESHOLD: f64 = 1e-10;

/// Number of rank-one downdates after which `D` is rebuilt from scratch.
pub const RECOMPUTE_INTERVAL: usize = 64;

/// Covariates together with the derived, rescaled matrix `Y`.
#[derive(Debug, Clone)]
pub struct CovariateSetup {
    x: DMatrix<f64>,
    phi: f64,
    xi: f64,
    zeta: f64,
    /// `Yᵀ`, stored `dim × n` so that each row `y_i` is a contiguous column.
    yt: DMatrix<f64>,
}

impl CovariateSetup {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of covariate columns as supplied.
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Effective dimension of `Y`: zero when `d = 0` or `X = 0`.
    pub fn dim(&self) -> usize {
        self.yt.nrows()
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Largest row norm of `X`.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// `√((1−φ)/φ)`, an upper bound on every row norm of `Y`.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// `C₁(ζ) = 1 + ζ²(1 + ζ²)`, the ceiling on `‖Bu‖²`.
    pub fn c1(&self) -> f64 {
        let z2 = self.zeta * self.zeta;
        1.0 + z2 * (1.0 + z2)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Row `i` of `Y` as a slice of length `dim()`.
    pub fn y_row(&self, i: usize) -> &[f64] {
        let dim = self.dim();
        &self.yt.as_slice()[i * dim..(i + 1) * dim]
    }

    /// `Y` as an `n × dim` matrix.
    pub fn y(&self) -> DMatrix<f64> {
        self.yt.transpose()
    }

    /// `Y_AᵀY_A` for the rows in `active`.
    pub fn active_gram(&self, active: &[usize]) -> DMatrix<f64> {
        let dim = self.dim();
        let mut g = DMatrix::zeros(dim, dim);
        for &i in active {
            let y = self.y_row(i);
            for r in 0..dim {
                for c in 0..dim {
                    g[(r, c)] += y[r] * y[c];
                }
            }
        }
        g
    }

    /// `YᵀY` over all rows.
    pub fn full_gram(&self) -> DMatrix<f64> {
        &self.yt * self.yt.transpose()
    }

    /// The explicit `(n + dim) × n` matrix `B = [I_n; Yᵀ]`. Only for oracles and small `n`.
    pub fn augmented_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let dim = self.dim();
        let mut b = DMatrix::zeros(n + dim, n);
        for i in 0..n {
            b[(i, i)] = 1.0;
            for (k, &y) in self.y_row(i).iter().enumerate() {
                b[(n + k, i)] = y;
            }
        }
        b
    }
}

/// Validates `X` and `φ` and derives `ξ`, `ζ` and `Y`.
pub fn build_setup(x: DMatrix<f64>, phi: f64) -> Result<CovariateSetup> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(GswError::Parameter(format!(
            "phi must lie strictly between 0 and 1, got {phi}"
        )));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(GswError::Data("covariate matrix has no rows".into()));
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        // column-major position
        let (r, c) = (pos % n, pos / n);
        return Err(GswError::Data(format!(
            "non-finite covariate at row {}, column {}",
            r + 1,
            c + 1
        )));
    }
    let xi = x.row_iter().map(|r| r.norm()).fold(0.0_f64, f64::max);
    let zeta = ((1.0 - phi) / phi).sqrt();
    let yt = if x.ncols() == 0 || xi == 0.0 {
        DMatrix::zeros(0, n)
    } else {
        x.transpose() * (zeta / xi)
    };
    Ok(CovariateSetup {
        x,
        phi,
        xi,
        zeta,
        yt,
    })
}

/// Running copy of `D = (I_d + Y_AᵀY_A)⁻¹` for the current active set.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseCache {
    d: DMatrix<f64>,
    active_count: usize,
    dirty_counter: usize,
}

impl InverseCache {
    /// `(I + Σ_{rows} y yᵀ)⁻¹` via a Cholesky factorization.
    pub fn from_rows<'a, I>(rows: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut m = DMatrix::<f64>::identity(dim, dim);
        let mut count = 0;
        for y in rows {
            debug_assert_eq!(y.len(), dim);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(GswError::Numeric("non-finite row in inverse cache".into()));
            }
            for r in 0..dim {
                for c in 0..dim {
                    m[(r, c)] += y[r] * y[c];
                }
            }
            count += 1;
        }
        let d = if dim == 0 {
            m
        } else {
            let chol = Cholesky::new(m)
                .ok_or_else(|| GswError::Numeric("I + YᵀY is not positive definite".into()))?;
            symmetrize(chol.inverse())
        };
        Ok(Self {
            d,
            active_count: count,
            dirty_counter: 0,
        })
    }

    /// Cache for the rows of `setup` listed in `active`.
    pub fn for_active(setup: &CovariateSetup, active: &[usize]) -> Result<Self> {
        Self::from_rows(active.iter().map(|&i| setup.y_row(i)), setup.dim())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    pub fn dirty_counter(&self) -> usize {
        self.dirty_counter
    }

    /// `D·y`.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let mut out = vec![0.0; dim];
        for (c, &yc) in y.iter().enumerate().take(dim) {
            if yc != 0.0 {
                for (r, o) in out.iter_mut().enumerate() {
                    *o += self.d[(r, c)] * yc;
                }
            }
        }
        out
    }

    /// Removes row `y_p` from the cached active set:
    /// `D⁻ = D + D y_p y_pᵀ D / (1 − y_pᵀ D y_p)`.
    ///
    /// `recompute` must rebuild the cache from the active set *after* removal;
    /// it is invoked when the denominator is below [`DOWNDATE_THRESHOLD`] or
    /// every [`RECOMPUTE_INTERVAL`] downdates.
    pub fn downdate_with<F>(&mut self, y_p: &[f64], recompute: F) -> Result<()>
    where
        F: FnOnce() -> Result<InverseCache>,
    {
        if self.active_count == 0 {
            return Err(GswError::Logic("downdate of an empty inverse cache".into()));
        }
        let dim = self.dim();
        if dim == 0 {
            self.active_count -= 1;
            return Ok(());
        }
        let w = self.apply(y_p);
        let denom = 1.0 - dot(y_p, &w);
        if !(denom >= DOWNDATE_THRESHOLD) || self.dirty_counter + 1 >= RECOMPUTE_INTERVAL {
            let fresh = recompute()?;
            if fresh.active_count + 1 != self.active_count {
                return Err(GswError::Logic(format!(
                    "recomputed cache holds {} rows, expected {}",
                    fresh.active_count,
                    self.active_count - 1
                )));
            }
            *self = fresh;
            return Ok(());
        }
        let scale = 1.0 / denom;
        for c in 0..dim {
            for r in 0..dim {
                self.d[(r, c)] += w[r] * w[c] * scale;
            }
        }
        self.active_count -= 1;
        self.dirty_counter += 1;
        Ok(())
    }

    /// Removes row `p` of `setup`; `remaining` is the active set after removal.
    pub fn downdate(
        &mut self,
        setup: &CovariateSetup,
        p: usize,
        remaining: &[usize],
    ) -> Result<()> {
        self.downdate_with(setup.y_row(p), || {
            InverseCache::for_active(setup, remaining)
        })
    }

    /// `‖D(I + Y_AᵀY_A) − I‖_F`.
    pub fn residual(&self, setup: &CovariateSetup, active: &[usize]) -> f64 {
        let dim = self.dim();
        let m = DMatrix::<f64>::identity(dim, dim) + setup.active_gram(active);
        (&self.d * m - DMatrix::<f64>::identity(dim, dim)).norm()
    }
}

/// Output of [`step_direction`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepDirection {
    /// Dense length-`n` direction, zero outside the active set.
    pub u: Vec<f64>,
    pub pivot: usize,
    /// `‖Bu‖²`, from the closed form `1/(1 − y_pᵀ D y_p)`.
    pub bu_norm_sq: f64,
}

impl StepDirection {
    /// Explicit `⟨u, v⟩`.
    pub fn dot(&self, v: &[f64]) -> f64 {
        dot(&self.u, v)
    }

    /// `B·u` computed from the explicit vector (length `n + dim`).
    pub fn augmented(&self, setup: &CovariateSetup) -> Vec<f64> {
        let dim = setup.dim();
        let mut out = self.u.clone();
        let mut tail = vec![0.0; dim];
        for (i, &ui) in self.u.iter().enumerate() {
            if ui != 0.0 {
                for (k, &y) in setup.y_row(i).iter().enumerate() {
                    tail[k] += y * ui;
                }
            }
        }
        out.extend(tail);
        out
    }
}

fn check_pivot(active: &[usize], p: usize) -> Result<()> {
    if active.binary_search(&p).is_err() {
        return Err(GswError::Logic(format!(
            "pivot {p} is not in the active set"
        )));
    }
    Ok(())
}

/// Returns `(D·y_p, 1 − y_pᵀ D y_p)` after the stability check.
fn pivot_terms(setup: &CovariateSetup, p: usize, cache: &InverseCache) -> Result<(Vec<f64>, f64)> {
    let y_p = setup.y_row(p);
    let w = cache.apply(y_p);
    let denom = 1.0 - dot(y_p, &w);
    if !(denom >= DOWNDATE_THRESHOLD) {
        return Err(GswError::Numeric(format!(
            "1 − y_pᵀDy_p = {denom:e} below stability threshold for pivot {p}"
        )));
    }
    Ok((w, denom))
}

/// Minimizer of `‖Bu‖²` subject to `u[p] = 1` and `supp(u) ⊆ active`.
pub fn step_direction(
    setup: &CovariateSetup,
    active: &[usize],
    p: usize,
    cache: &InverseCache,
) -> Result<StepDirection> {
    check_pivot(active, p)?;
    let mut u = vec![0.0; setup.n()];
    if setup.dim() == 0 {
        u[p] = 1.0;
        return Ok(StepDirection {
            u,
            pivot: p,
            bu_norm_sq: 1.0,
        });
    }
    let (w, denom) = pivot_terms(setup, p, cache)?;
    let scale = 1.0 / denom;
    for &i in active {
        if i != p {
            u[i] = -dot(setup.y_row(i), &w) * scale;
        }
    }
    u[p] = 1.0;
    Ok(StepDirection {
        u,
        pivot: p,
        bu_norm_sq: scale,
    })
}

/// `⟨u(p, A), v⟩` without forming `u`.
pub fn direction_inner_product(
    setup: &CovariateSetup,
    active: &[usize],
    p: usize,
    cache: &InverseCache,
    v: &[f64],
) -> Result<f64> {
    check_pivot(active, p)?;
    if setup.dim() == 0 {
        return Ok(v[p]);
    }
    let (w, denom) = pivot_terms(setup, p, cache)?;
    let projected: f64 = active.iter().map(|&i| v[i] * dot(setup.y_row(i), &w)).sum();
    Ok((v[p] - projected) / denom)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &e| acc.max(e.abs()))
}

/// Smallest eigenvalue of a symmetric matrix; `None` for an empty matrix.
pub fn sym_lambda_min(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return None;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .reduce(f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup(rows: &[&[f64]], phi: f64) -> CovariateSetup {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        build_setup(x, phi).unwrap()
    }

    #[test]
    fn build_setup_scales_rows() {
        let s = setup(&[&[1.0], &[1.0]], 0.5);
        assert_eq!(s.xi(), 1.0);
        assert_eq!(s.zeta(), 1.0);
        assert_eq!(s.y_row(0), &[1.0]);
        assert_eq!(s.y_row(1), &[1.0]);

        let s = setup(&[&[3.0, 4.0]], 0.5);
        assert_eq!(s.xi(), 5.0);
        assert_relative_eq!(s.y_row(0)[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(s.y_row(0)[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn zero_covariates_collapse_to_identity_geometry() {
        let s = build_setup(DMatrix::zeros(3, 2), 0.5).unwrap();
        assert_eq!(s.d(), 2);
        assert_eq!(s.dim(), 0);
        assert_eq!(s.xi(), 0.0);
        let cache = InverseCache::for_active(&s, &[0, 1, 2]).unwrap();
        let dir = step_direction(&s, &[0, 1, 2], 1, &cache).unwrap();
        assert_eq!(dir.u, vec![0.0, 1.0, 0.0]);
        assert_eq!(dir.bu_norm_sq, 1.0);
    }

    #[test]
    fn build_setup_rejects_bad_inputs() {
        let x = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(
            build_setup(x.clone(), 0.0),
            Err(GswError::Parameter(_))
        ));
        assert!(matches!(
            build_setup(x.clone(), 1.0),
            Err(GswError::Parameter(_))
        ));
        assert!(matches!(
            build_setup(x, f64::NAN),
            Err(GswError::Parameter(_))
        ));
        let mut bad = DMatrix::from_element(2, 1, 1.0);
        bad[(1, 0)] = f64::INFINITY;
        match build_setup(bad, 0.5) {
            Err(GswError::Data(msg)) => assert!(msg.contains("row 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn row_norms_bounded_by_zeta() {
        let s = setup(&[&[1.0, -2.0], &[0.5, 0.1], &[3.0, 0.0]], 0.3);
        let max = (0..3)
            .map(|i| dot(s.y_row(i), s.y_row(i)).sqrt())
            .fold(0.0, f64::max);
        assert!(max <= s.zeta() * (1.0 + 1e-12));
        assert_relative_eq!(max, s.zeta(), max_relative = 1e-12);
    }

    #[test]
    fn init_inverse_examples() {
        let c = InverseCache::from_rows([&[1.0][..], &[1.0][..]], 1).unwrap();
        assert_relative_eq!(c.matrix()[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);

        let c = InverseCache::from_rows(std::iter::empty(), 1).unwrap();
        assert_eq!(c.matrix()[(0, 0)], 1.0);

        let c = InverseCache::from_rows([&[1.0, 0.0][..], &[0.0, 1.0][..]], 2).unwrap();
        assert_relative_eq!(c.matrix()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(c.matrix()[(1, 1)], 0.5, epsilon = 1e-15);
        assert_eq!(c.matrix()[(0, 1)], 0.0);

        assert!(matches!(
            InverseCache::from_rows([&[f64::NAN][..]], 1),
            Err(GswError::Numeric(_))
        ));
    }

    #[test]
    fn downdate_examples() {
        let mut c = InverseCache::from_rows([&[1.0][..], &[1.0][..]], 1).unwrap();
        c.downdate_with(&[1.0], || unreachable!()).unwrap();
        // (1 + 1)⁻¹ computed directly
        assert_relative_eq!(c.matrix()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_eq!(c.dirty_counter(), 1);
        assert_eq!(c.active_count(), 1);

        let mut c = InverseCache::from_rows([&[1.0][..], &[0.0][..]], 1).unwrap();
        let before = c.matrix().clone();
        c.downdate_with(&[0.0], || unreachable!()).unwrap();
        assert_eq!(c.matrix(), &before);

        let mut c = InverseCache::from_rows([&[1.0, 0.0][..], &[0.0, 1.0][..]], 2).unwrap();
        c.downdate_with(&[1.0, 0.0], || unreachable!()).unwrap();
        // direct inverse of I + e₂e₂ᵀ
        assert_relative_eq!(c.matrix()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(c.matrix()[(1, 1)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(c.matrix()[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn downdate_falls_back_when_denominator_collapses() {
        // y_p with huge norm: 1 − y_pᵀ D y_p = 1/(1+|y|²) underflows the threshold.
        let big = [1e6];
        let mut c = InverseCache::from_rows([&big[..]], 1).unwrap();
        let mut called = false;
        c.downdate_with(&big, || {
            called = true;
            InverseCache::from_rows(std::iter::empty(), 1)
        })
        .unwrap();
        assert!(called);
        assert_eq!(c.matrix()[(0, 0)], 1.0);
        assert_eq!(c.dirty_counter(), 0);
    }

    #[test]
    fn periodic_recompute_resets_counter() {
        let rows: Vec<[f64; 1]> = (0..70).map(|i| [0.1 + 0.01 * i as f64]).collect();
        let s = build_setup(DMatrix::from_fn(70, 1, |i, _| rows[i][0]), 0.5).unwrap();
        let mut active: Vec<usize> = (0..70).collect();
        let mut c = InverseCache::for_active(&s, &active).unwrap();
        for step in 0..65 {
            let p = active.remove(0);
            c.downdate(&s, p, &active).unwrap();
            if step == 62 {
                assert_eq!(c.dirty_counter(), 63);
            }
        }
        assert!(c.dirty_counter() < RECOMPUTE_INTERVAL);
        assert!(c.residual(&s, &active) < 1e-12);
    }

    #[test]
    fn empty_cache_downdate_is_a_logic_error() {
        let mut c = InverseCache::from_rows(std::iter::empty(), 1).unwrap();
        assert!(matches!(
            c.downdate_with(&[1.0], || unreachable!()),
            Err(GswError::Logic(_))
        ));
    }

    #[test]
    fn two_unit_direction() {
        let s = setup(&[&[1.0], &[1.0]], 0.5);
        let active = [0, 1];
        let c = InverseCache::for_active(&s, &active).unwrap();
        let dir = step_direction(&s, &active, 0, &c).unwrap();
        assert_eq!(dir.u[0], 1.0);
        assert_relative_eq!(dir.u[1], -0.5, epsilon = 1e-15);
        assert_relative_eq!(dir.bu_norm_sq, 1.5, epsilon = 1e-15);
        let bu = dir.augmented(&s);
        assert_relative_eq!(dot(&bu, &bu), 1.5, epsilon = 1e-15);

        let v = [1.0, -1.0];
        let ip = direction_inner_product(&s, &active, 0, &c, &v).unwrap();
        assert_relative_eq!(ip, 1.5, epsilon = 1e-15);
        assert_relative_eq!(dir.dot(&v), 1.5, epsilon = 1e-15);
        assert_eq!(
            direction_inner_product(&s, &active, 0, &c, &[0.0, 0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn zero_pivot_row_gives_unit_direction() {
        let s = setup(&[&[0.0], &[1.0], &[2.0]], 0.5);
        let active = [0, 1, 2];
        let c = InverseCache::for_active(&s, &active).unwrap();
        let dir = step_direction(&s, &active, 0, &c).unwrap();
        assert_eq!(dir.u, vec![1.0, 0.0, 0.0]);
        assert_eq!(dir.bu_norm_sq, 1.0);
    }

    #[test]
    fn no_covariates_inner_product_is_coordinate() {
        let s = build_setup(DMatrix::zeros(3, 0), 0.5).unwrap();
        let c = InverseCache::for_active(&s, &[0, 2]).unwrap();
        let ip = direction_inner_product(&s, &[0, 2], 2, &c, &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(ip, 6.0);
    }

    #[test]
    fn inactive_pivot_is_rejected() {
        let s = setup(&[&[1.0], &[1.0]], 0.5);
        let c = InverseCache::for_active(&s, &[1]).unwrap();
        assert!(matches!(
            step_direction(&s, &[1], 0, &c),
            Err(GswError::Logic(_))
        ));
        assert!(matches!(
            direction_inner_product(&s, &[1], 0, &c, &[1.0, 1.0]),
            Err(GswError::Logic(_))
        ));
    }

    #[test]
    fn c1_matches_closed_form() {
        let s = setup(&[&[1.0]], 0.2);
        let z2: f64 = 4.0;
        assert_relative_eq!(s.c1(), 1.0 + z2 * (1.0 + z2), epsilon = 1e-12);
    }

    #[test]
    fn symmetric_helpers() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -3.0]);
        assert_relative_eq!(sym_op_norm(&m), 3.0, epsilon = 1e-14);
        assert_relative_eq!(sym_lambda_min(&m).unwrap(), -3.0, epsilon = 1e-14);
        assert_eq!(sym_op_norm(&DMatrix::zeros(0, 0)), 0.0);
        assert!(sym_lambda_min(&DMatrix::zeros(0, 0)).is_none());
    }
}
