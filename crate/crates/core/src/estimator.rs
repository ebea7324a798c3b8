//! Outcome-side quantities: the treatment effect, its Horvitz–Thompson
//! estimate, the least-squares residual of the outcome sum on the covariates,
//! the finite-sample MSE bound and the asymptotic variance predictions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{GswError, Result};
use crate::linalg::{sym_lambda_min, sym_op_norm, CovariateSetup};

/// Potential outcomes. `mu = a + b` is always present; `a` and `b` only when
/// both were supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeData {
    a: Option<Vec<f64>>,
    b: Option<Vec<f64>>,
    mu: Vec<f64>,
}

impl OutcomeData {
    pub fn from_ab(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_lengths(a.len(), b.len(), "a", "b")?;
        check_finite(&a, "a")?;
        check_finite(&b, "b")?;
        let mu = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        Ok(Self {
            a: Some(a),
            b: Some(b),
            mu,
        })
    }

    /// Only the outcome sum is known; `τ` and `τ̂` are unavailable.
    pub fn from_mu(mu: Vec<f64>) -> Result<Self> {
        check_finite(&mu, "mu")?;
        Ok(Self {
            a: None,
            b: None,
            mu,
        })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn a(&self) -> Option<&[f64]> {
        self.a.as_deref()
    }

    pub fn b(&self) -> Option<&[f64]> {
        self.b.as_deref()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn has_effects(&self) -> bool {
        self.a.is_some()
    }
}

fn check_lengths(la: usize, lb: usize, na: &str, nb: &str) -> Result<()> {
    if la != lb {
        return Err(GswError::Data(format!(
            "length mismatch: {na} has {la} entries, {nb} has {lb}"
        )));
    }
    Ok(())
}

fn check_finite(v: &[f64], name: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(GswError::Data(format!(
            "non-finite value in {name} at row {}",
            i + 1
        ))),
        None => Ok(()),
    }
}

/// `τ = (1/n)·Σ(a_i − b_i)`.
pub fn ate(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a.len(), b.len(), "a", "b")?;
    if a.is_empty() {
        return Err(GswError::Data("no units".into()));
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| x - y).sum();
    Ok(s / a.len() as f64)
}

/// `τ̂ = (1/n)·(Σ_{z_i=+1} 2a_i − Σ_{z_i=−1} 2b_i)`.
pub fn ht_estimate(z: &[i8], a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a.len(), b.len(), "a", "b")?;
    check_lengths(z.len(), a.len(), "z", "a")?;
    if z.is_empty() {
        return Err(GswError::Data("no units".into()));
    }
    let mut s = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        s += match zi {
            1 => 2.0 * a[i],
            -1 => -2.0 * b[i],
            other => {
                return Err(GswError::Data(format!(
                    "assignment entry {} is {other}, expected +1 or -1",
                    i + 1
                )))
            }
        };
    }
    Ok(s / z.len() as f64)
}

/// `mu = X·beta_ls + v` with `v ⟂ ColSp(X)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualDecomposition {
    pub beta_ls: Vec<f64>,
    pub v: Vec<f64>,
    pub v_norm_sq: f64,
    pub v_inf: f64,
    /// Numerical rank of `X`.
    pub rank: usize,
}

/// Projects `mu` onto the orthogonal complement of the column space of `X`
/// with an SVD; `beta_ls` is the minimum-norm least-squares solution, so rank
/// deficiency is handled transparently.
pub fn residual_projection(mu: &[f64], x: &DMatrix<f64>) -> Result<ResidualDecomposition> {
    let n = x.nrows();
    check_lengths(mu.len(), n, "mu", "X rows")?;
    check_finite(mu, "mu")?;
    let d = x.ncols();
    let mu_vec = DVector::from_column_slice(mu);
    let (beta, rank) = if d == 0 || x.iter().all(|&v| v == 0.0) {
        (DVector::zeros(d), 0)
    } else {
        let svd = x.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let tol = smax * (n.max(d) as f64) * f64::EPSILON;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let beta = svd
            .solve(&mu_vec, tol)
            .map_err(|e| GswError::Numeric(format!("least-squares solve failed: {e}")))?;
        (beta, rank)
    };
    let fitted = if d == 0 { DVector::zeros(n) } else { x * &beta };
    let v: Vec<f64> = mu_vec
        .iter()
        .zip(fitted.iter())
        .map(|(m, f)| m - f)
        .collect();
    let v_norm_sq = v.iter().map(|x| x * x).sum();
    let v_inf = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    Ok(ResidualDecomposition {
        beta_ls: beta.iter().copied().collect(),
        v,
        v_norm_sq,
        v_inf,
        rank,
    })
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Right-hand side of the GSW mean-squared-error bound at `β = β_ls`, as a
/// bound on `n·E[(τ̂ − τ)²]`:
/// `‖mu − Xβ‖²/(φn) + ξ²‖β‖²/((1−φ)n)`.
pub fn mse_bound(decomp: &ResidualDecomposition, setup: &CovariateSetup) -> f64 {
    mse_bound_at(decomp, setup, 1.0)
}

/// The same bound evaluated at `β = c·β_ls`.
pub fn mse_bound_at(decomp: &ResidualDecomposition, setup: &CovariateSetup, c: f64) -> f64 {
    let n = setup.n() as f64;
    let phi = setup.phi();
    let fit_sq = fitted_norm_sq(decomp, setup);
    let misfit = decomp.v_norm_sq + (1.0 - c) * (1.0 - c) * fit_sq;
    let beta_sq = norm_sq(&decomp.beta_ls);
    let penalty = if setup.xi() == 0.0 {
        0.0
    } else {
        c * c * setup.xi() * setup.xi() * beta_sq / ((1.0 - phi) * n)
    };
    misfit / (phi * n) + penalty
}

fn fitted_norm_sq(decomp: &ResidualDecomposition, setup: &CovariateSetup) -> f64 {
    if decomp.beta_ls.is_empty() {
        return 0.0;
    }
    let beta = DVector::from_column_slice(&decomp.beta_ls);
    (setup.x() * beta).norm_squared()
}

/// Minimizes the bound over the ray `c·β_ls`, `c ∈ [0, 1]`. Returns `(c, bound)`.
pub fn mse_bound_line_search(decomp: &ResidualDecomposition, setup: &CovariateSetup) -> (f64, f64) {
    let phi = setup.phi();
    let fit = fitted_norm_sq(decomp, setup) / phi;
    let pen = setup.xi() * setup.xi() * norm_sq(&decomp.beta_ls) / (1.0 - phi);
    let c = if fit + pen > 0.0 {
        fit / (fit + pen)
    } else {
        0.0
    };
    (c, mse_bound_at(decomp, setup, c))
}

/// `(‖mu‖²/n², ‖v‖²/n²)`: exact variance of `τ̂` under i.i.d. signs and the
/// asymptotic GSW variance.
pub fn predicted_variances(decomp: &ResidualDecomposition, mu: &[f64]) -> (f64, f64) {
    let n2 = (mu.len() as f64).powi(2);
    (norm_sq(mu) / n2, decomp.v_norm_sq / n2)
}

/// How `κ` came out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaStatus {
    Finite,
    /// `λ_min(YᵀY)` is numerically zero.
    RankDeficient,
    /// No covariates; `κ` is reported as 0.
    NoCovariates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kappa {
    pub value: f64,
    pub lambda_min: f64,
    pub status: KappaStatus,
}

/// `κ = n / λ_min(YᵀY)`.
pub fn kappa_diagnostic(setup: &CovariateSetup) -> Kappa {
    let gram = setup.full_gram();
    let Some(lambda_min) = sym_lambda_min(&gram) else {
        return Kappa {
            value: 0.0,
            lambda_min: 0.0,
            status: KappaStatus::NoCovariates,
        };
    };
    if lambda_min <= 1e-12 * sym_op_norm(&gram) {
        return Kappa {
            value: f64::INFINITY,
            lambda_min,
            status: KappaStatus::RankDeficient,
        };
    }
    Kappa {
        value: setup.n() as f64 / lambda_min,
        lambda_min,
        status: KappaStatus::Finite,
    }
}

/// `√d·(‖v‖∞/‖v‖)·κ²·ln n`; small values indicate the Gaussian regime.
pub fn formal_condition(decomp: &ResidualDecomposition, setup: &CovariateSetup) -> Result<f64> {
    if decomp.v_norm_sq == 0.0 {
        return Err(GswError::Degenerate(
            "residual is zero: the outcome sum lies in the covariate span".into(),
        ));
    }
    let kappa = kappa_diagnostic(setup).value;
    let d = setup.d() as f64;
    let n = setup.n() as f64;
    Ok(d.sqrt() * (decomp.v_inf / decomp.v_norm_sq.sqrt()) * kappa * kappa * n.ln())
}

/// Raw regularity quantities. No thresholds are applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionDiagnostics {
    /// `(‖v‖∞/‖v‖)·ln³n`
    pub residual_spread: Option<f64>,
    /// `λ_min(XᵀX)/n`
    pub covariate_lambda_min_per_unit: Option<f64>,
    /// `ξ²/(d·ln n)`
    pub row_norm_growth: Option<f64>,
    /// `‖v‖²/ln²n`
    pub residual_mass: Option<f64>,
}

pub fn assumption_diagnostics(
    decomp: &ResidualDecomposition,
    setup: &CovariateSetup,
) -> AssumptionDiagnostics {
    let n = setup.n() as f64;
    let ln = n.ln();
    let d = setup.d();
    let residual_spread =
        (decomp.v_norm_sq > 0.0).then(|| decomp.v_inf / decomp.v_norm_sq.sqrt() * ln.powi(3));
    let covariate_lambda_min_per_unit = if d == 0 {
        None
    } else {
        let xtx = setup.x().transpose() * setup.x();
        sym_lambda_min(&xtx).map(|l| l / n)
    };
    let row_norm_growth = (d > 0 && ln > 0.0).then(|| setup.xi().powi(2) / (d as f64 * ln));
    let residual_mass = (ln > 0.0).then(|| decomp.v_norm_sq / (ln * ln));
    AssumptionDiagnostics {
        residual_spread,
        covariate_lambda_min_per_unit,
        row_norm_growth,
        residual_mass,
    }
}

/// Everything `estimate` reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub d: usize,
    pub phi: f64,
    pub tau: Option<f64>,
    pub tau_hat: Option<f64>,
    pub mse_bound: f64,
    pub mse_bound_line_search: f64,
    pub line_search_scale: f64,
    pub var_iid: f64,
    pub var_gsw_asymptotic: f64,
    pub kappa: f64,
    pub kappa_status: KappaStatus,
    pub formal_condition_value: Option<f64>,
    pub beta_ls: Vec<f64>,
    pub v_norm_sq: f64,
    pub v_inf: f64,
    pub rank: usize,
    pub assumptions: AssumptionDiagnostics,
    pub notes: Vec<String>,
}

/// Builds the full report. `z`, when given, must be a `±1` vector and
/// requires `a` and `b`.
pub fn estimate_report(
    setup: &CovariateSetup,
    outcomes: &OutcomeData,
    z: Option<&[i8]>,
) -> Result<EstimateReport> {
    check_lengths(outcomes.n(), setup.n(), "outcomes", "X rows")?;
    let decomp = residual_projection(outcomes.mu(), setup.x())?;
    let (var_iid, var_gsw) = predicted_variances(&decomp, outcomes.mu());
    let kappa = kappa_diagnostic(setup);
    let mut notes = Vec::new();
    let tau = match (outcomes.a(), outcomes.b()) {
        (Some(a), Some(b)) => Some(ate(a, b)?),
        _ => None,
    };
    let tau_hat = match (z, outcomes.a(), outcomes.b()) {
        (Some(z), Some(a), Some(b)) => Some(ht_estimate(z, a, b)?),
        (Some(_), _, _) => {
            return Err(GswError::Data(
                "estimating the effect requires both a and b outcome columns".into(),
            ))
        }
        _ => None,
    };
    if kappa.status == KappaStatus::NoCovariates {
        notes.push("no covariates: kappa reported as 0".into());
    }
    let formal_condition_value = match formal_condition(&decomp, setup) {
        Ok(v) => Some(v),
        Err(GswError::Degenerate(msg)) => {
            notes.push(msg);
            None
        }
        Err(e) => return Err(e),
    };
    if decomp.rank < setup.d() {
        notes.push(format!(
            "covariate matrix is rank deficient (rank {} < d = {})",
            decomp.rank,
            setup.d()
        ));
    }
    let (c, tightened) = mse_bound_line_search(&decomp, setup);
    Ok(EstimateReport {
        n: setup.n(),
        d: setup.d(),
        phi: setup.phi(),
        tau,
        tau_hat,
        mse_bound: mse_bound(&decomp, setup),
        mse_bound_line_search: tightened,
        line_search_scale: c,
        var_iid,
        var_gsw_asymptotic: var_gsw,
        kappa: kappa.value,
        kappa_status: kappa.status,
        formal_condition_value,
        assumptions: assumption_diagnostics(&decomp, setup),
        beta_ls: decomp.beta_ls,
        v_norm_sq: decomp.v_norm_sq,
        v_inf: decomp.v_inf,
        rank: decomp.rank,
        notes,
    })
}
