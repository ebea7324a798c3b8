//! Replication engine.
//!
//! Replication `k` of a run seeded with `seed` draws from the streams of
//! replication `k` (see [`crate::rng`]), so results are identical for any
//! number of worker threads. Synthetic covariates and outcomes come from the
//! data streams of the same seed.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::stats::{histogram, ks_distance, mean, pairwise_sum, variance, variance_standard_error};
use crate::error::{GswError, Result};
use crate::estimator::{
    ate, ht_estimate, kappa_diagnostic, mse_bound, residual_projection, OutcomeData,
};
use crate::linalg::{build_setup, dot, CovariateSetup};
use crate::rng::{Lane, RngStream};
use crate::sampler::{run_gsw_with, run_iid, FREEZE_TOL};
use crate::skeletal::{orthogonality_warning, run_coupled_replication, CoupledOptions};

const X_SLOT: u64 = 0;
const OUTCOME_SLOT: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Gsw,
    Iid,
    /// The skeletal martingale `M_n` of a coupled run.
    Skeletal,
    /// The gs half of a coupled run, with coupling statistics.
    Coupled,
}

impl std::str::FromStr for Mode {
    type Err = GswError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gsw" => Ok(Mode::Gsw),
            "iid" => Ok(Mode::Iid),
            "skeletal" => Ok(Mode::Skeletal),
            "coupled" => Ok(Mode::Coupled),
            other => Err(GswError::Parameter(format!(
                "unknown mode '{other}' (expected gsw, iid, skeletal or coupled)"
            ))),
        }
    }
}

/// Where the covariates come from.
#[derive(Debug, Clone, PartialEq)]
pub enum XGenerator {
    /// i.i.d. standard normal entries.
    Gaussian,
    /// Gaussian rows rescaled to unit norm.
    UnitSphere,
    Ones,
    Zero,
    Matrix(DMatrix<f64>),
}

/// Where the outcomes come from.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeSpec {
    Given(OutcomeData),
    /// `b = signal·Xβ + noise·e` with `β, e` standard normal, `a = b + effect`.
    Synthetic {
        signal: f64,
        noise: f64,
        effect: f64,
    },
}

/// What each replication records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `τ̂` (needs both outcome columns).
    TauHat,
    /// `⟨z, v⟩` with `v` the residual of `mu` on the covariates.
    ResidualInnerProduct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub d: usize,
    pub phi: f64,
    pub replications: usize,
    pub seed: u64,
    pub mode: Mode,
    pub x: XGenerator,
    pub outcomes: OutcomeSpec,
    /// `None` picks `TauHat` when both outcome columns exist.
    pub target: Option<Target>,
    pub epsilon_override: Option<f64>,
    pub freeze_tol: f64,
}

impl SimConfig {
    pub fn new(n: usize, d: usize, phi: f64, replications: usize, seed: u64, mode: Mode) -> Self {
        Self {
            n,
            d,
            phi,
            replications,
            seed,
            mode,
            x: XGenerator::Gaussian,
            outcomes: OutcomeSpec::Synthetic {
                signal: 1.0,
                noise: 1.0,
                effect: 1.0,
            },
            target: None,
            epsilon_override: None,
            freeze_tol: FREEZE_TOL,
        }
    }
}

/// Covariates for `(n, d)` from the data stream of `seed`.
pub fn generate_x(gen: &XGenerator, n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = RngStream::for_data(seed, X_SLOT);
    Ok(match gen {
        XGenerator::Gaussian => DMatrix::from_fn(n, d, |_, _| rng.next_normal()),
        XGenerator::UnitSphere => {
            // row-major fill so row i depends only on the first i rows of draws
            let mut x = DMatrix::zeros(n, d);
            for i in 0..n {
                for j in 0..d {
                    x[(i, j)] = rng.next_normal();
                }
                let norm = x.row(i).norm();
                if norm > 0.0 {
                    x.row_mut(i).unscale_mut(norm);
                }
            }
            x
        }
        XGenerator::Ones => DMatrix::from_element(n, d, 1.0),
        XGenerator::Zero => DMatrix::zeros(n, d),
        XGenerator::Matrix(m) => {
            if m.nrows() != n || m.ncols() != d {
                return Err(GswError::Data(format!(
                    "covariate matrix is {}×{}, configuration says {n}×{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            m.clone()
        }
    })
}

/// Outcomes for the covariates `x` from the data stream of `seed`.
pub fn generate_outcomes(source: &OutcomeSpec, x: &DMatrix<f64>, seed: u64) -> Result<OutcomeData> {
    match source {
        OutcomeSpec::Given(o) => {
            if o.n() != x.nrows() {
                return Err(GswError::Data(format!(
                    "outcomes have {} rows, covariates {}",
                    o.n(),
                    x.nrows()
                )));
            }
            Ok(o.clone())
        }
        &OutcomeSpec::Synthetic {
            signal,
            noise,
            effect,
        } => {
            let mut rng = RngStream::for_data(seed, OUTCOME_SLOT);
            let beta: Vec<f64> = (0..x.ncols()).map(|_| rng.next_normal()).collect();
            let b: Vec<f64> = (0..x.nrows())
                .map(|i| {
                    let lin: f64 = x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
                    signal * lin + noise * rng.next_normal()
                })
                .collect();
            let a = b.iter().map(|v| v + effect).collect();
            OutcomeData::from_ab(a, b)
        }
    }
}

/// Averages over coupled runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingSummary {
    pub mean_case1_rounds: f64,
    pub min_case1_rounds: usize,
    pub threshold_t: i64,
    pub eps_n: f64,
    /// Largest `|QV − ‖v‖²|/‖v‖²` over replications.
    pub max_qv_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationDiagnostics {
    pub mode: Mode,
    pub target: Target,
    pub n: usize,
    pub d: usize,
    pub phi: f64,
    pub seed: u64,
    pub replications: usize,
    #[serde(skip)]
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Unbiased sample variance; `None` with a single replication.
    pub variance: Option<f64>,
    pub variance_undefined: bool,
    pub variance_se: Option<f64>,
    /// Standard error of `mean`.
    pub mc_standard_error: Option<f64>,
    /// `‖v‖²` for `⟨z,v⟩`; `‖mu‖²/n²` (i.i.d.) or `‖v‖²/n²` for `τ̂`.
    pub predicted_variance: f64,
    pub variance_ratio: Option<f64>,
    /// 95% normal interval for the ratio.
    pub variance_ratio_ci: Option<(f64, f64)>,
    /// `1/φ`, the ratio ceiling implied by the finite-sample MSE bound.
    pub phi_ceiling: f64,
    /// KS distance of `(sample − center)/√predicted` to `N(0,1)`.
    pub ks_distance: Option<f64>,
    /// Mean of the target under the design: `τ` for `τ̂`, `0` for `⟨z,v⟩`.
    pub center: f64,
    /// `n·mean((τ̂ − τ)²)` and its standard error (target `τ̂` only).
    pub n_mse: Option<f64>,
    pub n_mse_se: Option<f64>,
    pub mse_bound: f64,
    pub kappa: f64,
    pub v_norm_sq: f64,
    pub mu_norm_sq: f64,
    pub coupling: Option<CouplingSummary>,
    pub warnings: Vec<String>,
}

impl SimulationDiagnostics {
    pub fn histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        histogram(&self.samples, bins)
    }
}

/// Problem prepared for replication.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    pub setup: CovariateSetup,
    pub outcomes: OutcomeData,
    pub v: Vec<f64>,
}

pub fn prepare(config: &SimConfig) -> Result<PreparedProblem> {
    validate(config)?;
    let x = generate_x(&config.x, config.n, config.d, config.seed)?;
    let outcomes = generate_outcomes(&config.outcomes, &x, config.seed)?;
    let setup = build_setup(x, config.phi)?;
    let v = residual_projection(outcomes.mu(), setup.x())?.v;
    Ok(PreparedProblem { setup, outcomes, v })
}

fn validate(config: &SimConfig) -> Result<()> {
    if config.replications == 0 {
        return Err(GswError::Parameter(
            "replications must be at least 1".into(),
        ));
    }
    if config.n == 0 {
        return Err(GswError::Parameter("n must be at least 1".into()));
    }
    if !(config.freeze_tol >= 0.0 && config.freeze_tol < 0.5) {
        return Err(GswError::Parameter(format!(
            "freeze_tol must lie in [0, 0.5), got {}",
            config.freeze_tol
        )));
    }
    Ok(())
}

fn resolve_target(config: &SimConfig, outcomes: &OutcomeData) -> Result<Target> {
    let target =
        config
            .target
            .unwrap_or(if outcomes.has_effects() && config.mode != Mode::Skeletal {
                Target::TauHat
            } else {
                Target::ResidualInnerProduct
            });
    if target == Target::TauHat && !outcomes.has_effects() {
        return Err(GswError::Parameter(
            "the tau_hat target needs both a and b outcome columns".into(),
        ));
    }
    if target == Target::TauHat && config.mode == Mode::Skeletal {
        return Err(GswError::Parameter(
            "skeletal mode produces the martingale M_n, not an assignment; use the residual target"
                .into(),
        ));
    }
    Ok(target)
}

/// Per-replication output of the coupled modes.
struct CoupledSample {
    value: f64,
    case1_rounds: usize,
    qv_rel_error: f64,
    threshold_t: i64,
    eps_n: f64,
}

fn assignment_value(z: &[i8], target: Target, outcomes: &OutcomeData, v: &[f64]) -> Result<f64> {
    match target {
        Target::TauHat => ht_estimate(z, outcomes.a().unwrap_or(&[]), outcomes.b().unwrap_or(&[])),
        Target::ResidualInnerProduct => Ok(z.iter().zip(v).map(|(&s, x)| f64::from(s) * x).sum()),
    }
}

fn signs(z: &[f64]) -> Vec<i8> {
    z.iter().map(|&x| if x > 0.0 { 1 } else { -1 }).collect()
}

/// Runs replications of `problem` and summarizes them.
pub fn run_prepared(
    config: &SimConfig,
    problem: &PreparedProblem,
) -> Result<SimulationDiagnostics> {
    validate(config)?;
    let PreparedProblem { setup, outcomes, v } = problem;
    let target = resolve_target(config, outcomes)?;
    let n = setup.n();
    let opts = CoupledOptions {
        eps_override: config.epsilon_override,
        freeze_tol: config.freeze_tol,
        record_directions: false,
    };
    let mut warnings = Vec::new();
    if matches!(config.mode, Mode::Skeletal | Mode::Coupled) {
        if let Some(w) = orthogonality_warning(setup, v) {
            warnings.push(w);
        }
    }

    let results: Vec<CoupledSample> = (0..config.replications)
        .into_par_iter()
        .map(|k| -> Result<CoupledSample> {
            let k = k as u64;
            let plain = |value| CoupledSample {
                value,
                case1_rounds: 0,
                qv_rel_error: 0.0,
                threshold_t: 0,
                eps_n: 0.0,
            };
            match config.mode {
                Mode::Gsw => {
                    let mut rng = RngStream::for_replication(config.seed, k, Lane::Main);
                    let z = run_gsw_with(setup, &mut rng, config.freeze_tol)?;
                    Ok(plain(assignment_value(&z, target, outcomes, v)?))
                }
                Mode::Iid => {
                    let mut rng = RngStream::for_replication(config.seed, k, Lane::Main);
                    let z = run_iid(n, &mut rng);
                    Ok(plain(assignment_value(&z, target, outcomes, v)?))
                }
                Mode::Skeletal | Mode::Coupled => {
                    let traj = run_coupled_replication(setup, v, config.seed, k, &opts)?;
                    let value = if config.mode == Mode::Skeletal {
                        traj.m
                    } else {
                        assignment_value(&signs(&traj.z_gs), target, outcomes, v)?
                    };
                    let qv_rel_error = if traj.v_norm_sq > 0.0 {
                        (traj.quadratic_variation - traj.v_norm_sq).abs() / traj.v_norm_sq
                    } else {
                        traj.quadratic_variation.abs()
                    };
                    Ok(CoupledSample {
                        value,
                        case1_rounds: traj.case1_rounds,
                        qv_rel_error,
                        threshold_t: traj.threshold_t,
                        eps_n: traj.eps_n,
                    })
                }
            }
        })
        .collect::<Result<_>>()?;

    let samples: Vec<f64> = results.iter().map(|r| r.value).collect();
    let coupling = matches!(config.mode, Mode::Skeletal | Mode::Coupled).then(|| {
        let rounds: Vec<f64> = results.iter().map(|r| r.case1_rounds as f64).collect();
        CouplingSummary {
            mean_case1_rounds: mean(&rounds),
            min_case1_rounds: results.iter().map(|r| r.case1_rounds).min().unwrap_or(0),
            threshold_t: results[0].threshold_t,
            eps_n: results[0].eps_n,
            max_qv_rel_error: results.iter().map(|r| r.qv_rel_error).fold(0.0, f64::max),
        }
    });
    summarize(config, problem, target, samples, coupling, warnings)
}

fn summarize(
    config: &SimConfig,
    problem: &PreparedProblem,
    target: Target,
    samples: Vec<f64>,
    coupling: Option<CouplingSummary>,
    mut warnings: Vec<String>,
) -> Result<SimulationDiagnostics> {
    let PreparedProblem { setup, outcomes, v } = problem;
    let n = setup.n();
    let nf = n as f64;
    let reps = samples.len();
    let decomp = residual_projection(outcomes.mu(), setup.x())?;
    let v_norm_sq = dot(v, v);
    let mu_norm_sq = dot(outcomes.mu(), outcomes.mu());
    let (predicted_variance, center) = match target {
        Target::TauHat => {
            let tau = ate(outcomes.a().unwrap_or(&[]), outcomes.b().unwrap_or(&[]))?;
            let p = if config.mode == Mode::Iid {
                mu_norm_sq / (nf * nf)
            } else {
                v_norm_sq / (nf * nf)
            };
            (p, tau)
        }
        Target::ResidualInnerProduct => (v_norm_sq, 0.0),
    };
    // a residual at rounding level means mu lies in the covariate span
    let scale = match target {
        Target::TauHat => mu_norm_sq / (nf * nf),
        Target::ResidualInnerProduct => mu_norm_sq,
    };
    let predicted_variance = if predicted_variance <= 1e-20 * scale {
        0.0
    } else {
        predicted_variance
    };
    let m = mean(&samples);
    let var = variance(&samples);
    let var_se = variance_standard_error(&samples);
    if var.is_none() {
        warnings.push("a single replication leaves the variance undefined".into());
    }
    let ratio = var
        .filter(|_| predicted_variance > 0.0)
        .map(|s| s / predicted_variance);
    if predicted_variance == 0.0 {
        warnings.push("predicted variance is zero; ratio and KS distance are undefined".into());
    }
    let ratio_ci = ratio.zip(var_se).map(|(r, se)| {
        let h = 1.96 * se / predicted_variance;
        (r - h, r + h)
    });
    let ks = if predicted_variance > 0.0 {
        let sd = predicted_variance.sqrt();
        let z: Vec<f64> = samples.iter().map(|x| (x - center) / sd).collect();
        Some(ks_distance(&z)?)
    } else {
        None
    };
    let (n_mse, n_mse_se) = if target == Target::TauHat {
        let sq: Vec<f64> = samples.iter().map(|t| nf * (t - center).powi(2)).collect();
        let mse = pairwise_sum(&sq) / reps as f64;
        let se = variance(&sq).map(|s| (s / reps as f64).sqrt());
        (Some(mse), se)
    } else {
        (None, None)
    };
    Ok(SimulationDiagnostics {
        mode: config.mode,
        target,
        n,
        d: setup.d(),
        phi: setup.phi(),
        seed: config.seed,
        replications: reps,
        mean: m,
        variance: var,
        variance_undefined: var.is_none(),
        variance_se: var_se,
        mc_standard_error: var.map(|s| (s / reps as f64).sqrt()),
        predicted_variance,
        variance_ratio: ratio,
        variance_ratio_ci: ratio_ci,
        phi_ceiling: 1.0 / setup.phi(),
        ks_distance: ks,
        center,
        n_mse,
        n_mse_se,
        mse_bound: mse_bound(&decomp, setup),
        kappa: kappa_diagnostic(setup).value,
        v_norm_sq,
        mu_norm_sq,
        coupling,
        warnings,
        samples,
    })
}

/// Generates the problem described by `config` and runs its replications.
pub fn run_replications(config: &SimConfig) -> Result<SimulationDiagnostics> {
    let problem = prepare(config)?;
    run_prepared(config, &problem)
}

/// Replicates `⟨z, v⟩` for a residual `v ⟂ ColSp(X)` and reports
/// `Var⟨z,v⟩/‖v‖²`.
pub fn variance_ratio_experiment(
    config: &SimConfig,
    setup: &CovariateSetup,
    v: &[f64],
) -> Result<SimulationDiagnostics> {
    if v.len() != setup.n() {
        return Err(GswError::Data(format!(
            "residual has length {}, expected {}",
            v.len(),
            setup.n()
        )));
    }
    if dot(v, v) == 0.0 {
        return Err(GswError::Degenerate("residual vector is zero".into()));
    }
    if let Some(w) = orthogonality_warning(setup, v) {
        return Err(GswError::Data(w));
    }
    let problem = PreparedProblem {
        setup: setup.clone(),
        outcomes: OutcomeData::from_mu(v.to_vec())?,
        v: v.to_vec(),
    };
    let mut cfg = config.clone();
    cfg.target = Some(Target::ResidualInnerProduct);
    run_prepared(&cfg, &problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_replication_flags_undefined_variance() {
        let cfg = SimConfig::new(10, 1, 0.5, 1, 3, Mode::Gsw);
        let d = run_replications(&cfg).unwrap();
        assert!(d.variance_undefined);
        assert!(d.variance.is_none());
    }

    #[test]
    fn results_are_deterministic() {
        let cfg = SimConfig::new(30, 2, 0.5, 50, 9, Mode::Gsw);
        let a = run_replications(&cfg).unwrap();
        let b = run_replications(&cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a, b);
    }

    #[test]
    fn thread_count_does_not_change_samples() {
        let cfg = SimConfig::new(20, 2, 0.5, 40, 4, Mode::Coupled);
        let a = run_replications(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| run_replications(&cfg).unwrap());
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn residual_target_in_column_space_has_no_variance() {
        let mut cfg = SimConfig::new(20, 2, 0.5, 30, 1, Mode::Gsw);
        cfg.outcomes = OutcomeSpec::Synthetic {
            signal: 1.0,
            noise: 0.0,
            effect: 0.0,
        };
        let d = run_replications(&cfg).unwrap();
        assert_eq!(d.predicted_variance, 0.0);
        assert!(d.ks_distance.is_none());
        let bound_on_var = d.mse_bound / cfg.n as f64;
        assert!(d.variance.unwrap() <= bound_on_var);
    }

    #[test]
    fn variance_ratio_rejects_zero_and_non_orthogonal_residuals() {
        let cfg = SimConfig::new(6, 1, 0.5, 10, 1, Mode::Gsw);
        let s = build_setup(DMatrix::from_element(6, 1, 1.0), 0.5).unwrap();
        assert!(matches!(
            variance_ratio_experiment(&cfg, &s, &[0.0; 6]),
            Err(GswError::Degenerate(_))
        ));
        assert!(variance_ratio_experiment(&cfg, &s, &[1.0; 6]).is_err());
        let v = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        assert!(variance_ratio_experiment(&cfg, &s, &v).is_ok());
    }

    #[test]
    fn without_covariates_gsw_is_iid() {
        let mut cfg = SimConfig::new(16, 0, 0.5, 4000, 2, Mode::Gsw);
        cfg.target = Some(Target::ResidualInnerProduct);
        let d = run_replications(&cfg).unwrap();
        let r = d.variance_ratio.unwrap();
        let se = d.variance_se.unwrap() / d.predicted_variance;
        assert!((r - 1.0).abs() < 4.0 * se, "ratio {r} se {se}");
    }

    #[test]
    fn skeletal_martingale_has_exact_variance_scale() {
        let mut cfg = SimConfig::new(40, 2, 0.5, 200, 5, Mode::Skeletal);
        cfg.x = XGenerator::UnitSphere;
        let d = run_replications(&cfg).unwrap();
        assert_eq!(d.target, Target::ResidualInnerProduct);
        assert!(d.coupling.unwrap().max_qv_rel_error < 1e-8);
    }

    #[test]
    fn mode_names_parse() {
        assert_eq!("coupled".parse::<Mode>().unwrap(), Mode::Coupled);
        assert!("bogus".parse::<Mode>().is_err());
    }
}
