//! The coupled gs/skeletal construction.
//!
//! Two processes share one probability space. The gs-process is the
//! Gram–Schmidt Walk itself. The skeletal process removes exactly one uniformly
//! chosen pivot per round and moves by `η_t = ±1`, so its normalized directions
//! `Bu_t/‖Bu_t‖` are the Gram–Schmidt orthonormalization of the columns of `B`
//! in a uniformly random order.
//!
//! While every round so far satisfied the good events
//!
//! * `G₁`: `max_{i∈A_t} |z_{t−1}[i]| < ε_n`,
//! * `G₂`: `‖Y_tᵀY_t − ((n−t+1)/n)·YᵀY‖_op ≤ ((n−t+1)/(2n))·λ_min(YᵀY)`,
//!
//! and `t ≤ n − 6·C₁(ζ)·ζ²·κ`, both processes take the *same* pivot, direction
//! and step (case 1). Afterwards (case 2) they evolve separately; the gs-process
//! keeps consuming the main lane exactly as a stand-alone walk would, and the
//! skeletal pivots come from the auxiliary lane.
//!
//! Three martingales are tracked for a test vector `v`:
//! `M^gs_t = ⟨z^gs_t, v⟩`, `M̃_t = ⟨z_t, v⟩` and
//! `M_t = Σ_s η_s·⟨u_s, v⟩/‖Bu_s‖`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{GswError, Result};
use crate::estimator::kappa_diagnostic;
use crate::linalg::{
    dot, step_direction, sym_lambda_min, sym_op_norm, CovariateSetup, InverseCache,
};
use crate::rng::{Lane, RngStream, UniformSource};
use crate::sampler::{gsw_step, DesignState, FREEZE_TOL};

/// Slack for comparing `|δ± − 1|` against `ε_n` in floating point.
const DELTA_SLACK: f64 = 1e-12;

/// `ε_n = min(1/√(log(e·n)), 1/3)`.
pub fn epsilon_schedule(n: usize) -> f64 {
    let n = n.max(1) as f64;
    (1.0 / (1.0 + n.ln()).sqrt()).min(1.0 / 3.0)
}

/// `G₁`: every active coordinate of the previous fractional assignment is
/// strictly below `eps_n` in absolute value.
pub fn check_g1(z_prev: &[f64], active: &[usize], eps_n: f64) -> bool {
    active.iter().all(|&i| z_prev[i].abs() < eps_n)
}

/// `G₂` for round `t` (1-based); `active` must hold `n − t + 1` rows.
pub fn check_g2(setup: &CovariateSetup, active: &[usize], t: usize) -> Result<bool> {
    let n = setup.n();
    if t == 0 || t > n || active.len() != n - t + 1 {
        return Err(GswError::Logic(format!(
            "round {t} needs an active set of size {}, got {}",
            (n + 1).saturating_sub(t),
            active.len()
        )));
    }
    if setup.dim() == 0 {
        return Ok(true);
    }
    let full = setup.full_gram();
    let lambda_min = sym_lambda_min(&full).unwrap_or(0.0);
    Ok(g2_holds(setup, active, &full, lambda_min))
}

fn g2_holds(
    setup: &CovariateSetup,
    active: &[usize],
    full: &DMatrix<f64>,
    lambda_min: f64,
) -> bool {
    if setup.dim() == 0 {
        return true;
    }
    let n = setup.n() as f64;
    let frac = active.len() as f64 / n;
    let diff = setup.active_gram(active) - full * frac;
    sym_op_norm(&diff) <= 0.5 * frac * lambda_min
}

/// `η_t = +1` iff `U_t ≤ 1/2`.
pub fn eta_draw(u_t: f64) -> f64 {
    if u_t <= 0.5 {
        1.0
    } else {
        -1.0
    }
}

/// Case-1 threshold `⌊n − 6·C₁(ζ)·ζ²·κ⌋`; `i64::MIN` when `κ` is infinite.
pub fn case1_threshold(setup: &CovariateSetup, kappa: f64) -> i64 {
    let z2 = setup.zeta() * setup.zeta();
    let raw = setup.n() as f64 - 6.0 * setup.c1() * z2 * kappa;
    if raw.is_finite() {
        raw.floor() as i64
    } else {
        i64::MIN
    }
}

/// Knobs for a coupled run.
#[derive(Debug, Clone, Copy)]
pub struct CoupledOptions {
    /// Overrides `epsilon_schedule(n)`; must lie in `(0, 1)`.
    pub eps_override: Option<f64>,
    pub freeze_tol: f64,
    /// Keep every normalized skeletal direction `Bu_t/‖Bu_t‖` (memory `O(n²)`).
    pub record_directions: bool,
}

impl Default for CoupledOptions {
    fn default() -> Self {
        Self {
            eps_override: None,
            freeze_tol: FREEZE_TOL,
            record_directions: false,
        }
    }
}

/// The skeletal half of the coupled state. `z` may leave the unit box once the
/// processes decouple.
#[derive(Debug, Clone)]
pub struct SkeletalState {
    z: Vec<f64>,
    active: Vec<usize>,
    cache: InverseCache,
}

impl SkeletalState {
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    fn remove(&mut self, setup: &CovariateSetup, p: usize) -> Result<()> {
        let pos = self
            .active
            .binary_search(&p)
            .map_err(|_| GswError::Logic(format!("skeletal pivot {p} is not active")))?;
        self.active.remove(pos);
        self.cache.downdate(setup, p, &self.active)
    }
}

/// Per-round record of the good events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct GoodEventFlags {
    pub g1: bool,
    pub g2: bool,
    /// First round at which either event failed, if any.
    pub first_violation_t: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Case {
    Coupled,
    Decoupled,
}

impl Case {
    pub fn number(self) -> u8 {
        match self {
            Case::Coupled => 1,
            Case::Decoupled => 2,
        }
    }
}

/// One row of the trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub t: usize,
    pub case: Case,
    pub pivot_gs: Option<usize>,
    pub pivot_sk: usize,
    pub g1: bool,
    pub g2: bool,
    /// Skeletal step `δ_t` (equals `δ^gs_t` in case 1, `η_t` in case 2).
    pub delta: f64,
    pub delta_gs: f64,
    /// `(δ⁺, δ⁻)` of the gs round, when the gs-process moved.
    pub step_bounds_gs: Option<(f64, f64)>,
    pub eta: f64,
    pub m_gs: f64,
    pub m_tilde: f64,
    pub m: f64,
    /// `⟨Bu_t/‖Bu_t‖, (v;0)⟩²` for the skeletal direction.
    pub qv_increment: f64,
}

/// Joint state of both processes between rounds.
#[derive(Debug, Clone)]
pub struct CoupledState {
    gs: DesignState,
    sk: SkeletalState,
    in_case1: bool,
    eps_n: f64,
    threshold_t: i64,
    kappa: f64,
    full_gram: DMatrix<f64>,
    lambda_min: f64,
    flags: GoodEventFlags,
    t: usize,
    m_gs: f64,
    m_tilde: f64,
    m: f64,
}

impl CoupledState {
    pub fn new(setup: &CovariateSetup, eps_override: Option<f64>) -> Result<Self> {
        let eps_n = match eps_override {
            Some(e) if e > 0.0 && e < 1.0 => e,
            Some(e) => {
                return Err(GswError::Parameter(format!(
                    "epsilon override must lie in (0, 1), got {e}"
                )))
            }
            None => epsilon_schedule(setup.n()),
        };
        let kappa = kappa_diagnostic(setup).value;
        let gs = DesignState::new(setup)?;
        let sk = SkeletalState {
            z: gs.z().to_vec(),
            active: gs.active().to_vec(),
            cache: gs.cache().clone(),
        };
        let full_gram = setup.full_gram();
        let lambda_min = sym_lambda_min(&full_gram).unwrap_or(0.0);
        Ok(Self {
            gs,
            sk,
            in_case1: true,
            eps_n,
            threshold_t: case1_threshold(setup, kappa),
            kappa,
            full_gram,
            lambda_min,
            flags: GoodEventFlags::default(),
            t: 0,
            m_gs: 0.0,
            m_tilde: 0.0,
            m: 0.0,
        })
    }

    pub fn gs(&self) -> &DesignState {
        &self.gs
    }

    pub fn sk(&self) -> &SkeletalState {
        &self.sk
    }

    pub fn in_case1(&self) -> bool {
        self.in_case1
    }

    pub fn eps_n(&self) -> f64 {
        self.eps_n
    }

    pub fn threshold_t(&self) -> i64 {
        self.threshold_t
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn flags(&self) -> GoodEventFlags {
        self.flags
    }

    /// Rounds completed.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn martingales(&self) -> (f64, f64, f64) {
        (self.m_gs, self.m_tilde, self.m)
    }
}

fn inconsistency(step: usize, detail: impl Into<String>) -> GswError {
    GswError::InternalConsistency {
        step,
        detail: detail.into(),
    }
}

/// Advances both processes by one round.
///
/// Returns the trace row and, when asked, the normalized skeletal direction
/// `Bu_t/‖Bu_t‖`.
pub fn coupled_step<S: UniformSource, T: UniformSource>(
    state: &mut CoupledState,
    setup: &CovariateSetup,
    v: &[f64],
    main: &mut S,
    aux: &mut T,
    freeze_tol: f64,
    want_direction: bool,
) -> Result<(StepTrace, Option<Vec<f64>>)> {
    let n = setup.n();
    let t = state.t + 1;
    if t > n {
        return Err(GswError::Logic(format!("round {t} exceeds n = {n}")));
    }
    if state.sk.active.len() != n - t + 1 {
        return Err(inconsistency(t, "skeletal active set has the wrong size"));
    }

    let g1 = check_g1(&state.sk.z, &state.sk.active, state.eps_n);
    let g2 = g2_holds(setup, &state.sk.active, &state.full_gram, state.lambda_min);
    if !(g1 && g2) && state.flags.first_violation_t.is_none() {
        state.flags.first_violation_t = Some(t);
    }
    state.flags.g1 = g1;
    state.flags.g2 = g2;

    let case1 = state.in_case1 && (t as i64) <= state.threshold_t && g1 && g2;

    let (trace, direction) = if case1 {
        if state.gs.active() != state.sk.active.as_slice() {
            return Err(inconsistency(
                t,
                "gs and skeletal active sets differ in case 1",
            ));
        }
        if let Some(p) = state.gs.pivot() {
            if state.gs.is_active(p) {
                return Err(inconsistency(
                    t,
                    format!("previous pivot {p} is still active"),
                ));
            }
        }
        let rec = gsw_step(&mut state.gs, setup, main, freeze_tol)?;
        let p = rec.pivot;
        if !rec.fresh_pivot {
            return Err(inconsistency(t, "case-1 pivot was not freshly drawn"));
        }
        let s = rec.sample;
        if (s.delta_plus - 1.0).abs() > state.eps_n + DELTA_SLACK
            || (s.delta_minus - 1.0).abs() > state.eps_n + DELTA_SLACK
        {
            return Err(inconsistency(
                t,
                format!(
                    "step bounds ({}, {}) depart from 1 by more than ε_n = {}",
                    s.delta_plus, s.delta_minus, state.eps_n
                ),
            ));
        }
        if rec.frozen != [p] {
            return Err(inconsistency(
                t,
                format!(
                    "case-1 round froze {:?}, expected only the pivot {p}",
                    rec.frozen
                ),
            ));
        }
        let eta = eta_draw(s.u_draw);

        state.sk.z.copy_from_slice(state.gs.z());
        state.sk.remove(setup, p)?;
        if state.gs.active() != state.sk.active.as_slice() {
            return Err(inconsistency(
                t,
                "active sets diverged after a case-1 round",
            ));
        }

        let uv = rec.direction.dot(v);
        let norm = rec.direction.bu_norm_sq.sqrt();
        state.m_gs += s.delta * uv;
        state.m_tilde += s.delta * uv;
        state.m += eta * uv / norm;
        if state.m_gs != state.m_tilde {
            return Err(inconsistency(t, "M^gs and M̃ differ in case 1"));
        }
        let dir = want_direction.then(|| normalized_augmented(setup, &rec.direction));
        (
            StepTrace {
                t,
                case: Case::Coupled,
                pivot_gs: Some(p),
                pivot_sk: p,
                g1,
                g2,
                delta: s.delta,
                delta_gs: s.delta,
                step_bounds_gs: Some((s.delta_plus, s.delta_minus)),
                eta,
                m_gs: state.m_gs,
                m_tilde: state.m_tilde,
                m: state.m,
                qv_increment: uv * uv / rec.direction.bu_norm_sq,
            },
            dir,
        )
    } else {
        state.in_case1 = false;

        let (pivot_gs, delta_gs, bounds, u_t) = if state.gs.is_complete() {
            (None, 0.0, None, main.next_uniform())
        } else {
            let rec = gsw_step(&mut state.gs, setup, main, freeze_tol)?;
            state.m_gs += rec.sample.delta * rec.direction.dot(v);
            let s = rec.sample;
            (
                Some(rec.pivot),
                s.delta,
                Some((s.delta_plus, s.delta_minus)),
                s.u_draw,
            )
        };
        let eta = eta_draw(u_t);

        let pos = aux.next_uniform();
        let p = state.sk.active[crate::rng::uniform_to_index(pos, state.sk.active.len())];
        let dir = step_direction(setup, &state.sk.active, p, &state.sk.cache)?;
        for &i in &state.sk.active {
            state.sk.z[i] += eta * dir.u[i];
        }
        state.sk.remove(setup, p)?;

        let uv = dir.dot(v);
        state.m_tilde += eta * uv;
        state.m += eta * uv / dir.bu_norm_sq.sqrt();
        let normalized = want_direction.then(|| normalized_augmented(setup, &dir));
        (
            StepTrace {
                t,
                case: Case::Decoupled,
                pivot_gs,
                pivot_sk: p,
                g1,
                g2,
                delta: eta,
                delta_gs,
                step_bounds_gs: bounds,
                eta,
                m_gs: state.m_gs,
                m_tilde: state.m_tilde,
                m: state.m,
                qv_increment: uv * uv / dir.bu_norm_sq,
            },
            normalized,
        )
    };
    state.t = t;
    Ok((trace, direction))
}

fn normalized_augmented(setup: &CovariateSetup, dir: &crate::linalg::StepDirection) -> Vec<f64> {
    let mut bu = dir.augmented(setup);
    let norm = dot(&bu, &bu).sqrt();
    bu.iter_mut().for_each(|x| *x /= norm);
    bu
}

/// Complete coupled run.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledTrajectory {
    pub n: usize,
    pub eps_n: f64,
    pub kappa: f64,
    pub threshold_t: i64,
    /// True when the threshold is below 1, so no round can be coupled.
    pub coupling_vacuous: bool,
    pub case1_rounds: usize,
    pub first_violation_t: Option<usize>,
    pub steps: Vec<StepTrace>,
    pub z_gs: Vec<f64>,
    pub z_sk: Vec<f64>,
    pub m_gs: f64,
    pub m_tilde: f64,
    pub m: f64,
    /// `Σ_t ⟨Bu_t/‖Bu_t‖, (v;0)⟩²`; equals `‖v‖²` whenever `vᵀX = 0`.
    pub quadratic_variation: f64,
    pub v_norm_sq: f64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub directions: Option<Vec<Vec<f64>>>,
}

impl CoupledTrajectory {
    /// Skeletal pivots `(p_1, …, p_n)`.
    pub fn skeletal_order(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.pivot_sk).collect()
    }

    /// Writes one CSV row per round:
    /// `t,case,pivot_gs,pivot_sk,g1,g2,delta,eta,M_gs,M_tilde,M`.
    /// Units are numbered from 1 in input row order; an empty `pivot_gs` means
    /// the gs-process had already finished.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t", "case", "pivot_gs", "pivot_sk", "g1", "g2", "delta", "eta", "M_gs", "M_tilde", "M",
        ])?;
        let f = |x: f64| format!("{x:.16e}");
        let b = |x: bool| if x { "1".to_string() } else { "0".to_string() };
        for s in &self.steps {
            w.write_record([
                s.t.to_string(),
                s.case.number().to_string(),
                s.pivot_gs.map(|p| (p + 1).to_string()).unwrap_or_default(),
                (s.pivot_sk + 1).to_string(),
                b(s.g1),
                b(s.g2),
                f(s.delta),
                f(s.eta),
                f(s.m_gs),
                f(s.m_tilde),
                f(s.m),
            ])?;
        }
        w.flush()
    }
}

/// Checks `|x_jᵀv| ≤ 1e-8·‖v‖·‖x_j‖` for every covariate column.
pub fn orthogonality_warning(setup: &CovariateSetup, v: &[f64]) -> Option<String> {
    let x = setup.x();
    let v_norm = dot(v, v).sqrt();
    let worst = (0..x.ncols())
        .map(|j| {
            let col = x.column(j);
            let ip: f64 = col.iter().zip(v).map(|(a, b)| a * b).sum();
            let scale = 1e-8 * v_norm * col.norm();
            (j, ip.abs(), scale)
        })
        .filter(|&(_, ip, scale)| ip > scale)
        .max_by(|a, b| a.1.total_cmp(&b.1));
    worst.map(|(j, ip, _)| {
        format!(
            "v is not orthogonal to the covariates: |x_{}ᵀv| = {ip:e}; the quadratic-variation identity needs vᵀX = 0",
            j + 1
        )
    })
}

/// Runs both processes for `n` rounds with explicit streams.
pub fn run_coupled_with<S: UniformSource, T: UniformSource>(
    setup: &CovariateSetup,
    v: &[f64],
    main: &mut S,
    aux: &mut T,
    options: &CoupledOptions,
) -> Result<CoupledTrajectory> {
    let n = setup.n();
    if v.len() != n {
        return Err(GswError::Data(format!(
            "test vector has length {}, expected {n}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(GswError::Data("test vector has non-finite entries".into()));
    }
    let mut warnings = Vec::new();
    if let Some(w) = orthogonality_warning(setup, v) {
        log::warn!("{w}");
        warnings.push(w);
    }
    let mut state = CoupledState::new(setup, options.eps_override)?;
    let mut steps = Vec::with_capacity(n);
    let mut directions = options.record_directions.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        let (trace, dir) = coupled_step(
            &mut state,
            setup,
            v,
            main,
            aux,
            options.freeze_tol,
            options.record_directions,
        )?;
        if let (Some(all), Some(d)) = (directions.as_mut(), dir) {
            all.push(d);
        }
        steps.push(trace);
    }
    if !state.gs.is_complete() {
        return Err(inconsistency(n, "gs-process still active after n rounds"));
    }
    let case1_rounds = steps.iter().filter(|s| s.case == Case::Coupled).count();
    let quadratic_variation = steps.iter().map(|s| s.qv_increment).sum();
    Ok(CoupledTrajectory {
        n,
        eps_n: state.eps_n,
        kappa: state.kappa,
        threshold_t: state.threshold_t,
        coupling_vacuous: state.threshold_t < 1,
        case1_rounds,
        first_violation_t: state.flags.first_violation_t,
        steps,
        z_gs: state.gs.z().to_vec(),
        z_sk: state.sk.z.clone(),
        m_gs: state.m_gs,
        m_tilde: state.m_tilde,
        m: state.m,
        quadratic_variation,
        v_norm_sq: dot(v, v),
        warnings,
        directions,
    })
}

/// Coupled run for replication `replication` of `seed`.
pub fn run_coupled_replication(
    setup: &CovariateSetup,
    v: &[f64],
    seed: u64,
    replication: u64,
    options: &CoupledOptions,
) -> Result<CoupledTrajectory> {
    let mut main = RngStream::for_replication(seed, replication, Lane::Main);
    let mut aux = RngStream::for_replication(seed, replication, Lane::Auxiliary);
    run_coupled_with(setup, v, &mut main, &mut aux, options)
}

/// Coupled run on replication 0 of `seed`.
pub fn run_coupled(
    setup: &CovariateSetup,
    v: &[f64],
    seed: u64,
    options: &CoupledOptions,
) -> Result<CoupledTrajectory> {
    run_coupled_replication(setup, v, seed, 0, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::residual_projection;
    use crate::linalg::build_setup;
    use crate::sampler::run_gsw;
    use approx::assert_relative_eq;

    fn sphere_setup(n: usize, d: usize, seed: u64, phi: f64) -> CovariateSetup {
        let mut s = RngStream::for_data(seed, 0);
        let mut x = DMatrix::from_fn(n, d, |_, _| s.next_normal());
        for mut row in x.row_iter_mut() {
            let norm = row.norm();
            row /= norm;
        }
        build_setup(x, phi).unwrap()
    }

    fn residual_vector(setup: &CovariateSetup, seed: u64) -> Vec<f64> {
        let mut s = RngStream::for_data(seed, 1);
        let mu: Vec<f64> = (0..setup.n()).map(|_| s.next_normal()).collect();
        residual_projection(&mu, setup.x()).unwrap().v
    }

    #[test]
    fn epsilon_examples() {
        assert_relative_eq!(epsilon_schedule(1), 1.0 / 3.0);
        assert_relative_eq!(epsilon_schedule(20), 1.0 / 3.0);
        assert!((1.0 / (1.0 + 20f64.ln()).sqrt()) > 1.0 / 3.0);
        let e = epsilon_schedule(1_000_000);
        assert_relative_eq!(e, 1.0 / (1.0 + 6.0 * 10f64.ln()).sqrt(), epsilon = 1e-15);
        assert!((e - 0.260).abs() < 5e-4);
    }

    #[test]
    fn g1_examples() {
        assert!(check_g1(&[0.0, 0.0, 0.0], &[0, 1, 2], 1.0 / 3.0));
        assert!(check_g1(&[0.2, -0.1, 0.9], &[0, 1], 1.0 / 3.0));
        assert!(!check_g1(&[0.25, 0.0], &[0, 1], 0.25));
    }

    #[test]
    fn g2_examples() {
        let s = build_setup(DMatrix::from_element(4, 1, 1.0), 0.5).unwrap();
        assert!(check_g2(&s, &[0, 1, 2, 3], 1).unwrap());
        assert!(check_g2(&s, &[0, 1], 3).unwrap());
        assert!(check_g2(&s, &[0, 1], 2).is_err());

        let s = build_setup(DMatrix::zeros(3, 0), 0.5).unwrap();
        assert!(check_g2(&s, &[0], 3).unwrap());
    }

    #[test]
    fn g2_fails_for_unbalanced_subsets() {
        // rows (1,0),(1,0),(0,1),(0,1): keeping only the first two unbalances the gram
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let s = build_setup(x, 0.5).unwrap();
        assert!(!check_g2(&s, &[0, 1], 3).unwrap());
        assert!(check_g2(&s, &[0, 2], 3).unwrap());
    }

    #[test]
    fn eta_examples() {
        assert_eq!(eta_draw(0.5), 1.0);
        assert_eq!(eta_draw(0.2), 1.0);
        assert_eq!(eta_draw(0.9), -1.0);
    }

    #[test]
    fn first_round_is_coupled() {
        let s = sphere_setup(100, 2, 1, 0.5);
        let v = residual_vector(&s, 1);
        let traj = run_coupled(&s, &v, 5, &CoupledOptions::default()).unwrap();
        assert!(traj.threshold_t >= 1);
        assert_eq!(traj.steps[0].case, Case::Coupled);
        assert_eq!(traj.steps[0].pivot_gs, Some(traj.steps[0].pivot_sk));
    }

    #[test]
    fn case1_step_agrees_on_delta_and_eta_for_small_draws() {
        let s = sphere_setup(60, 2, 2, 0.5);
        let v = residual_vector(&s, 2);
        for seed in 0..20 {
            let traj = run_coupled(&s, &v, seed, &CoupledOptions::default()).unwrap();
            for st in traj.steps.iter().filter(|s| s.case == Case::Coupled) {
                // both indicators agree when U_t ≤ (1−ε)/2; we check the sign relation
                // that follows whenever they agree.
                if st.delta > 0.0 {
                    assert!(st.delta <= 1.0 + traj.eps_n);
                }
                assert_eq!(st.delta_gs, st.delta);
            }
        }
    }

    #[test]
    fn no_covariates_walk_is_fully_coupled() {
        let s = build_setup(DMatrix::zeros(12, 0), 0.5).unwrap();
        let v: Vec<f64> = (0..12).map(|i| i as f64 - 5.5).collect();
        let traj = run_coupled(&s, &v, 3, &CoupledOptions::default()).unwrap();
        assert_eq!(traj.case1_rounds, 12);
        assert_eq!(traj.kappa, 0.0);
        assert_eq!(traj.m_gs, traj.m);
        // M_n = Σ η_t v[p_t] over a permutation
        let m: f64 = traj.steps.iter().map(|s| s.eta * v[s.pivot_sk]).sum();
        assert_relative_eq!(traj.m, m, epsilon = 1e-12);
        let mut order = traj.skeletal_order();
        order.sort();
        assert_eq!(order, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn zero_test_vector_gives_zero_martingales() {
        let s = sphere_setup(30, 2, 4, 0.5);
        let traj = run_coupled(&s, &vec![0.0; 30], 1, &CoupledOptions::default()).unwrap();
        for st in &traj.steps {
            assert_eq!((st.m_gs, st.m_tilde, st.m), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn gs_half_matches_standalone_walk() {
        let s = sphere_setup(50, 3, 5, 0.4);
        let v = residual_vector(&s, 5);
        for seed in 0..5 {
            let traj = run_coupled(&s, &v, seed, &CoupledOptions::default()).unwrap();
            let z = run_gsw(&s, seed).unwrap();
            let zc: Vec<i8> = traj.z_gs.iter().map(|&x| x as i8).collect();
            assert_eq!(z, zc);
            let mgs: f64 = z.iter().zip(&v).map(|(&a, b)| a as f64 * b).sum();
            assert_relative_eq!(traj.m_gs, mgs, epsilon = 1e-9);
        }
    }

    #[test]
    fn quadratic_variation_identity_holds_per_trajectory() {
        let s = sphere_setup(40, 3, 6, 0.5);
        let v = residual_vector(&s, 6);
        let vv = dot(&v, &v);
        for seed in 0..10 {
            let traj = run_coupled(&s, &v, seed, &CoupledOptions::default()).unwrap();
            assert!(traj.warnings.is_empty());
            assert_relative_eq!(traj.quadratic_variation, vv, max_relative = 1e-8);
        }
    }

    #[test]
    fn skeletal_directions_are_orthonormal() {
        let s = sphere_setup(25, 2, 7, 0.5);
        let v = residual_vector(&s, 7);
        let opts = CoupledOptions {
            record_directions: true,
            ..CoupledOptions::default()
        };
        let traj = run_coupled(&s, &v, 9, &opts).unwrap();
        let dirs = traj.directions.unwrap();
        for (i, a) in dirs.iter().enumerate() {
            for (j, b) in dirs.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - target).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn nonorthogonal_vector_is_flagged() {
        let s = sphere_setup(20, 2, 8, 0.5);
        let v = vec![1.0; 20];
        let traj = run_coupled(&s, &v, 0, &CoupledOptions::default()).unwrap();
        assert_eq!(traj.warnings.len(), 1);
    }

    #[test]
    fn singular_covariates_make_coupling_vacuous() {
        let x = DMatrix::from_fn(10, 2, |i, _| i as f64 + 1.0);
        let s = build_setup(x, 0.5).unwrap();
        let traj = run_coupled(&s, &[0.0; 10], 0, &CoupledOptions::default()).unwrap();
        assert!(traj.kappa.is_infinite());
        assert!(traj.coupling_vacuous);
        assert_eq!(traj.case1_rounds, 0);
    }

    #[test]
    fn bad_epsilon_override_is_rejected() {
        let s = sphere_setup(5, 1, 9, 0.5);
        let opts = CoupledOptions {
            eps_override: Some(1.5),
            ..CoupledOptions::default()
        };
        assert!(matches!(
            run_coupled(&s, &[0.0; 5], 0, &opts),
            Err(GswError::Parameter(_))
        ));
    }

    #[test]
    fn trajectory_csv_has_one_row_per_round() {
        let s = sphere_setup(8, 1, 10, 0.5);
        let v = residual_vector(&s, 10);
        let traj = run_coupled(&s, &v, 0, &CoupledOptions::default()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "t,case,pivot_gs,pivot_sk,g1,g2,delta,eta,M_gs,M_tilde,M"
        );
        assert_eq!(lines.len(), 9);
    }
}
