//! Gram–Schmidt Walk with randomized pivot ordering.
//!
//! Each round: keep the pivot if it is still active, otherwise draw a fresh one
//! uniformly from the active set; move `z` along the balancing direction
//! `u(p, A)` by a random signed step that keeps `z` inside `[−1,1]ⁿ` and has
//! mean zero; freeze every coordinate that reached `±1`.
//!
//! Randomness contract (per round): at most one pivot draw, consumed only when
//! a fresh pivot is needed, followed by exactly one step draw `U_t`. A pivot
//! draw `U` selects position `⌊U·|A|⌋` of the ascending active set.

use crate::error::{GswError, Result};
use crate::linalg::{step_direction, CovariateSetup, InverseCache, StepDirection};
use crate::rng::{uniform_to_index, Lane, RngStream, UniformSource};

/// `|z_i| ≥ 1 − FREEZE_TOL` counts as having reached the face and is snapped to `±1`.
pub const FREEZE_TOL: f64 = 1e-9;

/// Fractional assignment plus the bookkeeping the walk needs between rounds.
#[derive(Debug, Clone)]
pub struct DesignState {
    z: Vec<f64>,
    active: Vec<usize>,
    pivot: Option<usize>,
    t: usize,
    cache: InverseCache,
}

impl DesignState {
    /// `z = 0`, every unit active, no pivot.
    pub fn new(setup: &CovariateSetup) -> Result<Self> {
        let n = setup.n();
        let active: Vec<usize> = (0..n).collect();
        let cache = InverseCache::for_active(setup, &active)?;
        Ok(Self {
            z: vec![0.0; n],
            active,
            pivot: None,
            t: 0,
            cache,
        })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Ascending indices of coordinates still strictly inside `(−1, 1)`.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn pivot(&self) -> Option<usize> {
        self.pivot
    }

    /// Rounds completed so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn cache(&self) -> &InverseCache {
        &self.cache
    }

    pub fn is_complete(&self) -> bool {
        self.active.is_empty()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active.binary_search(&i).is_ok()
    }

    /// Final `±1` assignment; `None` while coordinates are still active.
    pub fn assignment(&self) -> Option<Vec<i8>> {
        if !self.is_complete() {
            return None;
        }
        Some(
            self.z
                .iter()
                .map(|&v| if v > 0.0 { 1 } else { -1 })
                .collect(),
        )
    }

    /// Moves `z` by `delta·u`, snaps coordinates within `freeze_tol` of a face,
    /// removes them from the active set and downdates the cache.
    ///
    /// Returns the frozen indices in ascending order.
    pub fn apply_step(
        &mut self,
        setup: &CovariateSetup,
        dir: &StepDirection,
        delta: f64,
        freeze_tol: f64,
    ) -> Result<Vec<usize>> {
        if !self.is_active(dir.pivot) {
            return Err(GswError::Logic(format!(
                "step pivot {} is not active",
                dir.pivot
            )));
        }
        let mut frozen = Vec::new();
        for &i in &self.active {
            let ui = dir.u[i];
            if ui != 0.0 {
                self.z[i] += delta * ui;
            }
            if self.z[i].abs() >= 1.0 - freeze_tol {
                self.z[i] = self.z[i].signum();
                frozen.push(i);
            }
        }
        for &f in &frozen {
            let pos = self
                .active
                .binary_search(&f)
                .expect("frozen index was active");
            self.active.remove(pos);
            self.cache.downdate(setup, f, &self.active)?;
        }
        self.pivot = Some(dir.pivot);
        self.t += 1;
        Ok(frozen)
    }
}

/// Step sizes of one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub delta: f64,
    pub u_draw: f64,
}

/// Everything observable about one completed round.
#[derive(Debug, Clone)]
pub struct GswStepRecord {
    pub pivot: usize,
    pub fresh_pivot: bool,
    pub direction: StepDirection,
    pub sample: StepSample,
    pub frozen: Vec<usize>,
}

/// Keeps the previous pivot when it is still active, otherwise draws a fresh
/// one (one uniform consumed).
pub fn select_pivot<S: UniformSource>(state: &DesignState, draws: &mut S) -> Result<usize> {
    Ok(select_pivot_traced(state, draws)?.0)
}

fn select_pivot_traced<S: UniformSource>(
    state: &DesignState,
    draws: &mut S,
) -> Result<(usize, bool)> {
    if state.active.is_empty() {
        return Err(GswError::Logic(
            "cannot select a pivot from an empty active set".into(),
        ));
    }
    if let Some(p) = state.pivot {
        if state.is_active(p) {
            return Ok((p, false));
        }
    }
    let pos = uniform_to_index(draws.next_uniform(), state.active.len());
    Ok((state.active[pos], true))
}

/// Largest steps `δ⁺, δ⁻ > 0` with `z + δ⁺u` and `z − δ⁻u` still in the box.
pub fn feasible_interval(z: &[f64], dir: &StepDirection) -> Result<(f64, f64)> {
    let zp = z[dir.pivot];
    if !(zp.abs() < 1.0) {
        return Err(GswError::Logic(format!(
            "pivot coordinate {} is already at a face (z = {zp})",
            dir.pivot
        )));
    }
    let mut plus = f64::INFINITY;
    let mut minus = f64::INFINITY;
    for (&zi, &ui) in z.iter().zip(&dir.u) {
        if ui > 0.0 {
            plus = plus.min((1.0 - zi) / ui);
            minus = minus.min((1.0 + zi) / ui);
        } else if ui < 0.0 {
            plus = plus.min((1.0 + zi) / -ui);
            minus = minus.min((1.0 - zi) / -ui);
        }
    }
    if !(plus > 0.0 && minus > 0.0) {
        return Err(GswError::Logic(format!(
            "degenerate feasible interval ({plus}, {minus}): an active coordinate sits on a face"
        )));
    }
    Ok((plus, minus))
}

/// `+δ⁺` when `u_draw ≤ δ⁻/(δ⁺+δ⁻)`, else `−δ⁻`; the result has mean zero.
pub fn sample_step(delta_plus: f64, delta_minus: f64, u_draw: f64) -> Result<f64> {
    if !(delta_plus > 0.0 && delta_minus > 0.0) {
        return Err(GswError::Logic(format!(
            "step bounds must be positive, got ({delta_plus}, {delta_minus})"
        )));
    }
    let threshold = delta_minus / (delta_plus + delta_minus);
    Ok(if u_draw <= threshold {
        delta_plus
    } else {
        -delta_minus
    })
}

/// One full round of the walk.
pub fn gsw_step<S: UniformSource>(
    state: &mut DesignState,
    setup: &CovariateSetup,
    draws: &mut S,
    freeze_tol: f64,
) -> Result<GswStepRecord> {
    let (pivot, fresh_pivot) = select_pivot_traced(state, draws)?;
    let u_draw = draws.next_uniform();
    let direction = step_direction(setup, &state.active, pivot, &state.cache)?;
    let (delta_plus, delta_minus) = feasible_interval(&state.z, &direction)?;
    let delta = sample_step(delta_plus, delta_minus, u_draw)?;
    let frozen = state.apply_step(setup, &direction, delta, freeze_tol)?;
    Ok(GswStepRecord {
        pivot,
        fresh_pivot,
        direction,
        sample: StepSample {
            delta_plus,
            delta_minus,
            delta,
            u_draw,
        },
        frozen,
    })
}

/// Runs the walk to completion from an arbitrary draw source.
pub fn run_gsw_with<S: UniformSource>(
    setup: &CovariateSetup,
    draws: &mut S,
    freeze_tol: f64,
) -> Result<Vec<i8>> {
    let mut state = DesignState::new(setup)?;
    while !state.is_complete() {
        if state.t() >= setup.n() {
            return Err(GswError::Logic(
                "walk did not terminate within n rounds".into(),
            ));
        }
        gsw_step(&mut state, setup, draws, freeze_tol)?;
    }
    Ok(state.assignment().expect("complete walk has an assignment"))
}

/// Runs the walk on the main lane of replication 0 of `seed`.
pub fn run_gsw(setup: &CovariateSetup, seed: u64) -> Result<Vec<i8>> {
    let mut stream = RngStream::for_replication(seed, 0, Lane::Main);
    run_gsw_with(setup, &mut stream, FREEZE_TOL)
}

/// Independent Rademacher assignment: `+1` iff the draw is below `1/2`.
pub fn run_iid<S: UniformSource>(n: usize, draws: &mut S) -> Vec<i8> {
    (0..n)
        .map(|_| if draws.next_uniform() < 0.5 { 1 } else { -1 })
        .collect()
}
