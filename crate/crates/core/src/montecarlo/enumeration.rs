//! Exact law of the walk's output for tiny instances, by expanding every pivot
//! choice and step sign with its exact probability.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{GswError, Result};
use crate::estimator::{ht_estimate, OutcomeData};
use crate::linalg::CovariateSetup;
use crate::rng::ScriptedDraws;
use crate::sampler::{gsw_step, DesignState, FREEZE_TOL};

/// Largest `n` the exhaustive expansion accepts.
pub const ENUMERATION_LIMIT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub z: Vec<i8>,
    pub prob: f64,
}

/// Exact distribution of `z` and, when both outcome columns are known, the
/// exact mean and variance of `τ̂`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactLaw {
    /// Atoms in lexicographic order of `z`.
    pub atoms: Vec<Atom>,
    pub total_prob: f64,
    pub mean_z: Vec<f64>,
    /// `P[z_i = +1]` for each unit.
    pub marginals: Vec<f64>,
    pub mean_tau_hat: Option<f64>,
    pub var_tau_hat: Option<f64>,
}

impl ExactLaw {
    pub fn prob_of(&self, z: &[i8]) -> f64 {
        self.atoms.iter().find(|a| a.z == z).map_or(0.0, |a| a.prob)
    }
}

fn expand(
    state: DesignState,
    setup: &CovariateSetup,
    prob: f64,
    out: &mut BTreeMap<Vec<i8>, f64>,
) -> Result<()> {
    if let Some(z) = state.assignment() {
        *out.entry(z).or_insert(0.0) += prob;
        return Ok(());
    }
    let active = state.active();
    let keep = state.pivot().filter(|&p| state.is_active(p));
    // each entry: (pivot draw to script, probability of that pivot)
    let choices: Vec<(Option<f64>, f64)> = match keep {
        Some(_) => vec![(None, 1.0)],
        None => {
            let m = active.len() as f64;
            (0..active.len())
                .map(|pos| (Some((pos as f64 + 0.5) / m), 1.0 / m))
                .collect()
        }
    };
    for (pivot_draw, p_pivot) in choices {
        // step draw 0 always takes +δ⁺, draw 1 always takes −δ⁻
        for step_draw in [0.0, 1.0] {
            let mut script: Vec<f64> = pivot_draw.into_iter().collect();
            script.push(step_draw);
            let mut draws = ScriptedDraws::new(script);
            let mut next = state.clone();
            let rec = gsw_step(&mut next, setup, &mut draws, FREEZE_TOL)?;
            let (dp, dm) = (rec.sample.delta_plus, rec.sample.delta_minus);
            let p_step = if step_draw == 0.0 {
                dm / (dp + dm)
            } else {
                dp / (dp + dm)
            };
            expand(next, setup, prob * p_pivot * p_step, out)?;
        }
    }
    Ok(())
}

/// Exhaustive law of the walk for `n ≤ 4`.
pub fn exact_enumeration(
    setup: &CovariateSetup,
    outcomes: Option<&OutcomeData>,
) -> Result<ExactLaw> {
    let n = setup.n();
    if n > ENUMERATION_LIMIT {
        return Err(GswError::TooLarge {
            what: "number of units",
            value: n,
            limit: ENUMERATION_LIMIT,
        });
    }
    if let Some(o) = outcomes {
        if o.n() != n {
            return Err(GswError::Data(format!(
                "outcomes have {} rows, covariates {n}",
                o.n()
            )));
        }
    }
    let mut table = BTreeMap::new();
    expand(DesignState::new(setup)?, setup, 1.0, &mut table)?;
    let atoms: Vec<Atom> = table
        .into_iter()
        .map(|(z, prob)| Atom { z, prob })
        .collect();
    let total_prob = atoms.iter().map(|a| a.prob).sum();
    let mut mean_z = vec![0.0; n];
    let mut marginals = vec![0.0; n];
    for a in &atoms {
        for i in 0..n {
            mean_z[i] += a.prob * f64::from(a.z[i]);
            if a.z[i] == 1 {
                marginals[i] += a.prob;
            }
        }
    }
    let (mean_tau_hat, var_tau_hat) = match outcomes.and_then(|o| o.a().zip(o.b())) {
        Some((a, b)) => {
            let vals: Vec<(f64, f64)> = atoms
                .iter()
                .map(|at| Ok((at.prob, ht_estimate(&at.z, a, b)?)))
                .collect::<Result<_>>()?;
            let m: f64 = vals.iter().map(|(p, t)| p * t).sum();
            let v: f64 = vals.iter().map(|(p, t)| p * (t - m) * (t - m)).sum();
            (Some(m), Some(v))
        }
        None => (None, None),
    };
    Ok(ExactLaw {
        atoms,
        total_prob,
        mean_z,
        marginals,
        mean_tau_hat,
        var_tau_hat,
    })
}
