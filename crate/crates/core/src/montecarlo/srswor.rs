//! Moments of sums drawn by simple random sampling without replacement.
//!
//! For centered `x ∈ ℝⁿ` and a uniformly random `a`-subset `S`, with
//! `W = Σ_{i∈S} x_i` and `(m)_k` the falling factorial:
//!
//! * `E W² = a(n−a)/(n)₂ · Σx_i²`
//! * `E W⁴ = 3(a)₂(n−a)₂/(n)₄ · (Σx_i²)² + a(n−a)/(n)₂ · (1 − 6(a−1)(n−a−1)/((n−2)(n−3))) · Σx_i⁴`

use serde::Serialize;

use crate::error::{GswError, Result};

/// Largest population the brute-force oracle will enumerate.
pub const BRUTEFORCE_LIMIT: usize = 12;

/// A population and a sample size. The population is centered on
/// construction; the subtracted mean is kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrsworCase {
    x: Vec<f64>,
    a: usize,
    removed_mean: f64,
}

impl SrsworCase {
    pub fn new(x: Vec<f64>, a: usize) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(GswError::Data("empty population".into()));
        }
        if a == 0 || a > n {
            return Err(GswError::Parameter(format!(
                "sample size must lie in 1..={n}, got {a}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GswError::Data("population has non-finite entries".into()));
        }
        let m = x.iter().sum::<f64>() / n as f64;
        let x = x.into_iter().map(|v| v - m).collect();
        Ok(Self {
            x,
            a,
            removed_mean: m,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn removed_mean(&self) -> f64 {
        self.removed_mean
    }
}

/// Second and (when `n ≥ 4`) fourth moments of `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SrsworMoments {
    pub m2: f64,
    pub m4: Option<f64>,
}

fn falling(m: usize, k: usize) -> f64 {
    (0..k).map(|j| m as f64 - j as f64).product()
}

/// Closed-form moments.
pub fn srswor_moments(case: &SrsworCase) -> SrsworMoments {
    let n = case.n();
    let a = case.a;
    let s2: f64 = case.x.iter().map(|v| v * v).sum();
    let s4: f64 = case.x.iter().map(|v| v.powi(4)).sum();
    if n < 2 {
        // a = n = 1: W = x₁ = 0 after centering
        return SrsworMoments { m2: 0.0, m4: None };
    }
    let c2 = (a * (n - a)) as f64 / falling(n, 2);
    let m2 = c2 * s2;
    let m4 = (n >= 4).then(|| {
        let lead = 3.0 * falling(a, 2) * falling(n - a, 2) / falling(n, 4) * s2 * s2;
        let corr = 1.0
            - 6.0 * (a as f64 - 1.0) * (n as f64 - a as f64 - 1.0)
                / ((n as f64 - 2.0) * (n as f64 - 3.0));
        lead + c2 * corr * s4
    });
    SrsworMoments { m2, m4 }
}

/// Exact moments by averaging over all `C(n, a)` subsets.
pub fn srswor_bruteforce(case: &SrsworCase) -> Result<SrsworMoments> {
    let n = case.n();
    if n > BRUTEFORCE_LIMIT {
        return Err(GswError::TooLarge {
            what: "population size",
            value: n,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let mut count = 0u64;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != case.a {
            continue;
        }
        let w: f64 = (0..n)
            .filter(|&i| mask >> i & 1 == 1)
            .map(|i| case.x[i])
            .sum();
        m2 += w * w;
        m4 += w.powi(4);
        count += 1;
    }
    let c = count as f64;
    Ok(SrsworMoments {
        m2: m2 / c,
        m4: (n >= 4).then_some(m4 / c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pair_second_moment() {
        let c = SrsworCase::new(vec![1.0, -1.0], 1).unwrap();
        assert_relative_eq!(srswor_moments(&c).m2, 1.0);
        assert!(srswor_moments(&c).m4.is_none());
        assert_relative_eq!(srswor_bruteforce(&c).unwrap().m2, 1.0);
    }

    #[test]
    fn four_point_fourth_moment() {
        let c = SrsworCase::new(vec![1.0, 1.0, -1.0, -1.0], 2).unwrap();
        assert_relative_eq!(srswor_moments(&c).m4.unwrap(), 16.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(
            srswor_bruteforce(&c).unwrap().m4.unwrap(),
            16.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn whole_population_has_zero_moments() {
        let c = SrsworCase::new(vec![3.0, -1.0, 0.5, 2.0, 7.0], 5).unwrap();
        let m = srswor_moments(&c);
        assert!(m.m2.abs() < 1e-12);
        assert!(m.m4.unwrap().abs() < 1e-12);
    }

    #[test]
    fn zeros_and_singletons() {
        let c = SrsworCase::new(vec![0.0; 6], 3).unwrap();
        assert_eq!(
            srswor_bruteforce(&c).unwrap(),
            SrsworMoments {
                m2: 0.0,
                m4: Some(0.0)
            }
        );

        let c = SrsworCase::new(vec![2.0, -1.0, 0.0, -1.0], 1).unwrap();
        let s2: f64 = c.x().iter().map(|v| v * v).sum();
        assert_relative_eq!(srswor_moments(&c).m2, s2 / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn input_is_centered() {
        let c = SrsworCase::new(vec![1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(c.removed_mean(), 2.0);
        assert_eq!(c.x(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn oracle_refuses_large_populations() {
        let c = SrsworCase::new(vec![0.0; 13], 2).unwrap();
        assert!(matches!(
            srswor_bruteforce(&c),
            Err(GswError::TooLarge { .. })
        ));
    }
}
