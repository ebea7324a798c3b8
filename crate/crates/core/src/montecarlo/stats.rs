//! Summary statistics with a fixed evaluation order, so results do not depend
//! on how replications were scheduled.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::error::{GswError, Result};

/// Pairwise (cascade) summation over the slice in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance; `None` with fewer than two samples.
pub fn variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    Some(pairwise_sum(&sq) / (xs.len() - 1) as f64)
}

/// Standard error of the unbiased sample variance, from the sample fourth
/// central moment: `√((m₄ − (R−3)/(R−1)·s⁴)/R)`.
pub fn variance_standard_error(xs: &[f64]) -> Option<f64> {
    let r = xs.len();
    if r < 4 {
        return None;
    }
    let m = mean(xs);
    let s2 = variance(xs)?;
    let q: Vec<f64> = xs.iter().map(|x| (x - m).powi(4)).collect();
    let m4 = pairwise_sum(&q) / r as f64;
    let rf = r as f64;
    let var = (m4 - (rf - 3.0) / (rf - 1.0) * s2 * s2) / rf;
    Some(var.max(0.0).sqrt())
}

/// `Φ(x) = erfc(−x/√2)/2` with statrs' `erfc`; absolute error below `1e-10`
/// on the whole real line.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov distance of the empirical distribution of `samples` to
/// the standard normal: `max_i max(i/m − Φ(x_(i)), Φ(x_(i)) − (i−1)/m)`.
pub fn ks_distance(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(GswError::Data("KS distance of an empty sample".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(GswError::Data(
            "KS distance of a sample containing NaN".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            ((i + 1) as f64 / m - f).max(f - i as f64 / m)
        })
        .fold(0.0, f64::max))
}

/// `√(p(1−p)/reps)`.
pub fn binomial_standard_error(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

/// Pearson goodness-of-fit of observed counts against cell probabilities.
/// Returns `(statistic, degrees of freedom, p-value)`; cells with zero
/// expected probability must have zero counts and are skipped.
pub fn chi_square_test(counts: &[u64], probs: &[f64]) -> Result<(f64, usize, f64)> {
    if counts.len() != probs.len() {
        return Err(GswError::Data(
            "counts and probabilities differ in length".into(),
        ));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(GswError::Data("no observations".into()));
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            if c > 0 {
                return Err(GswError::Data(
                    "observation in a cell of probability zero".into(),
                ));
            }
            continue;
        }
        let e = p * total as f64;
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    let df = cells.saturating_sub(1);
    if df == 0 {
        return Ok((stat, 0, 1.0));
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| GswError::Numeric(e.to_string()))?;
    Ok((stat, df, 1.0 - dist.cdf(stat)))
}

/// Equal-width bins over `[min, max]`: `(lower, upper, count)`.
pub fn histogram(samples: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if samples.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![(lo, hi, samples.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c))
        .collect()
}
