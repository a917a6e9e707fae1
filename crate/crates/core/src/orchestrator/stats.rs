use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::trainer::accuracy;

/// Point accuracy with a percentile bootstrap interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ConfidenceInterval {
    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }
}

/// Linear-interpolated percentile `q` in `[0, 100]` of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    match sorted.get(i + 1) {
        Some(&next) if frac > 0.0 => sorted[i] + frac * (next - sorted[i]),
        _ => sorted[i],
    }
}

/// Resample the test set with replacement and take percentiles of the accuracies.
pub fn bootstrap_ci(
    predictions: &[usize],
    labels: &[usize],
    resamples: usize,
    percentiles: [f64; 2],
    seed: u64,
) -> Result<ConfidenceInterval> {
    let point = accuracy(predictions, labels)?;
    if resamples == 0 {
        return Err(Error::Contract("bootstrap needs at least one resample".into()));
    }
    if !(0.0..=100.0).contains(&percentiles[0]) || !(percentiles[0]..=100.0).contains(&percentiles[1]) {
        return Err(Error::Contract(format!("invalid percentiles {percentiles:?}")));
    }
    let hits: Vec<bool> = predictions.iter().zip(labels).map(|(p, l)| p == l).collect();
    let n = hits.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accs: Vec<f64> = (0..resamples)
        .map(|_| (0..n).filter(|_| hits[rng.random_range(0..n)]).count() as f64 / n as f64)
        .collect();
    accs.sort_by(f64::total_cmp);
    Ok(ConfidenceInterval {
        point,
        lo: percentile(&accs, percentiles[0]),
        hi: percentile(&accs, percentiles[1]),
    })
}

/// Two-sided two-proportion z-test; returns `(z, p)`.
pub fn two_proportion_z_test(p1: f64, n1: usize, p2: f64, n2: usize) -> Result<(f64, f64)> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::Contract("z-test needs nonempty samples".into()));
    }
    let (a, b) = (n1 as f64, n2 as f64);
    let pooled = (p1 * a + p2 * b) / (a + b);
    let se = (pooled * (1.0 - pooled) * (1.0 / a + 1.0 / b)).sqrt();
    if se == 0.0 || p1 == p2 {
        return Ok((0.0, 1.0));
    }
    let z = (p2 - p1) / se;
    let normal = Normal::standard();
    Ok((z, 2.0 * (1.0 - normal.cdf(z.abs()))))
}
