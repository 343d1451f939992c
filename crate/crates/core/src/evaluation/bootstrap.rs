//! Percentile bootstrap over sample means.

use crate::error::{Error, Result};
use crate::rng::{uniform_index, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            lower: 0.25,
            upper: 0.75,
        }
    }
}

/// Quantile of sorted data with linear interpolation between order
/// statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(data: &[f64], q: f64) -> f64 {
    let mut s = data.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, q)
}

pub fn mean(data: &[f64]) -> f64 {
    data.iter().sum::<f64>() / data.len() as f64
}

/// Interval of the resampled means between the configured quantiles.
pub fn bootstrap_ci(samples: &[f64], cfg: &BootstrapConfig, rng: &mut Rng) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::input("bootstrap needs at least 2 samples"));
    }
    if !(cfg.lower <= cfg.upper) || cfg.resamples == 0 {
        return Err(Error::Config("bootstrap quantiles must be ordered and resamples positive".into()));
    }
    let n = samples.len();
    let mut means: Vec<f64> = (0..cfg.resamples)
        .map(|_| (0..n).map(|_| samples[uniform_index(rng, n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&means, cfg.lower), quantile_sorted(&means, cfg.upper)))
}
