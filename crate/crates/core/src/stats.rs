//! Sample summaries and Kolmogorov-Smirnov utilities.

use serde::{Deserialize, Serialize};

use crate::sum::compensated_sum;

/// Mean, standard deviation and the 1/25/50/75/99% quantiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub mean: f64,
    pub sd: f64,
    pub q01: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q99: f64,
}

impl QuantileSummary {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        let (mean, sd) = mean_sd(&samples);
        Self {
            mean,
            sd,
            q01: quantile_sorted(&samples, 0.01),
            q25: quantile_sorted(&samples, 0.25),
            q50: quantile_sorted(&samples, 0.50),
            q75: quantile_sorted(&samples, 0.75),
            q99: quantile_sorted(&samples, 0.99),
        }
    }
}

/// Sample mean and (n - 1)-normalized standard deviation.
pub fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(samples.iter().copied()) / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(samples.iter().map(|x| (x - mean) * (x - mean)));
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Linear-interpolation quantile of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One-sample KS statistic of `samples` against a continuous `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS p-value with Stephens' small-sample adjustment.
pub fn kolmogorov_p_value(statistic: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * statistic;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
