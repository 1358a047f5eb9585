//! Per-coordinate posterior summaries from a mixture state or a chain.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::mixture::MixtureState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    /// 2.5% quantile
    pub lower: f64,
    /// 97.5% quantile
    pub upper: f64,
}

/// Median and central 95% interval of a transformed coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

impl Marginal {
    /// Push the quantiles through a monotone increasing map.
    pub fn map_quantiles(&self, f: impl Fn(f64) -> f64) -> Interval {
        Interval {
            median: f(self.median),
            lower: f(self.lower),
            upper: f(self.upper),
        }
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// CDF of coordinate `j` of the mixture at `x`.
pub fn mixture_cdf(q: &MixtureState, j: usize, x: f64) -> f64 {
    q.weights()
        .iter()
        .zip(q.means())
        .zip(q.variances())
        .map(|((w, m), v)| w * std_normal_cdf((x - m[j]) / v[j].sqrt()))
        .sum()
}

/// Density of coordinate `j` of the mixture at `x`.
pub fn mixture_marginal_pdf(q: &MixtureState, j: usize, x: f64) -> f64 {
    q.weights()
        .iter()
        .zip(q.means())
        .zip(q.variances())
        .map(|((w, m), v)| {
            let z = (x - m[j]) / v[j].sqrt();
            w * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI * v[j]).sqrt()
        })
        .sum()
}

/// Quantile of coordinate `j` by bisection on the mixture CDF.
pub fn mixture_quantile(q: &MixtureState, j: usize, p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Config(format!("quantile level {p} outside (0, 1)")));
    }
    if j >= q.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), found: j + 1 });
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (m, v) in q.means().iter().zip(q.variances()) {
        let s = v[j].sqrt();
        lo = lo.min(m[j] - 40.0 * s);
        hi = hi.max(m[j] + 40.0 * s);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(q, j, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * mid.abs().max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn mixture_marginals(q: &MixtureState) -> Result<Vec<Marginal>> {
    let mean = q.mean();
    let var = q.marginal_variance();
    (0..q.dim())
        .map(|j| {
            Ok(Marginal {
                mean: mean[j],
                std: var[j].sqrt(),
                median: mixture_quantile(q, j, 0.5)?,
                lower: mixture_quantile(q, j, 0.025)?,
                upper: mixture_quantile(q, j, 0.975)?,
            })
        })
        .collect()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = p * (n - 1) as f64;
    let i = h.floor() as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

pub fn sample_marginals(samples: &[Vec<f64>]) -> Vec<Marginal> {
    let Some(first) = samples.first() else {
        return Vec::new();
    };
    let n = samples.len() as f64;
    (0..first.len())
        .map(|j| {
            let mut col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            col.sort_by(|a, b| a.total_cmp(b));
            Marginal {
                mean,
                std: var.sqrt(),
                median: empirical_quantile(&col, 0.5),
                lower: empirical_quantile(&col, 0.025),
                upper: empirical_quantile(&col, 0.975),
            }
        })
        .collect()
}

/// `(x, density)` pairs for coordinate `j` on `points` evenly spaced nodes
/// covering every component's mean +- `width` standard deviations.
pub fn marginal_density_curve(q: &MixtureState, j: usize, points: usize, width: f64) -> Vec<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (m, v) in q.means().iter().zip(q.variances()) {
        let s = v[j].sqrt();
        lo = lo.min(m[j] - width * s);
        hi = hi.max(m[j] + width * s);
    }
    let points = points.max(2);
    (0..points)
        .map(|k| {
            let x = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            (x, mixture_marginal_pdf(q, j, x))
        })
        .collect()
}
