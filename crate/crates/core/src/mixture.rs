//! Diagonal-covariance Gaussian mixtures and the Jensen lower bound on their entropy.
//!
//! A [`MixtureState`] holds `L` components over a `d`-dimensional parameter
//! vector. Covariances are diagonal and stored as variances. The entropy bound
//! replaces `-E_q[log q]` by `-sum_i w_i log q_i`, where `q_i` is the mixture of
//! pairwise convolutions `sum_j w_j N(mu_i | mu_j, S_i + S_j)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tolerance on `|sum(w) - 1|` accepted by [`MixtureState::new`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Box on every variance entry of a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for VarianceBounds {
    fn default() -> Self {
        Self { lo: 1e-6, hi: 1e2 }
    }
}

impl VarianceBounds {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Weights, means and diagonal variances of an `L`-component Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureDoc", into = "MixtureDoc")]
pub struct MixtureState {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

/// On-disk layout: `{L, d, weights, means, variances}` with `L x d` nested arrays.
#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct MixtureDoc {
    L: usize,
    d: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl TryFrom<MixtureDoc> for MixtureState {
    type Error = Error;

    fn try_from(doc: MixtureDoc) -> Result<Self> {
        let state = MixtureState::new(doc.weights, doc.means, doc.variances)?;
        check_dim(doc.L, state.components())?;
        check_dim(doc.d, state.dim())?;
        Ok(state)
    }
}

impl From<MixtureState> for MixtureDoc {
    fn from(s: MixtureState) -> Self {
        MixtureDoc {
            L: s.components(),
            d: s.dim(),
            weights: s.weights,
            means: s.means,
            variances: s.variances,
        }
    }
}

impl MixtureState {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let l = weights.len();
        if l == 0 {
            return Err(Error::InvalidState("mixture needs at least one component".into()));
        }
        check_dim(l, means.len())?;
        check_dim(l, variances.len())?;
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidState("parameter dimension must be positive".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            check_dim(d, m.len())?;
            check_dim(d, v.len())?;
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidState(format!("weights must be non-negative: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidState(format!("weights sum to {total}, not 1")));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::InvalidState("means must be finite".into()));
        }
        if variances.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidState("variances must be positive and finite".into()));
        }
        Ok(Self { weights, means, variances })
    }

    /// Equal weights and unit variances around the given means.
    pub fn isotropic(means: Vec<Vec<f64>>) -> Result<Self> {
        let l = means.len();
        let d = means.first().map_or(0, Vec::len);
        Self::new(vec![1.0 / l as f64; l], means, vec![vec![1.0; d]; l])
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(weights, self.means.clone(), self.variances.clone())
    }

    pub fn with_means(&self, means: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.weights.clone(), means, self.variances.clone())
    }

    pub fn with_variances(&self, variances: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.weights.clone(), self.means.clone(), variances)
    }

    /// Means flattened row-major (component-major).
    pub fn flat_means(&self) -> Vec<f64> {
        self.means.concat()
    }

    pub fn flat_variances(&self) -> Vec<f64> {
        self.variances.concat()
    }

    pub fn check_variance_bounds(&self, bounds: &VarianceBounds) -> Result<()> {
        match self.variances.iter().flatten().find(|v| !bounds.contains(**v)) {
            Some(v) => Err(Error::InvalidState(format!(
                "variance {v} outside [{}, {}]",
                bounds.lo, bounds.hi
            ))),
            None => Ok(()),
        }
    }

    /// `log q(omega)`, evaluated with log-sum-exp over components.
    pub fn logpdf(&self, omega: &[f64]) -> Result<f64> {
        check_dim(self.dim(), omega.len())?;
        let terms: Vec<f64> = (0..self.components())
            .map(|i| self.weights[i].ln() + log_normal_diag(omega, &self.means[i], &self.variances[i]))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Overall mean `sum_i w_i mu_i`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, x) in out.iter_mut().zip(m) {
                *o += w * x;
            }
        }
        out
    }

    /// Per-coordinate marginal variance of the mixture.
    pub fn marginal_variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut out = vec![0.0; self.dim()];
        for i in 0..self.components() {
            for j in 0..self.dim() {
                let dm = self.means[i][j] - mean[j];
                out[j] += self.weights[i] * (self.variances[i][j] + dm * dm);
            }
        }
        out
    }

    /// Draws one point from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }

    /// Jensen lower bound `H0[q] = -sum_i w_i log q_i` on the mixture entropy.
    pub fn entropy_bound(&self) -> f64 {
        let pair = PairTerms::new(self);
        -self
            .weights
            .iter()
            .zip(&pair.log_q)
            .map(|(w, lq)| if *w == 0.0 { 0.0 } else { w * lq })
            .sum::<f64>()
    }

    /// Partial derivatives of [`entropy_bound`](Self::entropy_bound) with respect to
    /// every weight, mean entry and variance entry. Weights are treated as free
    /// coordinates (no simplex projection).
    pub fn entropy_bound_grads(&self) -> MixtureGradient {
        let l = self.components();
        let d = self.dim();
        let pair = PairTerms::new(self);
        let lw: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();

        let mut g = MixtureGradient::zeros(l, d);
        for i in 0..l {
            let mut dw = -pair.log_q[i];
            for r in 0..l {
                // w_r N_ri / q_r and w_r N_ri / q_i
                let by_r = (lw[r] + pair.log_n[r][i] - pair.log_q[r]).exp();
                let by_i = (lw[r] + pair.log_n[r][i] - pair.log_q[i]).exp();
                dw -= by_r;
                let both = by_r + by_i;
                if both == 0.0 {
                    continue;
                }
                for j in 0..d {
                    let s = self.variances[r][j] + self.variances[i][j];
                    let a = (self.means[r][j] - self.means[i][j]) / s;
                    g.means[i][j] -= self.weights[i] * a * both;
                    g.variances[i][j] += 0.5 * self.weights[i] * (1.0 / s - a * a) * both;
                }
            }
            g.weights[i] = dw;
        }
        g
    }
}

/// Gradient with the same layout as a [`MixtureState`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureGradient {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl MixtureGradient {
    pub fn zeros(l: usize, d: usize) -> Self {
        Self {
            weights: vec![0.0; l],
            means: vec![vec![0.0; d]; l],
            variances: vec![vec![0.0; d]; l],
        }
    }
}

/// `log N_ri` for every pair and `log q_i`.
struct PairTerms {
    log_n: Vec<Vec<f64>>,
    log_q: Vec<f64>,
}

impl PairTerms {
    fn new(q: &MixtureState) -> Self {
        let l = q.components();
        let mut log_n = vec![vec![0.0; l]; l];
        for r in 0..l {
            for i in r..l {
                let v = log_normal_diag_summed(&q.means[r], &q.means[i], &q.variances[r], &q.variances[i]);
                log_n[r][i] = v;
                log_n[i][r] = v;
            }
        }
        let log_q = (0..l)
            .map(|i| {
                let terms: Vec<f64> = (0..l).map(|r| q.weights[r].ln() + log_n[r][i]).collect();
                log_sum_exp(&terms)
            })
            .collect();
        Self { log_n, log_q }
    }
}

fn log_normal_diag_summed(x: &[f64], m: &[f64], v1: &[f64], v2: &[f64]) -> f64 {
    x.iter()
        .zip(m)
        .zip(v1.iter().zip(v2))
        .map(|((x, m), (a, b))| {
            let s = a + b;
            let z = x - m;
            -0.5 * (LN_2PI + s.ln() + z * z / s)
        })
        .sum()
}

/// `log N(x | m, diag(v))`.
pub fn log_normal_diag(x: &[f64], m: &[f64], v: &[f64]) -> f64 {
    x.iter()
        .zip(m)
        .zip(v)
        .map(|((x, m), v)| {
            let z = x - m;
            -0.5 * (LN_2PI + v.ln() + z * z / v)
        })
        .sum()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Entropy of `N(m, diag(v))`.
pub fn gaussian_entropy(variances: &[f64]) -> f64 {
    variances
        .iter()
        .map(|v| 0.5 * (2.0 * PI * std::f64::consts::E * v).ln())
        .sum()
}
