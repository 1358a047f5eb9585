use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A factorized log-prior over one block of the parameter vector.
///
/// Outside the support `log_density` returns negative infinity; gradient and
/// Hessian are only meaningful where the density is finite.
pub trait Prior: Send + Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
    fn hess_diag(&self, x: &[f64]) -> Vec<f64>;
}

/// Independent normal prior, one `(mean, variance)` pair per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl GaussianPrior {
    /// # Panics
    /// If the vectors differ in length or a variance is not positive.
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Self {
        assert_eq!(mean.len(), variance.len(), "mean/variance length mismatch");
        assert!(variance.iter().all(|v| *v > 0.0), "prior variances must be positive");
        Self { mean, variance }
    }

    pub fn iid(dim: usize, mean: f64, variance: f64) -> Self {
        Self::new(vec![mean; dim], vec![variance; dim])
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }
}

impl Prior for GaussianPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.variance)
            .map(|((x, m), v)| -0.5 * (LN_2PI + v.ln() + (x - m).powi(2) / v))
            .sum()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.variance)
            .map(|((x, m), v)| -(x - m) / v)
            .collect()
    }

    fn hess_diag(&self, _x: &[f64]) -> Vec<f64> {
        self.variance.iter().map(|v| -1.0 / v).collect()
    }
}

/// Uniform density on the box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBoxPrior {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl UniformBoxPrior {
    /// # Panics
    /// Unless `lo < hi` componentwise.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "bound length mismatch");
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b), "need lo < hi");
        Self { lo, hi }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn lower(&self) -> &[f64] {
        &self.lo
    }

    pub fn upper(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lo).zip(&self.hi).all(|((x, a), b)| *x >= *a && *x <= *b)
    }
}

impl Prior for UniformBoxPrior {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            -self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a).ln()).sum::<f64>()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn hess_diag(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
}

/// Improper constant prior (log density 0). With `dim == 0` it stands in for
/// an absent parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatPrior {
    pub dim: usize,
}

impl Prior for FlatPrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn hess_diag(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
}
