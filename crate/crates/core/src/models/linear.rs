//! Linear forward model `f(xi) = A xi + b` and the closed-form posterior of the
//! conjugate linear-Gaussian problem built on it.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::joint::{FlatPrior, ForwardModel, ForwardOutput, GaussianPrior, IsotropicGaussian, JointDensityModel};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearForward {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl LinearForward {
    /// `a` is `d_y x d_xi`, row-major.
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Self {
        assert_eq!(a.len(), b.len(), "offset must match output rows");
        assert!(!a.is_empty() && !a[0].is_empty(), "empty design matrix");
        assert!(a.iter().all(|r| r.len() == a[0].len()), "ragged design matrix");
        Self { a, b }
    }
}

impl ForwardModel for LinearForward {
    fn input_dim(&self) -> usize {
        self.a[0].len()
    }

    fn output_dim(&self) -> usize {
        self.a.len()
    }

    fn evaluate(&self, xi: &[f64]) -> Result<ForwardOutput> {
        Ok(ForwardOutput {
            value: self.value(xi)?,
            jacobian: self.a.clone(),
            hess_diag: vec![vec![0.0; self.input_dim()]; self.output_dim()],
        })
    }

    fn value(&self, xi: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), xi.len())?;
        Ok(self
            .a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| b + row.iter().zip(xi).map(|(a, x)| a * x).sum::<f64>())
            .collect())
    }
}

/// `y = A xi + b + N(0, sigma^2 I)`, `xi ~ N(m0, diag(v0))`, sigma known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianProblem {
    pub design: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub observations: Vec<f64>,
    pub noise_sigma: f64,
    pub prior_mean: Vec<f64>,
    pub prior_variance: Vec<f64>,
}

/// Exact Gaussian posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl GaussianPosterior {
    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.mean.len()).map(|i| self.covariance[i][i].sqrt()).collect()
    }
}

impl LinearGaussianProblem {
    pub fn validate(&self) -> Result<()> {
        let dy = self.design.len();
        if dy == 0 || self.design[0].is_empty() {
            return Err(Error::Config("design matrix is empty".into()));
        }
        let dx = self.design[0].len();
        if self.design.iter().any(|r| r.len() != dx) {
            return Err(Error::Config("design matrix is ragged".into()));
        }
        check_dim(dy, self.offset.len())?;
        check_dim(dy, self.observations.len())?;
        check_dim(dx, self.prior_mean.len())?;
        check_dim(dx, self.prior_variance.len())?;
        if !(self.noise_sigma > 0.0) || self.prior_variance.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("noise and prior variances must be positive".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<JointDensityModel> {
        self.validate()?;
        JointDensityModel::new(
            Box::new(LinearForward::new(self.design.clone(), self.offset.clone())),
            Box::new(IsotropicGaussian::fixed(self.noise_sigma)),
            Box::new(GaussianPrior::new(self.prior_mean.clone(), self.prior_variance.clone())),
            Box::new(FlatPrior { dim: 0 }),
            self.observations.clone(),
        )
    }

    /// Posterior precision `A^T A / sigma^2 + V0^{-1}` solved by Cholesky.
    pub fn posterior(&self) -> Result<GaussianPosterior> {
        self.validate()?;
        let dx = self.prior_mean.len();
        let s2 = self.noise_sigma * self.noise_sigma;
        let mut prec = vec![vec![0.0; dx]; dx];
        let mut rhs = vec![0.0; dx];
        for i in 0..dx {
            prec[i][i] += 1.0 / self.prior_variance[i];
            rhs[i] += self.prior_mean[i] / self.prior_variance[i];
            for (row, (y, b)) in self.design.iter().zip(self.observations.iter().zip(&self.offset)) {
                rhs[i] += row[i] * (y - b) / s2;
                for j in 0..dx {
                    prec[i][j] += row[i] * row[j] / s2;
                }
            }
        }
        let chol = cholesky(&prec)?;
        let mean = chol_solve(&chol, &rhs);
        let covariance = (0..dx)
            .map(|j| {
                let mut e = vec![0.0; dx];
                e[j] = 1.0;
                chol_solve(&chol, &e)
            })
            .collect();
        Ok(GaussianPosterior { mean, covariance })
    }

    /// `log p(y)` with `y ~ N(A m0 + b, sigma^2 I + A V0 A^T)`.
    pub fn log_evidence(&self) -> Result<f64> {
        self.validate()?;
        let dy = self.observations.len();
        let mut cov = vec![vec![0.0; dy]; dy];
        let mut resid = vec![0.0; dy];
        for r in 0..dy {
            let pred: f64 = self.offset[r]
                + self.design[r].iter().zip(&self.prior_mean).map(|(a, m)| a * m).sum::<f64>();
            resid[r] = self.observations[r] - pred;
            for s in 0..dy {
                cov[r][s] = self.design[r]
                    .iter()
                    .zip(&self.design[s])
                    .zip(&self.prior_variance)
                    .map(|((a, b), v)| a * b * v)
                    .sum::<f64>();
            }
            cov[r][r] += self.noise_sigma * self.noise_sigma;
        }
        let chol = cholesky(&cov)?;
        let z = chol_solve(&chol, &resid);
        let quad: f64 = resid.iter().zip(&z).map(|(a, b)| a * b).sum();
        let log_det: f64 = 2.0 * (0..dy).map(|i| chol[i][i].ln()).sum::<f64>();
        Ok(-0.5 * (dy as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
    }
}

fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return Err(Error::NonFinite("matrix is not positive definite".into()));
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_posterior() {
        let p = LinearGaussianProblem {
            design: vec![vec![2.0]],
            offset: vec![0.5],
            observations: vec![3.0],
            noise_sigma: 0.5,
            prior_mean: vec![1.0],
            prior_variance: vec![4.0],
        };
        let post = p.posterior().unwrap();
        // precision 0.25 + 4/0.25 = 16.25
        assert_relative_eq!(post.covariance[0][0], 1.0 / 16.25, epsilon = 1e-14);
        assert_relative_eq!(post.mean[0], (0.25 + 2.0 * 2.5 / 0.25) / 16.25, epsilon = 1e-14);
    }

    #[test]
    fn scalar_evidence() {
        let p = LinearGaussianProblem {
            design: vec![vec![2.0]],
            offset: vec![0.0],
            observations: vec![1.0],
            noise_sigma: 1.0,
            prior_mean: vec![0.0],
            prior_variance: vec![1.0],
        };
        // y ~ N(0, 1 + 4)
        let expected = -0.5 * ((2.0 * std::f64::consts::PI * 5.0).ln() + 1.0 / 5.0);
        assert_relative_eq!(p.log_evidence().unwrap(), expected, epsilon = 1e-14);
    }
}
