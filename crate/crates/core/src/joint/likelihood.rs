use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Second derivatives of a log-likelihood with respect to the model output.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldHessian {
    /// `c * I`
    ScaledIdentity(f64),
    Dense(Vec<Vec<f64>>),
}

impl FieldHessian {
    /// `a^T H a`.
    pub fn quad_form(&self, a: &[f64]) -> f64 {
        match self {
            FieldHessian::ScaledIdentity(c) => c * a.iter().map(|x| x * x).sum::<f64>(),
            FieldHessian::Dense(h) => h
                .iter()
                .zip(a)
                .map(|(row, ar)| ar * row.iter().zip(a).map(|(hrs, as_)| hrs * as_).sum::<f64>())
                .sum(),
        }
    }

    pub fn entry(&self, r: usize, s: usize) -> f64 {
        match self {
            FieldHessian::ScaledIdentity(c) => {
                if r == s {
                    *c
                } else {
                    0.0
                }
            }
            FieldHessian::Dense(h) => h[r][s],
        }
    }
}

/// Value and partials of `L(y, f, theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTerms {
    pub value: f64,
    /// dL/df_r
    pub grad_f: Vec<f64>,
    /// dL/dtheta_j
    pub grad_theta: Vec<f64>,
    /// d2L/df_r df_s
    pub hess_ff: FieldHessian,
    /// d2L/dtheta_j^2
    pub hess_theta_diag: Vec<f64>,
    /// d2L/dtheta_k df_s, indexed `[k][s]`
    pub hess_theta_f: Vec<Vec<f64>>,
}

pub trait Likelihood: Send + Sync {
    /// Number of likelihood parameters appended to the forward-model inputs.
    fn theta_dim(&self) -> usize;
    fn log_likelihood(&self, y: &[f64], f: &[f64], theta: &[f64]) -> f64;
    fn terms(&self, y: &[f64], f: &[f64], theta: &[f64]) -> LikelihoodTerms;
}

/// `log N(y | f, exp(2 theta) I)` with the log noise scale `theta` either
/// inferred (one extra parameter) or held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotropicGaussian {
    fixed_log_sigma: Option<f64>,
}

impl IsotropicGaussian {
    /// Noise scale `sigma = exp(theta)` inferred jointly with the model inputs.
    pub fn inferred() -> Self {
        Self { fixed_log_sigma: None }
    }

    /// Noise scale known; contributes no parameters.
    pub fn fixed(sigma: f64) -> Self {
        assert!(sigma > 0.0, "noise scale must be positive");
        Self { fixed_log_sigma: Some(sigma.ln()) }
    }

    fn log_sigma(&self, theta: &[f64]) -> f64 {
        self.fixed_log_sigma.unwrap_or_else(|| theta[0])
    }
}

impl Likelihood for IsotropicGaussian {
    fn theta_dim(&self) -> usize {
        usize::from(self.fixed_log_sigma.is_none())
    }

    fn log_likelihood(&self, y: &[f64], f: &[f64], theta: &[f64]) -> f64 {
        let t = self.log_sigma(theta);
        let n = y.len() as f64;
        let rss: f64 = y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum();
        -0.5 * n * LN_2PI - n * t - 0.5 * (-2.0 * t).exp() * rss
    }

    fn terms(&self, y: &[f64], f: &[f64], theta: &[f64]) -> LikelihoodTerms {
        let t = self.log_sigma(theta);
        let n = y.len() as f64;
        let prec = (-2.0 * t).exp();
        let resid: Vec<f64> = y.iter().zip(f).map(|(a, b)| a - b).collect();
        let rss: f64 = resid.iter().map(|r| r * r).sum();
        let value = -0.5 * n * LN_2PI - n * t - 0.5 * prec * rss;
        let grad_f = resid.iter().map(|r| prec * r).collect();
        let (grad_theta, hess_theta_diag, hess_theta_f) = if self.fixed_log_sigma.is_some() {
            (vec![], vec![], vec![])
        } else {
            (
                vec![prec * rss - n],
                vec![-2.0 * prec * rss],
                vec![resid.iter().map(|r| -2.0 * prec * r).collect()],
            )
        };
        LikelihoodTerms {
            value,
            grad_f,
            grad_theta,
            hess_ff: FieldHessian::ScaledIdentity(-prec),
            hess_theta_diag,
            hess_theta_f,
        }
    }
}
