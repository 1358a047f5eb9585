//! The joint log-density `J(omega) = log p(y | f(xi), theta) + log p(xi) + log p(theta)`
//! with its gradient and the diagonal of its Hessian.
//!
//! The parameter vector is `omega = (xi, theta)`: forward-model inputs first,
//! likelihood parameters after. Only diagonal second derivatives are ever
//! assembled, so forward models supply `d^2 f_r / d xi_j^2` and nothing more.

mod likelihood;
mod prior;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

pub use likelihood::{FieldHessian, IsotropicGaussian, Likelihood, LikelihoodTerms};
pub use prior::{FlatPrior, GaussianPrior, Prior, UniformBoxPrior};

use crate::error::{check_dim, Error, Result};

/// Output of one forward-model bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `f_r(xi)`
    pub value: Vec<f64>,
    /// `d f_r / d xi_j`, indexed `[r][j]`
    pub jacobian: Vec<Vec<f64>>,
    /// `d^2 f_r / d xi_j^2`, indexed `[r][j]`
    pub hess_diag: Vec<Vec<f64>>,
}

/// A map from physical parameters `xi` to predicted observables.
pub trait ForwardModel: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Value, Jacobian and diagonal second derivatives in one call.
    fn evaluate(&self, xi: &[f64]) -> Result<ForwardOutput>;

    /// Value only. Models with a cheaper value path override this.
    fn value(&self, xi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(xi)?.value)
    }
}

/// Value, gradient and Hessian diagonal of a log-density at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess_diag: Vec<f64>,
}

impl JointEval {
    /// Sentinel for a point outside the support: `-inf` value, zero derivatives.
    pub fn outside_support(dim: usize) -> Self {
        Self {
            value: f64::NEG_INFINITY,
            grad: vec![0.0; dim],
            hess_diag: vec![0.0; dim],
        }
    }

    /// False for the outside-support sentinel; derivatives must not be used then.
    pub fn is_valid(&self) -> bool {
        self.value.is_finite()
    }
}

/// Anything the variational fit and the sampler can target.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, omega: &[f64]) -> Result<JointEval>;

    fn log_density(&self, omega: &[f64]) -> Result<f64> {
        Ok(self.evaluate(omega)?.value)
    }

    /// Number of forward-model bundles requested so far.
    fn forward_evals(&self) -> usize {
        0
    }
}

const CACHE_SLOTS: usize = 16;

/// Composition of forward model, likelihood, priors and observed data.
pub struct JointDensityModel {
    forward: Box<dyn ForwardModel>,
    likelihood: Box<dyn Likelihood>,
    prior_xi: Box<dyn Prior>,
    prior_theta: Box<dyn Prior>,
    y: Vec<f64>,
    evals: AtomicUsize,
    cache: Mutex<VecDeque<(Vec<f64>, Arc<ForwardOutput>)>>,
}

impl std::fmt::Debug for JointDensityModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JointDensityModel")
            .field("xi_dim", &self.xi_dim())
            .field("theta_dim", &self.theta_dim())
            .field("data_dim", &self.y.len())
            .field("forward_evals", &self.evals.load(Ordering::Relaxed))
            .finish()
    }
}

impl JointDensityModel {
    pub fn new(
        forward: Box<dyn ForwardModel>,
        likelihood: Box<dyn Likelihood>,
        prior_xi: Box<dyn Prior>,
        prior_theta: Box<dyn Prior>,
        y: Vec<f64>,
    ) -> Result<Self> {
        check_dim(forward.output_dim(), y.len())?;
        check_dim(forward.input_dim(), prior_xi.dim())?;
        check_dim(likelihood.theta_dim(), prior_theta.dim())?;
        Ok(Self {
            forward,
            likelihood,
            prior_xi,
            prior_theta,
            y,
            evals: AtomicUsize::new(0),
            cache: Mutex::new(VecDeque::with_capacity(CACHE_SLOTS)),
        })
    }

    pub fn xi_dim(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn theta_dim(&self) -> usize {
        self.likelihood.theta_dim()
    }

    pub fn data(&self) -> &[f64] {
        &self.y
    }

    pub fn forward_model(&self) -> &dyn ForwardModel {
        self.forward.as_ref()
    }

    /// Forward bundle at `xi`, served from the cache when the same point was
    /// requested recently.
    fn forward_bundle(&self, xi: &[f64]) -> Result<Arc<ForwardOutput>> {
        {
            let cache = self.cache.lock().expect("forward cache poisoned");
            if let Some((_, out)) = cache.iter().find(|(k, _)| k.as_slice() == xi) {
                return Ok(Arc::clone(out));
            }
        }
        self.evals.fetch_add(1, Ordering::Relaxed);
        let out = Arc::new(self.forward.evaluate(xi)?);
        check_dim(self.y.len(), out.value.len())?;
        let mut cache = self.cache.lock().expect("forward cache poisoned");
        if cache.len() == CACHE_SLOTS {
            cache.pop_front();
        }
        cache.push_back((xi.to_vec(), Arc::clone(&out)));
        Ok(out)
    }

    fn split<'a>(&self, omega: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        check_dim(self.xi_dim() + self.theta_dim(), omega.len())?;
        Ok(omega.split_at(self.xi_dim()))
    }

    /// Mixed partials `d^2 J / d xi_j d theta_k`, indexed `[j][k]`. Not used by
    /// the diagonal variational family; exposed for completeness and checks.
    pub fn cross_xi_theta(&self, omega: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (xi, theta) = self.split(omega)?;
        let fwd = self.forward_bundle(xi)?;
        let terms = self.likelihood.terms(&self.y, &fwd.value, theta);
        Ok((0..xi.len())
            .map(|j| {
                terms
                    .hess_theta_f
                    .iter()
                    .map(|row| row.iter().zip(&fwd.jacobian).map(|(l, jr)| l * jr[j]).sum())
                    .collect()
            })
            .collect())
    }
}

impl LogDensity for JointDensityModel {
    fn dim(&self) -> usize {
        self.xi_dim() + self.theta_dim()
    }

    fn evaluate(&self, omega: &[f64]) -> Result<JointEval> {
        let (xi, theta) = self.split(omega)?;
        let p_xi = self.prior_xi.log_density(xi);
        let p_theta = self.prior_theta.log_density(theta);
        if !p_xi.is_finite() || !p_theta.is_finite() {
            return Ok(JointEval::outside_support(omega.len()));
        }
        let fwd = self.forward_bundle(xi)?;
        let lk = self.likelihood.terms(&self.y, &fwd.value, theta);

        let g_xi = self.prior_xi.grad(xi);
        let h_xi = self.prior_xi.hess_diag(xi);
        let mut grad = Vec::with_capacity(omega.len());
        let mut hess = Vec::with_capacity(omega.len());
        let mut column = vec![0.0; self.y.len()];
        for j in 0..xi.len() {
            for (c, row) in column.iter_mut().zip(&fwd.jacobian) {
                *c = row[j];
            }
            let lf_fj: f64 = lk.grad_f.iter().zip(&column).map(|(a, b)| a * b).sum();
            let lf_fjj: f64 = lk.grad_f.iter().zip(&fwd.hess_diag).map(|(a, h)| a * h[j]).sum();
            grad.push(lf_fj + g_xi[j]);
            hess.push(lk.hess_ff.quad_form(&column) + lf_fjj + h_xi[j]);
        }
        let g_th = self.prior_theta.grad(theta);
        let h_th = self.prior_theta.hess_diag(theta);
        for k in 0..theta.len() {
            grad.push(lk.grad_theta[k] + g_th[k]);
            hess.push(lk.hess_theta_diag[k] + h_th[k]);
        }
        let value = lk.value + p_xi + p_theta;
        if grad.iter().chain(&hess).any(|v| !v.is_finite()) || value.is_nan() {
            return Err(Error::NonFinite(format!("joint derivatives at {omega:?}")));
        }
        Ok(JointEval { value, grad, hess_diag: hess })
    }

    fn log_density(&self, omega: &[f64]) -> Result<f64> {
        let (xi, theta) = self.split(omega)?;
        let priors = self.prior_xi.log_density(xi) + self.prior_theta.log_density(theta);
        if !priors.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        let cached = {
            let cache = self.cache.lock().expect("forward cache poisoned");
            cache.iter().find(|(k, _)| k.as_slice() == xi).map(|(_, o)| o.value.clone())
        };
        let f = match cached {
            Some(f) => f,
            None => {
                self.evals.fetch_add(1, Ordering::Relaxed);
                self.forward.value(xi)?
            }
        };
        Ok(self.likelihood.log_likelihood(&self.y, &f, theta) + priors)
    }

    fn forward_evals(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::linear::LinearForward;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Flat;
    impl Likelihood for Flat {
        fn theta_dim(&self) -> usize {
            1
        }
        fn log_likelihood(&self, _: &[f64], _: &[f64], _: &[f64]) -> f64 {
            0.0
        }
        fn terms(&self, y: &[f64], _: &[f64], _: &[f64]) -> LikelihoodTerms {
            LikelihoodTerms {
                value: 0.0,
                grad_f: vec![0.0; y.len()],
                grad_theta: vec![0.0],
                hess_ff: FieldHessian::ScaledIdentity(0.0),
                hess_theta_diag: vec![0.0],
                hess_theta_f: vec![vec![0.0; y.len()]],
            }
        }
    }

    /// A nonlinear two-input model with closed-form derivatives.
    struct Trig;
    impl ForwardModel for Trig {
        fn input_dim(&self) -> usize {
            2
        }
        fn output_dim(&self) -> usize {
            3
        }
        fn evaluate(&self, x: &[f64]) -> Result<ForwardOutput> {
            let (a, b) = (x[0], x[1]);
            Ok(ForwardOutput {
                value: vec![a.sin() * b, (a * b).exp(), a * a + b.cos()],
                jacobian: vec![
                    vec![a.cos() * b, a.sin()],
                    vec![b * (a * b).exp(), a * (a * b).exp()],
                    vec![2.0 * a, -b.sin()],
                ],
                hess_diag: vec![
                    vec![-a.sin() * b, 0.0],
                    vec![b * b * (a * b).exp(), a * a * (a * b).exp()],
                    vec![2.0, -b.cos()],
                ],
            })
        }
    }

    fn trig_model() -> JointDensityModel {
        JointDensityModel::new(
            Box::new(Trig),
            Box::new(IsotropicGaussian::inferred()),
            Box::new(GaussianPrior::new(vec![0.1, -0.2], vec![1.0, 2.0])),
            Box::new(GaussianPrior::iid(1, -1.0, 1.0)),
            vec![0.3, 1.1, 0.9],
        )
        .unwrap()
    }

    #[test]
    fn linear_model_matches_hand_quadratic() {
        // f(xi) = xi, y = 1.2, sigma = 0.5, prior N(0, 1):
        // J = -log(2pi)/2 - log(0.5) - 2 (1.2 - xi)^2 - log(2pi)/2 - xi^2/2
        let m = JointDensityModel::new(
            Box::new(LinearForward::new(vec![vec![1.0]], vec![0.0])),
            Box::new(IsotropicGaussian::fixed(0.5)),
            Box::new(GaussianPrior::iid(1, 0.0, 1.0)),
            Box::new(FlatPrior { dim: 0 }),
            vec![1.2],
        )
        .unwrap();
        for xi in [-1.0, 0.0, 0.4, 2.0] {
            let e = m.evaluate(&[xi]).unwrap();
            let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5f64.ln() - 2.0 * (1.2 - xi).powi(2) - 0.5 * xi * xi;
            assert_relative_eq!(e.value, expected, epsilon = 1e-12);
            assert_relative_eq!(e.grad[0], 4.0 * (1.2 - xi) - xi, epsilon = 1e-12);
            assert_relative_eq!(e.hess_diag[0], -5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = trig_model();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        for _ in 0..20 {
            let w: Vec<f64> = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..0.5)];
            let e = m.evaluate(&w).unwrap();
            for j in 0..3 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let (fp, fm) = (m.log_density(&wp).unwrap(), m.log_density(&wm).unwrap());
                let g = (fp - fm) / (2.0 * h);
                let hd = (fp - 2.0 * e.value + fm) / (h * h);
                assert_relative_eq!(e.grad[j], g, max_relative = 1e-5, epsilon = 1e-6);
                assert_relative_eq!(e.hess_diag[j], hd, max_relative = 1e-3, epsilon = 1e-3);
            }
            let cross = m.cross_xi_theta(&w).unwrap();
            for j in 0..2 {
                let g = |t: f64| {
                    let mut v = w.clone();
                    v[2] = t;
                    m.evaluate(&v).unwrap().grad[j]
                };
                let fd = (g(w[2] + h) - g(w[2] - h)) / (2.0 * h);
                assert_relative_eq!(cross[j][0], fd, max_relative = 1e-5, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn prior_only_decomposition() {
        let m = JointDensityModel::new(
            Box::new(Trig),
            Box::new(Flat),
            Box::new(GaussianPrior::iid(2, 0.0, 1.0)),
            Box::new(GaussianPrior::iid(1, -1.0, 1.0)),
            vec![0.0; 3],
        )
        .unwrap();
        let w = [0.3, -0.4, -2.0];
        let expected = GaussianPrior::iid(2, 0.0, 1.0).log_density(&w[..2]) + GaussianPrior::iid(1, -1.0, 1.0).log_density(&w[2..]);
        assert_relative_eq!(m.evaluate(&w).unwrap().value, expected, epsilon = 1e-14);
    }

    #[test]
    fn likelihood_only_decomposition() {
        let m = JointDensityModel::new(
            Box::new(Trig),
            Box::new(IsotropicGaussian::inferred()),
            Box::new(FlatPrior { dim: 2 }),
            Box::new(FlatPrior { dim: 1 }),
            vec![0.3, 1.1, 0.9],
        )
        .unwrap();
        let w = [0.3, -0.4, -0.2];
        let f = Trig.value(&w[..2]).unwrap();
        let expected = IsotropicGaussian::inferred().log_likelihood(&[0.3, 1.1, 0.9], &f, &w[2..]);
        assert_relative_eq!(m.evaluate(&w).unwrap().value, expected, epsilon = 1e-14);
    }

    #[test]
    fn outside_support_sentinel() {
        let m = JointDensityModel::new(
            Box::new(Trig),
            Box::new(IsotropicGaussian::inferred()),
            Box::new(UniformBoxPrior::unit(2)),
            Box::new(GaussianPrior::iid(1, -1.0, 1.0)),
            vec![0.3, 1.1, 0.9],
        )
        .unwrap();
        let e = m.evaluate(&[1.5, 0.5, 0.0]).unwrap();
        assert!(!e.is_valid());
        assert_eq!(e.value, f64::NEG_INFINITY);
        assert!(e.grad.iter().all(|g| *g == 0.0));
        assert_eq!(m.forward_evals(), 0);
    }

    #[test]
    fn counter_counts_distinct_points() {
        let m = trig_model();
        m.evaluate(&[0.1, 0.2, -1.0]).unwrap();
        m.evaluate(&[0.1, 0.2, -1.0]).unwrap();
        // theta does not enter the forward model
        m.evaluate(&[0.1, 0.2, 0.5]).unwrap();
        m.log_density(&[0.1, 0.2, -3.0]).unwrap();
        assert_eq!(m.forward_evals(), 1);
        m.evaluate(&[0.3, 0.2, -1.0]).unwrap();
        assert_eq!(m.forward_evals(), 2);
    }

    #[test]
    fn dimension_checks() {
        let m = trig_model();
        assert!(matches!(m.evaluate(&[0.0; 2]), Err(Error::DimensionMismatch { .. })));
        let bad = JointDensityModel::new(
            Box::new(Trig),
            Box::new(IsotropicGaussian::inferred()),
            Box::new(FlatPrior { dim: 2 }),
            Box::new(FlatPrior { dim: 1 }),
            vec![0.0; 4],
        );
        assert!(bad.is_err());
    }
}
