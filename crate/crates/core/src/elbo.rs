//! Approximate evidence lower bound `F_a[q] = H0[q] + L_a[q]`.
//!
//! `L_0` evaluates the joint log-density at each component mean; `L_2` adds
//! the diagonal curvature term `1/2 sum_i w_i sum_j s_ij E_ijj`. Both are
//! functions of a [`ComponentLinearization`] taken at the current means, so the
//! weight and variance steps never touch the forward model.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::joint::LogDensity;
use crate::mixture::MixtureState;

/// Taylor order of the expected log-joint term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaylorOrder {
    Zero,
    Second,
}

/// Which block of mixture parameters a gradient is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Weights,
    Means,
    Variances,
}

/// `J`, `dJ` and the Hessian diagonal of the joint log-density at every
/// component mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLinearization {
    /// `C_i = J(mu_i)`
    pub values: Vec<f64>,
    /// `D_ij = dJ/d omega_j (mu_i)`
    pub grads: Vec<Vec<f64>>,
    /// `E_ijj = d^2 J / d omega_j^2 (mu_i)`
    pub hess_diag: Vec<Vec<f64>>,
}

impl ComponentLinearization {
    /// Evaluates `density` once per component mean.
    pub fn at_means(density: &dyn LogDensity, q: &MixtureState) -> Result<Self> {
        check_dim(density.dim(), q.dim())?;
        let mut values = Vec::with_capacity(q.components());
        let mut grads = Vec::with_capacity(q.components());
        let mut hess_diag = Vec::with_capacity(q.components());
        for mu in q.means() {
            let e = density.evaluate(mu)?;
            if !e.is_valid() {
                return Err(Error::OutsideSupport(format!("component mean {mu:?}")));
            }
            values.push(e.value);
            grads.push(e.grad);
            hess_diag.push(e.hess_diag);
        }
        Ok(Self { values, grads, hess_diag })
    }

    fn check(&self, q: &MixtureState) -> Result<()> {
        check_dim(q.components(), self.values.len())?;
        check_dim(q.components(), self.grads.len())?;
        check_dim(q.components(), self.hess_diag.len())?;
        for (g, h) in self.grads.iter().zip(&self.hess_diag) {
            check_dim(q.dim(), g.len())?;
            check_dim(q.dim(), h.len())?;
        }
        Ok(())
    }

    /// `1/2 sum_j s_ij E_ijj` for component `i`.
    fn curvature(&self, q: &MixtureState, i: usize) -> f64 {
        0.5 * q.variances()[i].iter().zip(&self.hess_diag[i]).map(|(s, e)| s * e).sum::<f64>()
    }
}

/// `L_0[q] = sum_i w_i C_i`.
pub fn expected_log_joint_0(q: &MixtureState, lin: &ComponentLinearization) -> Result<f64> {
    lin.check(q)?;
    Ok(q.weights().iter().zip(&lin.values).map(|(w, c)| w * c).sum())
}

/// `L_2[q] = L_0[q] + 1/2 sum_i w_i sum_j s_ij E_ijj`.
pub fn expected_log_joint_2(q: &MixtureState, lin: &ComponentLinearization) -> Result<f64> {
    let l0 = expected_log_joint_0(q, lin)?;
    Ok(l0 + (0..q.components()).map(|i| q.weights()[i] * lin.curvature(q, i)).sum::<f64>())
}

pub fn elbo(q: &MixtureState, lin: &ComponentLinearization, order: TaylorOrder) -> Result<f64> {
    let l = match order {
        TaylorOrder::Zero => expected_log_joint_0(q, lin)?,
        TaylorOrder::Second => expected_log_joint_2(q, lin)?,
    };
    Ok(q.entropy_bound() + l)
}

/// Gradient of `F_a` with respect to one parameter block, flattened
/// component-major. The mean gradient of `F_2` would need third derivatives
/// of the forward model and is refused.
pub fn elbo_grad(q: &MixtureState, lin: &ComponentLinearization, order: TaylorOrder, block: Block) -> Result<Vec<f64>> {
    lin.check(q)?;
    let h = q.entropy_bound_grads();
    let l = q.components();
    let out = match block {
        Block::Weights => (0..l)
            .map(|i| {
                let extra = match order {
                    TaylorOrder::Zero => 0.0,
                    TaylorOrder::Second => lin.curvature(q, i),
                };
                h.weights[i] + lin.values[i] + extra
            })
            .collect(),
        Block::Means => {
            if order == TaylorOrder::Second {
                return Err(Error::Unsupported("mean gradient of the second-order bound"));
            }
            (0..l)
                .flat_map(|i| {
                    let w = q.weights()[i];
                    h.means[i].iter().zip(&lin.grads[i]).map(move |(hm, d)| hm + w * d).collect::<Vec<_>>()
                })
                .collect()
        }
        Block::Variances => (0..l)
            .flat_map(|i| {
                let w = q.weights()[i];
                let lin_part: Vec<f64> = match order {
                    TaylorOrder::Zero => vec![0.0; q.dim()],
                    TaylorOrder::Second => lin.hess_diag[i].iter().map(|e| 0.5 * w * e).collect(),
                };
                h.variances[i].iter().zip(lin_part).map(|(a, b)| a + b).collect::<Vec<_>>()
            })
            .collect(),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::JointEval;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// J(w) = sum_j a_j w_j - 1/2 sum_j b_j w_j^2 + c sum_j sin(w_j)
    struct Smooth {
        a: Vec<f64>,
        b: Vec<f64>,
        c: f64,
    }

    impl LogDensity for Smooth {
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn evaluate(&self, w: &[f64]) -> Result<JointEval> {
            let mut value = 0.0;
            let mut grad = vec![];
            let mut hess = vec![];
            for j in 0..w.len() {
                value += self.a[j] * w[j] - 0.5 * self.b[j] * w[j] * w[j] + self.c * w[j].sin();
                grad.push(self.a[j] - self.b[j] * w[j] + self.c * w[j].cos());
                hess.push(-self.b[j] - self.c * w[j].sin());
            }
            Ok(JointEval { value, grad, hess_diag: hess })
        }
    }

    fn one_d(w: &[f64], m: &[f64], v: &[f64]) -> MixtureState {
        MixtureState::new(w.to_vec(), m.iter().map(|x| vec![*x]).collect(), v.iter().map(|x| vec![*x]).collect()).unwrap()
    }

    #[test]
    fn l0_single_component_is_joint_at_mean() {
        let j = Smooth { a: vec![0.3], b: vec![1.0], c: 0.5 };
        let q = one_d(&[1.0], &[0.7], &[0.2]);
        let lin = ComponentLinearization::at_means(&j, &q).unwrap();
        assert_relative_eq!(expected_log_joint_0(&q, &lin).unwrap(), j.evaluate(&[0.7]).unwrap().value);
    }

    #[test]
    fn l0_weighted_mean() {
        let q = one_d(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0]);
        let lin = ComponentLinearization {
            values: vec![-1.0, -3.0],
            grads: vec![vec![0.0], vec![0.0]],
            hess_diag: vec![vec![0.0], vec![0.0]],
        };
        assert_relative_eq!(expected_log_joint_0(&q, &lin).unwrap(), -2.0);
    }

    #[test]
    fn l2_quadratic_curvature() {
        // J = -w^2/2, mu = 0, s = 2 -> 1/2 * 2 * (-1)
        let j = Smooth { a: vec![0.0], b: vec![1.0], c: 0.0 };
        let q = one_d(&[1.0], &[0.0], &[2.0]);
        let lin = ComponentLinearization::at_means(&j, &q).unwrap();
        assert_relative_eq!(expected_log_joint_2(&q, &lin).unwrap(), -1.0, epsilon = 1e-14);
        let tiny = one_d(&[1.0], &[0.0], &[1e-300]);
        let lin = ComponentLinearization::at_means(&j, &tiny).unwrap();
        approx::assert_abs_diff_eq!(expected_log_joint_2(&tiny, &lin).unwrap(), expected_log_joint_0(&tiny, &lin).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn elbo_is_additive_and_monotone_in_values() {
        let q = one_d(&[0.5, 0.5], &[-10.0, 10.0], &[1.0, 1.0]);
        let mut lin = ComponentLinearization {
            values: vec![-1.0, -3.0],
            grads: vec![vec![0.0], vec![0.0]],
            hess_diag: vec![vec![-1.0], vec![-2.0]],
        };
        let h0 = q.entropy_bound();
        assert_relative_eq!(elbo(&q, &lin, TaylorOrder::Zero).unwrap(), h0 - 2.0, epsilon = 1e-12);
        assert_relative_eq!(elbo(&q, &lin, TaylorOrder::Second).unwrap(), h0 - 2.0 - 0.75, epsilon = 1e-12);
        let before = elbo(&q, &lin, TaylorOrder::Second).unwrap();
        lin.values[1] -= 0.5;
        assert!(elbo(&q, &lin, TaylorOrder::Second).unwrap() < before);
    }

    #[test]
    fn second_order_mean_gradient_refused() {
        let q = one_d(&[1.0], &[0.0], &[1.0]);
        let lin = ComponentLinearization { values: vec![0.0], grads: vec![vec![0.0]], hess_diag: vec![vec![0.0]] };
        assert!(matches!(
            elbo_grad(&q, &lin, TaylorOrder::Second, Block::Means),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn zero_order_has_no_variance_dependence_beyond_entropy() {
        let q = one_d(&[1.0], &[0.3], &[0.8]);
        let lin = ComponentLinearization { values: vec![1.0], grads: vec![vec![2.0]], hess_diag: vec![vec![-4.0]] };
        let g = elbo_grad(&q, &lin, TaylorOrder::Zero, Block::Variances).unwrap();
        assert_relative_eq!(g[0], q.entropy_bound_grads().variances[0][0]);
    }

    #[test]
    fn single_component_variance_stationary_point() {
        let q = one_d(&[1.0], &[0.3], &[0.25]);
        let e = -4.0;
        let lin = ComponentLinearization { values: vec![0.0], grads: vec![vec![0.0]], hess_diag: vec![vec![e]] };
        let g = elbo_grad(&q, &lin, TaylorOrder::Second, Block::Variances).unwrap();
        assert_relative_eq!(g[0], 1.0 / (2.0 * 0.25) + 0.5 * e, epsilon = 1e-14);
        assert_relative_eq!(g[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences_with_fresh_linearizations() {
        let j = Smooth { a: vec![0.3, -0.2, 0.8], b: vec![1.0, 2.0, 0.5], c: 0.7 };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-6;
        for trial in 0..20 {
            let l = 1 + trial % 3;
            let raw: Vec<f64> = (0..l).map(|_| rng.gen_range(0.2..1.0)).collect();
            let tot: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|x| x / tot).collect();
            let fix: f64 = w.iter().sum::<f64>() - 1.0;
            w[0] -= fix;
            let means: Vec<Vec<f64>> = (0..l).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let vars: Vec<Vec<f64>> = (0..l).map(|_| (0..3).map(|_| rng.gen_range(0.1..1.5)).collect()).collect();
            let q = MixtureState::new(w, means, vars).unwrap();
            let lin = ComponentLinearization::at_means(&j, &q).unwrap();

            let gm = elbo_grad(&q, &lin, TaylorOrder::Zero, Block::Means).unwrap();
            let flat = q.flat_means();
            for k in 0..flat.len() {
                let f_at = |x: f64| {
                    let mut m = flat.clone();
                    m[k] = x;
                    let s = q.with_means(m.chunks(3).map(<[f64]>::to_vec).collect()).unwrap();
                    let lin = ComponentLinearization::at_means(&j, &s).unwrap();
                    elbo(&s, &lin, TaylorOrder::Zero).unwrap()
                };
                let fd = (f_at(flat[k] + h) - f_at(flat[k] - h)) / (2.0 * h);
                assert_relative_eq!(gm[k], fd, max_relative = 1e-4, epsilon = 1e-6);
            }

            let gv = elbo_grad(&q, &lin, TaylorOrder::Second, Block::Variances).unwrap();
            let flat_v = q.flat_variances();
            for k in 0..flat_v.len() {
                let f_at = |x: f64| {
                    let mut v = flat_v.clone();
                    v[k] = x;
                    let s = q.with_variances(v.chunks(3).map(<[f64]>::to_vec).collect()).unwrap();
                    elbo(&s, &lin, TaylorOrder::Second).unwrap()
                };
                let fd = (f_at(flat_v[k] + h) - f_at(flat_v[k] - h)) / (2.0 * h);
                assert_relative_eq!(gv[k], fd, max_relative = 1e-4, epsilon = 1e-6);
            }

            // weights as free coordinates (the fit applies the softmax chain rule)
            for order in [TaylorOrder::Zero, TaylorOrder::Second] {
                let gw = elbo_grad(&q, &lin, order, Block::Weights).unwrap();
                for i in 0..l {
                    let f_at = |x: f64| {
                        let mut wv = q.weights().to_vec();
                        wv[i] = x;
                        let h0 = free_weight_entropy(&q, &wv);
                        let lterm: f64 = (0..l)
                            .map(|r| {
                                let c = match order {
                                    TaylorOrder::Zero => 0.0,
                                    TaylorOrder::Second => {
                                        0.5 * q.variances()[r].iter().zip(&lin.hess_diag[r]).map(|(s, e)| s * e).sum::<f64>()
                                    }
                                };
                                wv[r] * (lin.values[r] + c)
                            })
                            .sum();
                        h0 + lterm
                    };
                    let fd = (f_at(q.weights()[i] + h) - f_at(q.weights()[i] - h)) / (2.0 * h);
                    assert_relative_eq!(gw[i], fd, max_relative = 1e-4, epsilon = 1e-6);
                }
            }
        }
    }

    /// H0 with unnormalized weights, evaluated directly from its definition.
    fn free_weight_entropy(q: &MixtureState, w: &[f64]) -> f64 {
        let l = q.components();
        let mut h = 0.0;
        for i in 0..l {
            let qi: f64 = (0..l)
                .map(|r| {
                    let s: Vec<f64> = q.variances()[r].iter().zip(&q.variances()[i]).map(|(a, b)| a + b).collect();
                    w[r] * crate::mixture::log_normal_diag(&q.means()[r], &q.means()[i], &s).exp()
                })
                .sum();
            h -= w[i] * qi.ln();
        }
        h
    }
}
