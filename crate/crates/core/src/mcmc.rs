//! Metropolis-adjusted Langevin sampling.
//!
//! Proposal `omega' = omega + (dt^2 / 2) grad J(omega) + dt eta`, `eta ~ N(0, I)`,
//! accepted with the Metropolis–Hastings ratio for the asymmetric Gaussian
//! proposal. An optional reflection move `x_c -> 2 c - x_c` can be mixed in
//! to hop between mirror-image modes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::{JointEval, LogDensity};

/// Reflection of one coordinate about a pivot, proposed with some probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorJump {
    pub probability: f64,
    pub coordinate: usize,
    pub pivot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MalaConfig {
    pub dt: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub total: usize,
    pub seed: u64,
    pub mirror: Option<MirrorJump>,
}

impl Default for MalaConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            burn_in: 1000,
            thin: 100,
            total: 100_000,
            seed: 0,
            mirror: None,
        }
    }
}

impl MalaConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.total <= self.burn_in {
            return Err(Error::Config("total steps must exceed burn-in".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be at least 1".into()));
        }
        if let Some(m) = &self.mirror {
            if !(0.0..=1.0).contains(&m.probability) || m.coordinate >= dim || !m.pivot.is_finite() {
                return Err(Error::Config("invalid mirror jump".into()));
            }
        }
        Ok(())
    }

    /// Number of retained samples.
    pub fn retained(&self) -> usize {
        (self.total - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    /// Retained samples, one row per sample.
    pub samples: Vec<Vec<f64>>,
    /// Accepted fraction of all proposals, burn-in included.
    pub acceptance_rate: f64,
    /// Accepted fraction of mirror proposals, if any were made.
    pub mirror_acceptance_rate: Option<f64>,
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
    pub forward_evals: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[j]).collect()
    }

    /// Sample autocorrelation of coordinate `j` at `lag` (in retained samples).
    pub fn autocorrelation(&self, j: usize, lag: usize) -> f64 {
        let x = self.column(j);
        let n = x.len();
        if lag >= n {
            return 0.0;
        }
        let m = x.iter().sum::<f64>() / n as f64;
        let var: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        let cov: f64 = (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum();
        cov / var
    }
}

fn log_proposal(to: &[f64], from: &[f64], grad_from: &[f64], dt: f64) -> f64 {
    let half = 0.5 * dt * dt;
    let ss: f64 = to
        .iter()
        .zip(from)
        .zip(grad_from)
        .map(|((t, f), g)| {
            let r = t - f - half * g;
            r * r
        })
        .sum();
    -ss / (2.0 * dt * dt)
}

/// `log [pi(y) q(x | y) / (pi(x) q(y | x))]` for a Langevin move `x -> y`.
pub fn log_acceptance_ratio(x: &[f64], at_x: &JointEval, y: &[f64], at_y: &JointEval, dt: f64) -> f64 {
    if !at_y.is_valid() {
        return f64::NEG_INFINITY;
    }
    at_y.value - at_x.value + log_proposal(x, y, &at_y.grad, dt) - log_proposal(y, x, &at_x.grad, dt)
}

fn evaluate_proposal(density: &dyn LogDensity, y: &[f64]) -> Result<JointEval> {
    match density.evaluate(y) {
        Ok(e) if e.value.is_finite() && e.grad.iter().all(|g| g.is_finite()) => Ok(e),
        Ok(_) | Err(Error::OutsideSupport(_)) | Err(Error::NonFinite(_)) | Err(Error::Integration(_)) => {
            Ok(JointEval::outside_support(y.len()))
        }
        Err(e) => Err(e),
    }
}

/// Run one chain from `omega0`.
pub fn mala_sample(density: &dyn LogDensity, omega0: &[f64], cfg: &MalaConfig) -> Result<Chain> {
    let d = density.dim();
    crate::error::check_dim(d, omega0.len())?;
    cfg.validate(d)?;
    let start_evals = density.forward_evals();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = omega0.to_vec();
    let mut ex = density.evaluate(&x)?;
    if !ex.value.is_finite() {
        return Err(Error::NonFinite(format!("log density {} at the start point", ex.value)));
    }
    let dt = cfg.dt;
    let half = 0.5 * dt * dt;

    let mut accepted = 0usize;
    let mut jumps = 0usize;
    let mut jumps_accepted = 0usize;
    let mut samples = Vec::with_capacity(cfg.retained());
    let mut y = vec![0.0; d];

    for step in 1..=cfg.total {
        if ex.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient at {x:?} (step {step})")));
        }
        let mirror = cfg.mirror.filter(|m| m.probability > 0.0 && rng.gen::<f64>() < m.probability);
        let (ey, log_alpha) = if let Some(m) = mirror {
            jumps += 1;
            y.copy_from_slice(&x);
            y[m.coordinate] = 2.0 * m.pivot - x[m.coordinate];
            let ey = evaluate_proposal(density, &y)?;
            // reflection is an involution, so the proposal is symmetric
            let la = if ey.is_valid() { ey.value - ex.value } else { f64::NEG_INFINITY };
            (ey, la)
        } else {
            for j in 0..d {
                let eta: f64 = rng.sample(StandardNormal);
                y[j] = x[j] + half * ex.grad[j] + dt * eta;
            }
            let ey = evaluate_proposal(density, &y)?;
            let la = log_acceptance_ratio(&x, &ex, &y, &ey, dt);
            (ey, la)
        };
        let u: f64 = rng.gen();
        if log_alpha.is_finite() && u.ln() < log_alpha.min(0.0) {
            x.copy_from_slice(&y);
            ex = ey;
            accepted += 1;
            if mirror.is_some() {
                jumps_accepted += 1;
            }
        }
        if step > cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0 {
            samples.push(x.clone());
        }
    }

    let n = samples.len().max(1) as f64;
    let means: Vec<f64> = (0..d).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n).collect();
    let std_devs = (0..d)
        .map(|j| {
            let ss: f64 = samples.iter().map(|s| (s[j] - means[j]).powi(2)).sum();
            (ss / (n - 1.0).max(1.0)).sqrt()
        })
        .collect();
    Ok(Chain {
        samples,
        acceptance_rate: accepted as f64 / cfg.total as f64,
        mirror_acceptance_rate: (jumps > 0).then(|| jumps_accepted as f64 / jumps as f64),
        means,
        std_devs,
        forward_evals: density.forward_evals() - start_evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn evaluate(&self, w: &[f64]) -> Result<JointEval> {
            Ok(JointEval {
                value: -0.5 * w.iter().map(|x| x * x).sum::<f64>(),
                grad: w.iter().map(|x| -x).collect(),
                hess_diag: vec![-1.0; w.len()],
            })
        }
    }

    #[test]
    fn retained_count() {
        let cfg = MalaConfig { total: 2050, burn_in: 50, thin: 100, ..Default::default() };
        let c = mala_sample(&StdNormal(2), &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(c.len(), 20);
        assert_eq!(c.len(), cfg.retained());
        assert!((0.0..=1.0).contains(&c.acceptance_rate));
    }

    #[test]
    fn log_ratio_antisymmetric() {
        let t = StdNormal(3);
        let x = [0.3, -1.2, 0.7];
        let y = [0.1, -0.8, 1.5];
        let (ex, ey) = (t.evaluate(&x).unwrap(), t.evaluate(&y).unwrap());
        for dt in [0.05, 0.3, 1.1] {
            let f = log_acceptance_ratio(&x, &ex, &y, &ey, dt);
            let b = log_acceptance_ratio(&y, &ey, &x, &ex, dt);
            assert!((f + b).abs() < 1e-12, "{f} {b}");
        }
    }

    #[test]
    fn log_ratio_by_hand() {
        // d = 1, J = -x^2/2, x = 1, y = 0, dt = 1:
        // J(y) - J(x) = 0.5; q(x|y): mean 0, q(y|x): mean 0.5
        let t = StdNormal(1);
        let (ex, ey) = (t.evaluate(&[1.0]).unwrap(), t.evaluate(&[0.0]).unwrap());
        let expected = 0.5 + (-0.5 * 1.0) - (-0.5 * 0.25);
        assert!((log_acceptance_ratio(&[1.0], &ex, &[0.0], &ey, 1.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = MalaConfig { total: 3000, burn_in: 100, thin: 10, seed: 5, ..Default::default() };
        let a = mala_sample(&StdNormal(2), &[1.0, -1.0], &cfg).unwrap();
        let b = mala_sample(&StdNormal(2), &[1.0, -1.0], &cfg).unwrap();
        assert_eq!(a, b);
        let c = mala_sample(&StdNormal(2), &[1.0, -1.0], &MalaConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn bad_config_rejected() {
        let t = StdNormal(1);
        for cfg in [
            MalaConfig { dt: 0.0, ..Default::default() },
            MalaConfig { total: 10, burn_in: 10, ..Default::default() },
            MalaConfig { thin: 0, ..Default::default() },
            MalaConfig {
                mirror: Some(MirrorJump { probability: 0.1, coordinate: 3, pivot: 0.5 }),
                ..Default::default()
            },
        ] {
            assert!(matches!(mala_sample(&t, &[0.0], &cfg), Err(Error::Config(_))));
        }
    }

    struct HalfLine;

    impl LogDensity for HalfLine {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&self, w: &[f64]) -> Result<JointEval> {
            if w[0] <= 0.0 {
                return Ok(JointEval::outside_support(1));
            }
            // Exp(1) restricted to x > 0
            Ok(JointEval { value: -w[0], grad: vec![-1.0], hess_diag: vec![0.0] })
        }
    }

    #[test]
    fn never_leaves_support() {
        let cfg = MalaConfig { total: 20_000, burn_in: 0, thin: 1, dt: 0.8, ..Default::default() };
        let c = mala_sample(&HalfLine, &[1.0], &cfg).unwrap();
        assert!(c.samples.iter().all(|s| s[0] > 0.0));
        assert!(c.acceptance_rate < 1.0);
    }

    #[test]
    fn invalid_start_rejected() {
        assert!(mala_sample(&HalfLine, &[-1.0], &MalaConfig::default()).is_err());
    }

    struct TwoBumps;

    impl LogDensity for TwoBumps {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&self, w: &[f64]) -> Result<JointEval> {
            // equal narrow modes at 0.1 and 0.9
            let s2 = 0.02f64 * 0.02;
            let a = -(w[0] - 0.1).powi(2) / (2.0 * s2);
            let b = -(w[0] - 0.9).powi(2) / (2.0 * s2);
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let v = m + (ea + eb).ln();
            let g = (ea * -(w[0] - 0.1) + eb * -(w[0] - 0.9)) / (s2 * (ea + eb));
            Ok(JointEval { value: v, grad: vec![g], hess_diag: vec![0.0] })
        }
    }

    #[test]
    fn mirror_jumps_visit_both_modes() {
        let base = MalaConfig { total: 20_000, burn_in: 0, thin: 10, dt: 0.02, ..Default::default() };
        let stuck = mala_sample(&TwoBumps, &[0.1], &base).unwrap();
        assert!(stuck.samples.iter().all(|s| s[0] < 0.5));
        assert!(stuck.mirror_acceptance_rate.is_none());

        let cfg = MalaConfig {
            mirror: Some(MirrorJump { probability: 0.1, coordinate: 0, pivot: 0.5 }),
            ..base
        };
        let c = mala_sample(&TwoBumps, &[0.1], &cfg).unwrap();
        let right = c.samples.iter().filter(|s| s[0] > 0.5).count() as f64 / c.len() as f64;
        assert!((right - 0.5).abs() < 0.1, "{right}");
        assert!(c.mirror_acceptance_rate.unwrap() > 0.9);
    }
}
