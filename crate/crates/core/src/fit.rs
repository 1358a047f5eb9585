//! Three-step coordinate ascent on the approximate ELBO.
//!
//! Every sweep (1) moves all component means jointly to maximize `F_0`,
//! (2) relinearizes the joint density at the new means, (3) maximizes `F_2`
//! over the weights through a softmax parameterization and (4) maximizes `F_2`
//! over the diagonal variances inside their box. Sweeps stop when `F_2`
//! changes by less than the tolerance. Several random initializations are
//! run and the one with the largest final `F_2` is returned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::elbo::{elbo, elbo_grad, Block, ComponentLinearization, TaylorOrder};
use crate::error::{check_dim, Error, Result};
use crate::joint::LogDensity;
use crate::mixture::{MixtureState, VarianceBounds};
use crate::optim::{minimize, Bounds, LbfgsbOptions};

/// How component means are drawn at the start of each restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanInit {
    /// Independent normal draws per coordinate.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// Uniform draws in a box.
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
    /// The same means for every restart.
    Fixed(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub components: usize,
    /// Convergence threshold on the change of `F_2` between sweeps.
    pub tolerance: f64,
    pub variance_bounds: VarianceBounds,
    /// Optional box on every component mean (one entry per parameter).
    pub mean_bounds: Option<Bounds>,
    pub max_sweeps: usize,
    pub inner: LbfgsbOptions,
    pub seed: u64,
    pub restarts: usize,
    pub init: Option<MeanInit>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            components: 1,
            tolerance: 1e-2,
            variance_bounds: VarianceBounds::default(),
            mean_bounds: None,
            max_sweeps: 100,
            inner: LbfgsbOptions::default(),
            seed: 0,
            restarts: 5,
            init: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.components == 0 {
            return Err(Error::Config("need at least one component".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if !(self.variance_bounds.lo > 0.0 && self.variance_bounds.lo <= self.variance_bounds.hi) {
            return Err(Error::Config("variance bounds must satisfy 0 < lo <= hi".into()));
        }
        if self.restarts == 0 || self.max_sweeps == 0 {
            return Err(Error::Config("restarts and max_sweeps must be positive".into()));
        }
        if let Some(b) = &self.mean_bounds {
            check_dim(dim, b.len())?;
            Bounds::new(b.lower.clone(), b.upper.clone())?;
        }
        match &self.init {
            Some(MeanInit::Gaussian { mean, std }) => {
                check_dim(dim, mean.len())?;
                check_dim(dim, std.len())?;
            }
            Some(MeanInit::Uniform { lower, upper }) => {
                check_dim(dim, lower.len())?;
                check_dim(dim, upper.len())?;
            }
            Some(MeanInit::Fixed(m)) => {
                check_dim(self.components, m.len())?;
                for row in m {
                    check_dim(dim, row.len())?;
                }
            }
            None => {}
        }
        Ok(())
    }
}

/// Objective values around the three steps of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub f0_before_means: f64,
    pub f0_after_means: f64,
    pub f2_before_weights: f64,
    pub f2_after_weights: f64,
    pub f2_after_variances: f64,
    /// Forward bundles used by this restart up to the end of the sweep.
    pub forward_evals: usize,
}

impl SweepRecord {
    /// True when no step lowered its own objective by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.f0_after_means >= self.f0_before_means - slack
            && self.f2_after_weights >= self.f2_before_weights - slack
            && self.f2_after_variances >= self.f2_after_weights - slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub final_f2: Option<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub forward_evals: usize,
    pub error: Option<String>,
    /// Every sweep of this restart.
    pub records: Vec<SweepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub state: MixtureState,
    pub initial_f2: f64,
    /// `F_2` at the end of every sweep of the chosen restart.
    pub trace: Vec<f64>,
    pub sweeps: Vec<SweepRecord>,
    /// Forward bundles used by the chosen restart.
    pub forward_evals: usize,
    /// Forward bundles used by all restarts together.
    pub total_forward_evals: usize,
    pub converged: bool,
    pub restart: usize,
    pub restarts: Vec<RestartSummary>,
}

impl FitReport {
    pub fn final_f2(&self) -> f64 {
        *self.trace.last().unwrap_or(&self.initial_f2)
    }
}

struct RunResult {
    state: MixtureState,
    initial_f2: f64,
    trace: Vec<f64>,
    sweeps: Vec<SweepRecord>,
    converged: bool,
}

/// Runs every restart and returns the one with the largest final `F_2`.
pub fn fit(density: &dyn LogDensity, cfg: &FitConfig) -> Result<FitReport> {
    let dim = density.dim();
    cfg.validate(dim)?;
    let start_evals = density.forward_evals();
    let mut best: Option<(usize, RunResult, usize)> = None;
    let mut summaries = Vec::with_capacity(cfg.restarts);

    for r in 0..cfg.restarts {
        let before = density.forward_evals();
        let outcome = initial_means(cfg, dim, r).and_then(|m| run_single(density, cfg, m));
        let used = density.forward_evals() - before;
        match outcome {
            Ok(run) if run.trace.last().is_some_and(|f| f.is_finite()) => {
                let f2 = *run.trace.last().unwrap();
                summaries.push(RestartSummary {
                    index: r,
                    final_f2: Some(f2),
                    converged: run.converged,
                    sweeps: run.sweeps.len(),
                    forward_evals: used,
                    error: None,
                    records: run.sweeps.clone(),
                });
                let better = best.as_ref().map_or(true, |(_, b, _)| f2 > *b.trace.last().unwrap());
                if better {
                    best = Some((r, run, used));
                }
            }
            Ok(run) => summaries.push(RestartSummary {
                index: r,
                final_f2: None,
                converged: false,
                sweeps: run.sweeps.len(),
                forward_evals: used,
                error: Some("non-finite F2".into()),
                records: run.sweeps,
            }),
            Err(e) => summaries.push(RestartSummary {
                index: r,
                final_f2: None,
                converged: false,
                sweeps: 0,
                forward_evals: used,
                error: Some(e.to_string()),
                records: Vec::new(),
            }),
        }
    }

    let (restart, run, used) = best.ok_or(Error::AllRestartsDiverged(cfg.restarts))?;
    Ok(FitReport {
        state: run.state,
        initial_f2: run.initial_f2,
        trace: run.trace,
        sweeps: run.sweeps,
        forward_evals: used,
        total_forward_evals: density.forward_evals() - start_evals,
        converged: run.converged,
        restart,
        restarts: summaries,
    })
}

fn initial_means(cfg: &FitConfig, dim: usize, restart: usize) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let l = cfg.components;
    let mut means: Vec<Vec<f64>> = match &cfg.init {
        Some(MeanInit::Fixed(m)) => m.clone(),
        Some(MeanInit::Gaussian { mean, std }) => (0..l)
            .map(|_| {
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect(),
        Some(MeanInit::Uniform { lower, upper }) => (0..l)
            .map(|_| lower.iter().zip(upper).map(|(a, b)| a + (b - a) * rng.gen::<f64>()).collect())
            .collect(),
        // uniform on coordinates with a finite box, standard normal elsewhere
        None => (0..l)
            .map(|_| {
                (0..dim)
                    .map(|j| match &cfg.mean_bounds {
                        Some(b) if b.lower[j].is_finite() && b.upper[j].is_finite() => {
                            b.lower[j] + (b.upper[j] - b.lower[j]) * rng.gen::<f64>()
                        }
                        _ => rng.sample::<f64, _>(StandardNormal),
                    })
                    .collect()
            })
            .collect(),
    };
    if let Some(b) = &cfg.mean_bounds {
        means.iter_mut().for_each(|m| b.project(m));
    }
    Ok(means)
}

fn run_single(density: &dyn LogDensity, cfg: &FitConfig, means: Vec<Vec<f64>>) -> Result<RunResult> {
    let l = means.len();
    let d = density.dim();
    let start_evals = density.forward_evals();
    let v0 = cfg.variance_bounds.clamp(1.0);
    let mut q = MixtureState::new(vec![1.0 / l as f64; l], means, vec![vec![v0; d]; l])?;
    let mut lin = ComponentLinearization::at_means(density, &q)?;
    let initial_f2 = elbo(&q, &lin, TaylorOrder::Second)?;
    if !initial_f2.is_finite() {
        return Err(Error::NonFinite("F2 at the initial state".into()));
    }

    let mean_bounds = match &cfg.mean_bounds {
        Some(b) => Bounds::new(b.lower.repeat(l), b.upper.repeat(l))?,
        None => Bounds::unbounded(l * d),
    };
    let var_bounds = Bounds::uniform(l * d, cfg.variance_bounds.lo, cfg.variance_bounds.hi);

    let mut trace = Vec::new();
    let mut sweeps = Vec::new();
    let mut previous = initial_f2;
    let mut converged = false;

    for sweep in 1..=cfg.max_sweeps {
        // means: maximize F0
        let f0_before_means = elbo(&q, &lin, TaylorOrder::Zero)?;
        let x0 = q.flat_means();
        let best = minimize(
            |x| {
                let s = q.with_means(unflatten(x, d))?;
                match ComponentLinearization::at_means(density, &s) {
                    Ok(lin) => {
                        let f = elbo(&s, &lin, TaylorOrder::Zero)?;
                        let g = elbo_grad(&s, &lin, TaylorOrder::Zero, Block::Means)?;
                        Ok((-f, g.into_iter().map(|v| -v).collect()))
                    }
                    Err(Error::OutsideSupport(_) | Error::NonFinite(_)) => Ok((f64::INFINITY, vec![0.0; x.len()])),
                    Err(e) => Err(e),
                }
            },
            &x0,
            &mean_bounds,
            &cfg.inner,
        )?;
        q = q.with_means(unflatten(&best.x, d))?;
        lin = ComponentLinearization::at_means(density, &q)?;
        let f0_after_means = elbo(&q, &lin, TaylorOrder::Zero)?;

        // weights: maximize F2 over the simplex via softmax
        let f2_before_weights = elbo(&q, &lin, TaylorOrder::Second)?;
        if l > 1 {
            let z0: Vec<f64> = q.weights().iter().map(|w| w.max(1e-300).ln()).collect();
            let best = minimize(
                |z| {
                    let s = q.with_weights(softmax(z))?;
                    let f = elbo(&s, &lin, TaylorOrder::Second)?;
                    let g = elbo_grad(&s, &lin, TaylorOrder::Second, Block::Weights)?;
                    let w = s.weights();
                    let avg: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
                    Ok((-f, w.iter().zip(&g).map(|(wk, gk)| -wk * (gk - avg)).collect()))
                },
                &z0,
                &Bounds::unbounded(l),
                &cfg.inner,
            )?;
            let candidate = q.with_weights(softmax(&best.x))?;
            if elbo(&candidate, &lin, TaylorOrder::Second)? >= f2_before_weights {
                q = candidate;
            }
        }
        let f2_after_weights = elbo(&q, &lin, TaylorOrder::Second)?;

        // variances: maximize F2 inside the variance box
        let best = minimize(
            |x| {
                let s = q.with_variances(unflatten(x, d))?;
                let f = elbo(&s, &lin, TaylorOrder::Second)?;
                let g = elbo_grad(&s, &lin, TaylorOrder::Second, Block::Variances)?;
                Ok((-f, g.into_iter().map(|v| -v).collect()))
            },
            &q.flat_variances(),
            &var_bounds,
            &cfg.inner,
        )?;
        q = q.with_variances(unflatten(&best.x, d))?;
        let f2_after_variances = elbo(&q, &lin, TaylorOrder::Second)?;

        sweeps.push(SweepRecord {
            sweep,
            f0_before_means,
            f0_after_means,
            f2_before_weights,
            f2_after_weights,
            f2_after_variances,
            forward_evals: density.forward_evals() - start_evals,
        });
        trace.push(f2_after_variances);
        if !f2_after_variances.is_finite() {
            break;
        }
        if (f2_after_variances - previous).abs() < cfg.tolerance {
            converged = true;
            break;
        }
        previous = f2_after_variances;
    }

    Ok(RunResult {
        state: q,
        initial_f2,
        trace,
        sweeps,
        converged,
    })
}

fn unflatten(x: &[f64], d: usize) -> Vec<Vec<f64>> {
    x.chunks(d).map(<[f64]>::to_vec).collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}
