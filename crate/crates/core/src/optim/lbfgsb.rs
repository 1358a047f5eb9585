//! Limited-memory BFGS with simple box constraints.
//!
//! Each iteration fixes the variables that sit on a bound with the gradient
//! pushing outward (an epsilon-active set), builds the two-loop quasi-Newton
//! direction on the remaining free variables, and backtracks along the
//! projected path `P(x + alpha d)` until the Armijo condition holds. The
//! returned point never has a larger objective than the start.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Config("bounds must satisfy lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; n],
            upper: vec![hi; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len() && x.iter().zip(&self.lower).zip(&self.upper).all(|((x, l), u)| x >= l && x <= u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((x, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.clamp(*l, *u);
        }
    }

    /// Infinity norm of `x - P(x - g)`.
    pub fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((x, g), (l, u))| (x - (x - g).clamp(*l, *u)).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsbOptions {
    /// Number of correction pairs kept.
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the projected gradient infinity norm falls below this.
    pub pg_tol: f64,
    /// Stop once the relative decrease of one iteration falls below this.
    pub f_rel_tol: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 500,
            pg_tol: 1e-5,
            f_rel_tol: 1e-14,
            max_line_search: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ProjectedGradient,
    FunctionTolerance,
    IterationCap,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Trial points at which the objective was not finite (each one was backtracked).
    pub non_finite_trials: usize,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::ProjectedGradient | Termination::FunctionTolerance)
    }
}

const ARMIJO_C1: f64 = 1e-4;

/// Minimizes `objective` (returning value and gradient) over `bounds` from `x0`.
pub fn minimize<F>(mut objective: F, x0: &[f64], bounds: &Bounds, opts: &LbfgsbOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    check_dim(bounds.len(), x0.len())?;
    if !bounds.contains(x0) {
        return Err(Error::Infeasible(format!("{x0:?} violates the bounds")));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x)?;
    let mut evaluations = 1;
    let mut non_finite_trials = 0;
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("objective at start point is {f}")));
    }
    check_dim(n, g.len())?;

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut termination = Termination::IterationCap;

    while iterations < opts.max_iter {
        let pg = bounds.projected_gradient_norm(&x, &g);
        if pg < opts.pg_tol {
            termination = Termination::ProjectedGradient;
            break;
        }
        iterations += 1;

        let eps = pg.min(1e-8);
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lo = x[i] <= bounds.lower[i] + eps && g[i] > 0.0;
                let at_hi = x[i] >= bounds.upper[i] - eps && g[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();

        let mut step = None;
        for attempt in 0..2 {
            let mut d = two_loop(&g, &free, &memory);
            let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) || attempt == 1 {
                memory.clear();
                d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
                slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            }
            if !(slope < 0.0) {
                break;
            }
            let alpha0 = if memory.is_empty() {
                let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                (1.0 / dn).min(1.0)
            } else {
                1.0
            };
            match line_search(&mut objective, &x, f, &g, &d, alpha0, bounds, opts.max_line_search)? {
                LineResult::Accepted { x: xt, f: ft, g: gt, evals, bad } => {
                    evaluations += evals;
                    non_finite_trials += bad;
                    step = Some((xt, ft, gt));
                    break;
                }
                LineResult::Failed { evals, bad } => {
                    evaluations += evals;
                    non_finite_trials += bad;
                    if memory.is_empty() {
                        break;
                    }
                }
            }
        }

        let Some((xt, ft, gt)) = step else {
            termination = Termination::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > f64::EPSILON * yy && sy > 0.0 {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y));
        }
        let decrease = f - ft;
        x = xt;
        g = gt;
        let scale = f.abs().max(ft.abs()).max(1.0);
        f = ft;
        if decrease <= opts.f_rel_tol * scale {
            termination = if bounds.projected_gradient_norm(&x, &g) < opts.pg_tol {
                Termination::ProjectedGradient
            } else {
                Termination::FunctionTolerance
            };
            break;
        }
    }

    Ok(Minimum {
        x,
        f,
        grad: g,
        iterations,
        evaluations,
        termination,
        non_finite_trials,
    })
}

/// `-H g` restricted to the free coordinates.
fn two_loop(g: &[f64], free: &[bool], memory: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let dot_free = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(free).filter(|(_, f)| **f).map(|((a, b), _)| a * b).sum()
    };
    let mut q: Vec<f64> = g.iter().zip(free).map(|(g, f)| if *f { *g } else { 0.0 }).collect();
    let pairs: Vec<(&Vec<f64>, &Vec<f64>, f64)> = memory
        .iter()
        .filter_map(|(s, y)| {
            let sy = dot_free(s, y);
            (sy > 0.0).then(|| (s, y, 1.0 / sy))
        })
        .collect();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot_free(s, &q);
        for i in 0..q.len() {
            if free[i] {
                q[i] -= a * y[i];
            }
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.last() {
        let gamma = dot_free(s, y) / dot_free(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot_free(y, &q);
        for i in 0..q.len() {
            if free[i] {
                q[i] += s[i] * (a - b);
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

enum LineResult {
    Accepted { x: Vec<f64>, f: f64, g: Vec<f64>, evals: usize, bad: usize },
    Failed { evals: usize, bad: usize },
}

#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    alpha0: f64,
    bounds: &Bounds,
    max_steps: usize,
) -> Result<LineResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut alpha = alpha0;
    let mut evals = 0;
    let mut bad = 0;
    for _ in 0..max_steps {
        let mut xt: Vec<f64> = x.iter().zip(d).map(|(x, d)| x + alpha * d).collect();
        bounds.project(&mut xt);
        if xt.as_slice() == x {
            break;
        }
        let (ft, gt) = objective(&xt)?;
        evals += 1;
        let decrease: f64 = g.iter().zip(xt.iter().zip(x)).map(|(g, (a, b))| g * (a - b)).sum();
        if ft.is_finite() && gt.iter().all(|v| v.is_finite()) {
            if ft <= f + ARMIJO_C1 * decrease {
                return Ok(LineResult::Accepted { x: xt, f: ft, g: gt, evals, bad });
            }
            // safeguarded quadratic model along the step
            let denom = 2.0 * (ft - f - decrease);
            let next = if denom > 0.0 { -decrease / denom * alpha } else { 0.5 * alpha };
            alpha = next.clamp(0.1 * alpha, 0.5 * alpha);
        } else {
            bad += 1;
            alpha *= 0.25;
        }
    }
    Ok(LineResult::Failed { evals, bad })
}
