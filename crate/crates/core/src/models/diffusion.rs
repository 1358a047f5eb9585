//! Contaminant source identification on the unit square.
//!
//! `u_t = lap(u) + g(x; xi) 1[t <= T_s]` with zero-flux boundaries and zero
//! initial state, where `g = g0 exp(-|x - xi|^2 / (2 rho^2))`.
//!
//! Space is discretized with `n x n` cell-centered finite volumes. The
//! Neumann five-point operator is diagonalized by the 2D DCT-II, so implicit
//! Euler steps are taken mode by mode. The source is separable in `x` and
//! `y`, which makes a full value-plus-derivatives bundle a handful of
//! `O(n^2)` sums.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::joint::{ForwardModel, ForwardOutput, GaussianPrior, IsotropicGaussian, JointDensityModel, UniformBoxPrior};

/// Sensor placements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorLayout {
    /// `(0,0), (1,0), (0,1), (1,1)`
    Corners,
    /// `(0.5,0), (0.5,1)`
    Midpoints,
}

impl SensorLayout {
    pub fn sensors(self) -> Vec<[f64; 2]> {
        match self {
            SensorLayout::Corners => vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            SensorLayout::Midpoints => vec![[0.5, 0.0], [0.5, 1.0]],
        }
    }
}

/// Which right-hand side drives a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forcing {
    Source,
    /// `dg/dxi_i`
    First(usize),
    /// `d^2 g / dxi_i^2`
    Second(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionProblem {
    /// Cells per side.
    pub grid: usize,
    pub rho: f64,
    pub strength: f64,
    pub shutoff: f64,
    pub dt: f64,
    /// Measurement times; each must be a multiple of `dt`.
    pub times: Vec<f64>,
    pub sensors: Vec<[f64; 2]>,
}

impl Default for DiffusionProblem {
    fn default() -> Self {
        let rho = 0.05;
        Self {
            grid: 25,
            rho,
            strength: 1.0 / (PI * rho),
            shutoff: 0.3,
            dt: 0.0025,
            times: (1..=4).map(|k| 0.075 * k as f64).collect(),
            sensors: SensorLayout::Corners.sensors(),
        }
    }
}

impl DiffusionProblem {
    pub fn with_layout(grid: usize, layout: SensorLayout) -> Self {
        Self {
            grid,
            sensors: layout.sensors(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::Config("grid needs at least 2 cells per side".into()));
        }
        if !(self.rho > 0.0) || !(self.dt > 0.0) || !self.strength.is_finite() || !(self.shutoff >= 0.0) {
            return Err(Error::Config("rho and dt must be positive, strength finite, shutoff >= 0".into()));
        }
        if self.times.is_empty() {
            return Err(Error::Config("no measurement times".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("measurement times must be increasing".into()));
        }
        for &t in &self.times {
            let steps = t / self.dt;
            if !(t > 0.0) || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                return Err(Error::Config(format!("measurement time {t} is not a positive multiple of dt")));
            }
        }
        for s in &self.sensors {
            if s.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Config(format!("sensor {s:?} outside the unit square")));
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.sensors.len() * self.times.len()
    }
}

/// Precomputed spectral data for one problem.
#[derive(Debug, Clone)]
pub struct DiffusionSolver {
    problem: DiffusionProblem,
    h: f64,
    centers: Vec<f64>,
    // orthonormal DCT-II basis, basis[k][i]
    basis: Vec<Vec<f64>>,
    // 1D eigenvalues of the Neumann second difference
    eig: Vec<f64>,
    // response[m][k * n + l]: modal amplitude at times[m] for unit modal forcing
    response: Vec<Vec<f64>>,
    // sensor_basis[s] = (phi_x[k], phi_y[l]) after bilinear interpolation
    sensor_basis: Vec<(Vec<f64>, Vec<f64>)>,
}

impl DiffusionSolver {
    pub fn new(problem: DiffusionProblem) -> Result<Self> {
        problem.validate()?;
        let n = problem.grid;
        let h = 1.0 / n as f64;
        let centers: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
        let basis: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                (0..n)
                    .map(|i| a * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos())
                    .collect()
            })
            .collect();
        let eig: Vec<f64> = (0..n)
            .map(|k| {
                let s = (PI * k as f64 / (2.0 * n as f64)).sin();
                -4.0 * s * s / (h * h)
            })
            .collect();

        let dt = problem.dt;
        let last_step = (problem.times[problem.times.len() - 1] / dt).round() as usize;
        let mut state = vec![0.0; n * n];
        let denom: Vec<f64> = (0..n * n).map(|kl| 1.0 - dt * (eig[kl / n] + eig[kl % n])).collect();
        let mut response = Vec::with_capacity(problem.times.len());
        let mut next = 0;
        for step in 1..=last_step {
            let t = step as f64 * dt;
            let on = if t <= problem.shutoff * (1.0 + 1e-12) { dt } else { 0.0 };
            for (s, d) in state.iter_mut().zip(&denom) {
                *s = (*s + on) / d;
            }
            while next < problem.times.len() && (problem.times[next] / dt).round() as usize == step {
                response.push(state.clone());
                next += 1;
            }
        }

        let sensor_basis = problem
            .sensors
            .iter()
            .map(|s| (interpolated_basis(&basis, h, s[0]), interpolated_basis(&basis, h, s[1])))
            .collect();

        Ok(Self {
            problem,
            h,
            centers,
            basis,
            eig,
            response,
            sensor_basis,
        })
    }

    pub fn problem(&self) -> &DiffusionProblem {
        &self.problem
    }

    pub fn cell_centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn cell_size(&self) -> f64 {
        self.h
    }

    /// Eigenvalues of the 1D Neumann second-difference operator.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig
    }

    fn check_source(&self, xi: &[f64]) -> Result<()> {
        check_dim(2, xi.len())?;
        if xi.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::OutsideSupport(format!("source {xi:?} outside the unit square")));
        }
        Ok(())
    }

    // separable factors of the forcing on the cell centers, (x factor, y factor)
    fn forcing_factors(&self, xi: &[f64], forcing: Forcing) -> (Vec<f64>, Vec<f64>) {
        let rho2 = self.problem.rho * self.problem.rho;
        let bump = |c: f64| -> Vec<f64> {
            self.centers
                .iter()
                .map(|&x| (-(x - c) * (x - c) / (2.0 * rho2)).exp())
                .collect()
        };
        let d1 = |c: f64| -> Vec<f64> {
            self.centers
                .iter()
                .map(|&x| (-(x - c) * (x - c) / (2.0 * rho2)).exp() * (x - c) / rho2)
                .collect()
        };
        let d2 = |c: f64| -> Vec<f64> {
            self.centers
                .iter()
                .map(|&x| {
                    let r = x - c;
                    (-r * r / (2.0 * rho2)).exp() * (r * r / (rho2 * rho2) - 1.0 / rho2)
                })
                .collect()
        };
        let (mut gx, gy) = match forcing {
            Forcing::Source => (bump(xi[0]), bump(xi[1])),
            Forcing::First(0) => (d1(xi[0]), bump(xi[1])),
            Forcing::First(_) => (bump(xi[0]), d1(xi[1])),
            Forcing::Second(0) => (d2(xi[0]), bump(xi[1])),
            Forcing::Second(_) => (bump(xi[0]), d2(xi[1])),
        };
        gx.iter_mut().for_each(|v| *v *= self.problem.strength);
        (gx, gy)
    }

    fn transform_1d(&self, f: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Forcing sampled on the cells, `g[i][j]` at `(x_i, y_j)`.
    pub fn forcing_field(&self, xi: &[f64], forcing: Forcing) -> Result<Vec<Vec<f64>>> {
        self.check_source(xi)?;
        check_forcing(forcing)?;
        let (gx, gy) = self.forcing_factors(xi, forcing);
        Ok(gx.iter().map(|a| gy.iter().map(|b| a * b).collect()).collect())
    }

    /// Cell values at every measurement time, `field[m][i][j]`.
    pub fn solve(&self, xi: &[f64], forcing: Forcing) -> Result<Vec<Vec<Vec<f64>>>> {
        self.check_source(xi)?;
        check_forcing(forcing)?;
        let n = self.problem.grid;
        let (gx, gy) = self.forcing_factors(xi, forcing);
        let (ax, ay) = (self.transform_1d(&gx), self.transform_1d(&gy));
        let mut out = Vec::with_capacity(self.response.len());
        for resp in &self.response {
            // U = B^T (a_x a_y^T .* R) B
            let mut tmp = vec![vec![0.0; n]; n]; // tmp[k][j] = sum_l M[k][l] B[l][j]
            for k in 0..n {
                for l in 0..n {
                    let m = ax[k] * ay[l] * resp[k * n + l];
                    if m == 0.0 {
                        continue;
                    }
                    for (t, b) in tmp[k].iter_mut().zip(&self.basis[l]) {
                        *t += m * b;
                    }
                }
            }
            let mut field = vec![vec![0.0; n]; n];
            for k in 0..n {
                for i in 0..n {
                    let b = self.basis[k][i];
                    for (f, t) in field[i].iter_mut().zip(&tmp[k]) {
                        *f += b * t;
                    }
                }
            }
            out.push(field);
        }
        Ok(out)
    }

    /// Sensor readings for one forcing, ordered time-major, sensors within each time.
    pub fn readings(&self, xi: &[f64], forcing: Forcing) -> Result<Vec<f64>> {
        self.check_source(xi)?;
        check_forcing(forcing)?;
        let (gx, gy) = self.forcing_factors(xi, forcing);
        Ok(self.readings_from_modes(&self.transform_1d(&gx), &self.transform_1d(&gy)))
    }

    fn readings_from_modes(&self, ax: &[f64], ay: &[f64]) -> Vec<f64> {
        let n = self.problem.grid;
        let sx: Vec<(Vec<f64>, Vec<f64>)> = self
            .sensor_basis
            .iter()
            .map(|(px, py)| {
                (
                    px.iter().zip(ax).map(|(p, a)| p * a).collect(),
                    py.iter().zip(ay).map(|(p, a)| p * a).collect(),
                )
            })
            .collect();
        let mut out = Vec::with_capacity(self.problem.output_dim());
        for resp in &self.response {
            for (cx, cy) in &sx {
                let mut acc = 0.0;
                for k in 0..n {
                    let row = &resp[k * n..(k + 1) * n];
                    let inner: f64 = row.iter().zip(cy).map(|(r, c)| r * c).sum();
                    acc += cx[k] * inner;
                }
                out.push(acc);
            }
        }
        out
    }
}

fn check_forcing(forcing: Forcing) -> Result<()> {
    match forcing {
        Forcing::First(i) | Forcing::Second(i) if i > 1 => {
            Err(Error::DimensionMismatch { expected: 2, found: i + 1 })
        }
        _ => Ok(()),
    }
}

// Basis functions evaluated at coordinate s by bilinear interpolation between
// cell centers, with mirrored ghost cells beyond the outermost centers.
fn interpolated_basis(basis: &[Vec<f64>], h: f64, s: f64) -> Vec<f64> {
    let n = basis.len();
    let p = (s / h - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (p.floor() as usize).min(n - 2);
    let frac = p - i0 as f64;
    basis
        .iter()
        .map(|row| (1.0 - frac) * row[i0] + frac * row[i0 + 1])
        .collect()
}

/// Sensor map `xi -> readings` with its Jacobian and diagonal second derivatives.
#[derive(Debug, Clone)]
pub struct DiffusionForward {
    solver: DiffusionSolver,
}

impl DiffusionForward {
    pub fn new(problem: DiffusionProblem) -> Result<Self> {
        Ok(Self {
            solver: DiffusionSolver::new(problem)?,
        })
    }

    pub fn solver(&self) -> &DiffusionSolver {
        &self.solver
    }
}

impl ForwardModel for DiffusionForward {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        self.solver.problem.output_dim()
    }

    fn evaluate(&self, xi: &[f64]) -> Result<ForwardOutput> {
        let s = &self.solver;
        s.check_source(xi)?;
        let modes = |f: Forcing| {
            let (gx, gy) = s.forcing_factors(xi, f);
            s.readings_from_modes(&s.transform_1d(&gx), &s.transform_1d(&gy))
        };
        let value = modes(Forcing::Source);
        let d = [modes(Forcing::First(0)), modes(Forcing::First(1))];
        let dd = [modes(Forcing::Second(0)), modes(Forcing::Second(1))];
        let jacobian = (0..value.len()).map(|r| vec![d[0][r], d[1][r]]).collect();
        let hess_diag = (0..value.len()).map(|r| vec![dd[0][r], dd[1][r]]).collect();
        Ok(ForwardOutput { value, jacobian, hess_diag })
    }

    fn value(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.solver.readings(xi, Forcing::Source)
    }
}

/// Mean box for the source coordinates during fitting.
pub const MEAN_BOX: (f64, f64) = (0.01, 0.99);
/// True source used for synthetic data.
pub const TRUE_SOURCE: [f64; 2] = [0.09, 0.23];
pub const TRUE_NOISE: f64 = 0.05;
pub const TRUTH_GRID: usize = 110;
pub const INFERENCE_GRID: usize = 25;
pub const FAST_TRUTH_GRID: usize = 55;
pub const FAST_INFERENCE_GRID: usize = 15;

/// Noisy readings from a solve at `xi`. `sigma = 0` gives the exact readings.
pub fn synthetic_data(problem: &DiffusionProblem, xi: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::Config("noise level must be nonnegative".into()));
    }
    let clean = DiffusionSolver::new(problem.clone())?.readings(xi, Forcing::Source)?;
    if sigma == 0.0 {
        return Ok(clean);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    Ok(clean.into_iter().map(|v| v + noise.sample(&mut rng)).collect())
}

/// Posterior over `omega = (xi_1, xi_2, theta)`: uniform prior on the unit
/// square for the source, `N(-1, 1)` on the log noise.
pub fn joint_model(problem: DiffusionProblem, y: Vec<f64>) -> Result<JointDensityModel> {
    JointDensityModel::new(
        Box::new(DiffusionForward::new(problem)?),
        Box::new(IsotropicGaussian::inferred()),
        Box::new(UniformBoxPrior::unit(2)),
        Box::new(GaussianPrior::iid(1, -1.0, 1.0)),
        y,
    )
}
