//! Nitrate reduction kinetics.
//!
//! Six scaled concentrations `u = (NO3-, NO2-, X, N2, NH3, N2O) / 500` evolve
//! in scaled time `tau = t / 180 min` under five first-order reactions with
//! scaled rates `kappa_j = exp(xi_j)`:
//!
//! ```text
//! u1' = -k1 u1
//! u2' =  k1 u1 - (k2 + k4 + k5) u2
//! u3' =  k2 u2 - k3 u3
//! u4' =  k3 u3
//! u5' =  k4 u2
//! u6' =  k5 u2
//! ```
//!
//! The observed species are all but X, at `tau = 1/6, ..., 1`.

use crate::error::{check_dim, Error, Result};
use crate::joint::{ForwardModel, ForwardOutput, GaussianPrior, IsotropicGaussian, JointDensityModel};
use crate::ode::{integrate, OdeOptions};

pub const SPECIES: usize = 6;
pub const REACTIONS: usize = 5;
/// Indices of the observed species within `u`.
pub const OBSERVED: [usize; 5] = [0, 1, 3, 4, 5];
/// Concentration scale in mmol/L.
pub const CONCENTRATION_SCALE: f64 = 500.0;
/// Time scale in minutes.
pub const TIME_SCALE: f64 = 180.0;

// reaction j consumes SOURCE[j] and produces TARGET[j]
const SOURCE: [usize; REACTIONS] = [0, 1, 2, 1, 1];
const TARGET: [usize; REACTIONS] = [1, 2, 3, 4, 5];

const TABLE: &str = include_str!("../../data/catalysis_table1.csv");

/// The measured concentrations, scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalysisData {
    /// Scaled measurement times.
    pub times: Vec<f64>,
    /// Scaled initial state.
    pub initial: Vec<f64>,
    /// Observations concatenated time-major, observed species within each time.
    pub y: Vec<f64>,
}

impl CatalysisData {
    /// The bundled experimental table.
    pub fn table1() -> Self {
        Self::parse(TABLE).expect("bundled catalysis table is well formed")
    }

    /// Also observe the initial state at `tau = 0`, giving 35 observations.
    /// The residuals there are zero for every `xi`, so this only changes the
    /// noise posterior and, through it, the spread of `xi`.
    pub fn with_initial_row(mut self) -> Self {
        if self.times.first() == Some(&0.0) {
            return self;
        }
        self.times.insert(0, 0.0);
        let mut y: Vec<f64> = OBSERVED.iter().map(|&i| self.initial[i]).collect();
        y.extend_from_slice(&self.y);
        self.y = y;
        self
    }

    /// Parse a table with columns `t_min, NO3-, NO2-, X, N2, NH3, N2O`.
    /// The first row is the initial condition; `-` marks a missing value.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 1 + SPECIES {
                return Err(Error::Config(format!("line {}: expected {} fields", lineno + 1, 1 + SPECIES)));
            }
            let parse = |s: &str| -> Result<Option<f64>> {
                if s == "-" {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))
            };
            let t = parse(fields[0])?.ok_or_else(|| Error::Config("missing time".into()))?;
            let mut vals = Vec::with_capacity(SPECIES);
            for f in &fields[1..] {
                vals.push(parse(f)?);
            }
            rows.push((t, vals));
        }
        let Some(((t0, first), rest)) = rows.split_first() else {
            return Err(Error::Config("empty table".into()));
        };
        if *t0 != 0.0 {
            return Err(Error::Config("first row must be t = 0".into()));
        }
        let initial = first.iter().map(|v| v.unwrap_or(0.0) / CONCENTRATION_SCALE).collect();
        let mut times = Vec::new();
        let mut y = Vec::new();
        for (t, vals) in rest {
            times.push(t / TIME_SCALE);
            for &s in &OBSERVED {
                let v = vals[s].ok_or_else(|| Error::Config(format!("missing observed value at t = {t}")))?;
                y.push(v / CONCENTRATION_SCALE);
            }
        }
        Ok(Self { times, initial, y })
    }
}

fn rates(xi: &[f64]) -> Vec<f64> {
    xi.iter().map(|x| x.exp()).collect()
}

// out += kappa * (reaction j applied to x)
#[inline]
fn add_reaction(j: usize, kappa: f64, x: &[f64], out: &mut [f64]) {
    let flux = kappa * x[SOURCE[j]];
    out[SOURCE[j]] -= flux;
    out[TARGET[j]] += flux;
}

fn apply_k(kappa: &[f64], x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, &k) in kappa.iter().enumerate() {
        add_reaction(j, k, x, out);
    }
}

/// Scaled concentrations at `times` for rate constants `kappa` (not logged),
/// so that zero rates can be represented.
pub fn solve_kinetics_rates(kappa: &[f64], u0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>> {
    check_dim(REACTIONS, kappa.len())?;
    check_dim(SPECIES, u0.len())?;
    integrate(|_, u, du| apply_k(kappa, u, du), 0.0, u0, times, opts)
}

/// Scaled concentrations at `times` for log rates `xi`, starting from pure nitrate.
pub fn solve_kinetics(xi: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_dim(REACTIONS, xi.len())?;
    if xi.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("log rates must be finite".into()));
    }
    solve_kinetics_rates(&rates(xi), &initial_state(), times, &OdeOptions::default())
}

pub fn initial_state() -> Vec<f64> {
    let mut u = vec![0.0; SPECIES];
    u[0] = 1.0;
    u
}

/// States, first and diagonal second log-rate sensitivities at `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticsSensitivities {
    /// `u[k][i]`
    pub u: Vec<Vec<f64>>,
    /// `du_i / dxi_j` as `v[k][j][i]`
    pub v: Vec<Vec<Vec<f64>>>,
    /// `d^2 u_i / dxi_j^2` as `w[k][j][i]`
    pub w: Vec<Vec<Vec<f64>>>,
}

/// Integrate the state together with its sensitivities.
///
/// With `u' = K u` and `dK/dxi_j = kappa_j G_j`:
/// `v_j' = K v_j + kappa_j G_j u` and
/// `w_j' = K w_j + 2 kappa_j G_j v_j + kappa_j G_j u`, all starting at zero.
pub fn solve_sensitivities(xi: &[f64], u0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<KineticsSensitivities> {
    check_dim(REACTIONS, xi.len())?;
    check_dim(SPECIES, u0.len())?;
    if xi.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("log rates must be finite".into()));
    }
    let kappa = rates(xi);
    const N: usize = SPECIES * (1 + 2 * REACTIONS);
    let mut y0 = vec![0.0; N];
    y0[..SPECIES].copy_from_slice(u0);

    let rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
        let (u, rest) = y.split_at(SPECIES);
        let (v, w) = rest.split_at(SPECIES * REACTIONS);
        let (du, drest) = dy.split_at_mut(SPECIES);
        let (dv, dw) = drest.split_at_mut(SPECIES * REACTIONS);
        apply_k(&kappa, u, du);
        for j in 0..REACTIONS {
            let vj = &v[j * SPECIES..(j + 1) * SPECIES];
            let wj = &w[j * SPECIES..(j + 1) * SPECIES];
            let dvj = &mut dv[j * SPECIES..(j + 1) * SPECIES];
            apply_k(&kappa, vj, dvj);
            add_reaction(j, kappa[j], u, dvj);
            let dwj = &mut dw[j * SPECIES..(j + 1) * SPECIES];
            apply_k(&kappa, wj, dwj);
            add_reaction(j, 2.0 * kappa[j], vj, dwj);
            add_reaction(j, kappa[j], u, dwj);
        }
    };
    let sol = integrate(rhs, 0.0, &y0, times, opts)?;

    let split = |y: &[f64], offset: usize| -> Vec<Vec<f64>> {
        (0..REACTIONS)
            .map(|j| y[offset + j * SPECIES..offset + (j + 1) * SPECIES].to_vec())
            .collect()
    };
    Ok(KineticsSensitivities {
        u: sol.iter().map(|y| y[..SPECIES].to_vec()).collect(),
        v: sol.iter().map(|y| split(y, SPECIES)).collect(),
        w: sol.iter().map(|y| split(y, SPECIES * (1 + REACTIONS))).collect(),
    })
}

/// The observation map `xi -> (u_obs(tau_1), ..., u_obs(tau_6))`, length 30.
#[derive(Debug, Clone)]
pub struct KineticsForward {
    pub times: Vec<f64>,
    pub initial: Vec<f64>,
    pub ode: OdeOptions,
}

impl KineticsForward {
    pub fn new(data: &CatalysisData) -> Self {
        Self {
            times: data.times.clone(),
            initial: data.initial.clone(),
            ode: OdeOptions::default(),
        }
    }
}

impl Default for KineticsForward {
    fn default() -> Self {
        Self::new(&CatalysisData::table1())
    }
}

impl ForwardModel for KineticsForward {
    fn input_dim(&self) -> usize {
        REACTIONS
    }

    fn output_dim(&self) -> usize {
        self.times.len() * OBSERVED.len()
    }

    fn evaluate(&self, xi: &[f64]) -> Result<ForwardOutput> {
        let s = solve_sensitivities(xi, &self.initial, &self.times, &self.ode)?;
        let dy = self.output_dim();
        let mut value = Vec::with_capacity(dy);
        let mut jacobian = Vec::with_capacity(dy);
        let mut hess_diag = Vec::with_capacity(dy);
        for k in 0..self.times.len() {
            for &i in &OBSERVED {
                value.push(s.u[k][i]);
                jacobian.push((0..REACTIONS).map(|j| s.v[k][j][i]).collect());
                hess_diag.push((0..REACTIONS).map(|j| s.w[k][j][i]).collect());
            }
        }
        Ok(ForwardOutput { value, jacobian, hess_diag })
    }

    fn value(&self, xi: &[f64]) -> Result<Vec<f64>> {
        check_dim(REACTIONS, xi.len())?;
        if xi.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("log rates must be finite".into()));
        }
        let sol = solve_kinetics_rates(&rates(xi), &self.initial, &self.times, &self.ode)?;
        Ok(sol
            .iter()
            .flat_map(|u| OBSERVED.iter().map(move |&i| u[i]))
            .collect())
    }
}

/// Prior on each log rate: `N(0, 1)`.
pub const XI_PRIOR: (f64, f64) = (0.0, 1.0);
/// Prior on the log noise: `N(-1, 1)`.
pub const THETA_PRIOR: (f64, f64) = (-1.0, 1.0);

/// The full calibration problem over `omega = (xi_1..xi_5, theta)`.
pub fn joint_model(data: &CatalysisData) -> Result<JointDensityModel> {
    JointDensityModel::new(
        Box::new(KineticsForward::new(data)),
        Box::new(IsotropicGaussian::inferred()),
        Box::new(GaussianPrior::iid(REACTIONS, XI_PRIOR.0, XI_PRIOR.1)),
        Box::new(GaussianPrior::iid(1, THETA_PRIOR.0, THETA_PRIOR.1)),
        data.y.clone(),
    )
}

/// Rate constant in 1/min from a log scaled rate.
pub fn rate_per_minute(xi: f64) -> f64 {
    xi.exp() / TIME_SCALE
}
