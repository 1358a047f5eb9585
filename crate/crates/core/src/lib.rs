//! Gaussian-mixture variational inference for Bayesian inverse problems.
//!
//! The posterior over `omega = (xi, theta)` is approximated by a mixture of
//! diagonal Gaussians chosen to maximize an analytic approximation of the
//! evidence lower bound: a Jensen bound on the mixture entropy plus a
//! second-order Taylor expansion of the log-joint around each component mean.
//! A Langevin MCMC sampler is included as a reference, together with two
//! forward models (a chemical-kinetics ODE and a 2D diffusion source problem).

pub mod elbo;
pub mod error;
pub mod fit;
pub mod joint;
pub mod mcmc;
pub mod mixture;
pub mod ode;
pub mod models;
pub mod optim;
pub mod summary;

pub use error::{Error, Result};
pub use fit::{fit, FitConfig, FitReport, MeanInit};
pub use joint::{JointDensityModel, LogDensity};
pub use mixture::{MixtureState, VarianceBounds};
