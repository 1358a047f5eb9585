use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use varinv::mcmc::MalaConfig;
use varinv::models::diffusion;
use varinv::models::linear::LinearGaussianProblem;
use varinv::FitConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Catalysis,
    DiffusionCorners,
    DiffusionMidpoints,
    LinearGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Vi,
    Mala,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalysisOptions {
    /// Also observe the known initial state at t = 0.
    pub include_initial_row: bool,
    /// Table in the bundled layout; the bundled table when absent.
    pub data: Option<PathBuf>,
}

impl Default for CatalysisOptions {
    fn default() -> Self {
        Self { include_initial_row: true, data: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionOptions {
    /// Readings written by `make-data`; synthesized in process when absent.
    pub data: Option<PathBuf>,
    pub source: [f64; 2],
    pub noise: f64,
    /// Noise seed for synthetic data; the experiment seed when absent.
    pub data_seed: Option<u64>,
    pub truth_grid: usize,
    pub grid: usize,
}

impl Default for DiffusionOptions {
    fn default() -> Self {
        Self {
            data: None,
            source: diffusion::TRUE_SOURCE,
            noise: diffusion::TRUE_NOISE,
            data_seed: None,
            truth_grid: diffusion::TRUTH_GRID,
            grid: diffusion::INFERENCE_GRID,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    #[serde(default)]
    pub method: Method,
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub fast: bool,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub mala: MalaConfig,
    /// MALA starting point; the mean of an L=1 fit when absent.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default)]
    pub catalysis: CatalysisOptions,
    #[serde(default)]
    pub diffusion: DiffusionOptions,
    #[serde(default)]
    pub linear_gaussian: Option<LinearGaussianProblem>,
    /// Nodes per marginal density curve.
    #[serde(default = "default_plot_points")]
    pub plot_points: usize,
}

fn default_plot_points() -> usize {
    201
}

/// A config with command-line overrides applied and paths made absolute.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub hash: String,
}

pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub fast: bool,
}

pub fn load(path: &Path, overrides: Overrides) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));

    if let Some(s) = overrides.seed {
        config.seed = Some(s);
    }
    let seed = config
        .seed
        .ok_or_else(|| CliError::Config("a seed is required (config `seed` or --seed)".into()))?;
    config.fast |= overrides.fast;
    config.fit.seed = seed;
    config.mala.seed = seed;
    if config.fast {
        config.diffusion.truth_grid = diffusion::FAST_TRUTH_GRID;
        config.diffusion.grid = diffusion::FAST_INFERENCE_GRID;
        config.mala.total = 20_000;
        config.mala.burn_in = 1_000;
        config.mala.thin = 20;
    }
    if config.problem == Problem::LinearGaussian && config.linear_gaussian.is_none() {
        return Err(CliError::Config("linear-gaussian needs a `linear_gaussian` section".into()));
    }
    if config.plot_points < 2 {
        return Err(CliError::Config("plot_points must be at least 2".into()));
    }

    let output_dir = match overrides.out {
        Some(o) => o,
        None => match &config.output_dir {
            Some(o) if o.is_relative() => base.join(o),
            Some(o) => o.clone(),
            None => base.join("out"),
        },
    };
    // the output location does not change the numbers, so it stays out of the hash
    let mut hashed = config.clone();
    hashed.output_dir = None;
    let canonical = serde_json::to_string(&hashed).expect("config serializes");
    let hash = format!("{:x}", Sha256::digest(canonical.as_bytes()));
    for p in [&mut config.catalysis.data, &mut config.diffusion.data].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
        if !p.is_file() {
            return Err(CliError::Config(format!("data file {} does not exist", p.display())));
        }
    }
    Ok(Resolved { config, seed, output_dir, hash })
}
