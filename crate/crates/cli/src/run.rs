use std::path::Path;

use serde::Serialize;
use varinv::fit::{FitReport, RestartSummary};
use varinv::mcmc::{mala_sample, Chain};
use varinv::models::catalysis::{self, CatalysisData};
use varinv::models::diffusion::{self, DiffusionProblem, SensorLayout};
use varinv::optim::Bounds;
use varinv::summary::{marginal_density_curve, mixture_marginals, sample_marginals, Interval, Marginal};
use varinv::{fit, FitConfig, JointDensityModel, MixtureState};

use crate::config::{ExperimentConfig, Method, Problem, Resolved};
use crate::output::{num, write_csv, write_json, Stamp};
use crate::CliError;

/// Readings in time-major order for the given layout.
pub struct DiffusionData {
    pub layout: SensorLayout,
    pub problem: DiffusionProblem,
    pub readings: Vec<f64>,
}

fn layout(problem: Problem) -> Option<SensorLayout> {
    match problem {
        Problem::DiffusionCorners => Some(SensorLayout::Corners),
        Problem::DiffusionMidpoints => Some(SensorLayout::Midpoints),
        _ => None,
    }
}

fn parameter_names(cfg: &ExperimentConfig) -> Vec<String> {
    match cfg.problem {
        Problem::Catalysis => ["xi1", "xi2", "xi3", "xi4", "xi5", "theta"].map(String::from).to_vec(),
        Problem::DiffusionCorners | Problem::DiffusionMidpoints => ["x", "y", "theta"].map(String::from).to_vec(),
        Problem::LinearGaussian => {
            let d = cfg.linear_gaussian.as_ref().map_or(0, |p| p.prior_mean.len());
            (1..=d).map(|i| format!("xi{i}")).collect()
        }
    }
}

fn synthesize(cfg: &ExperimentConfig, seed: u64) -> Result<DiffusionData, CliError> {
    let layout = layout(cfg.problem).ok_or_else(|| CliError::Config("make-data supports diffusion problems only".into()))?;
    let d = &cfg.diffusion;
    let problem = DiffusionProblem::with_layout(d.truth_grid, layout);
    let readings = diffusion::synthetic_data(&problem, &d.source, d.noise, d.data_seed.unwrap_or(seed))?;
    Ok(DiffusionData { layout, problem, readings })
}

fn reading_rows(data: &DiffusionData) -> Vec<Vec<String>> {
    let s = data.problem.sensors.len();
    data.readings
        .iter()
        .enumerate()
        .map(|(k, v)| vec![(k % s).to_string(), num(data.problem.times[k / s]), num(*v)])
        .collect()
}

fn read_readings(path: &Path, problem: &DiffusionProblem) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let s = problem.sensors.len();
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 3 {
            return Err(bad(format!("row {k}: expected sensor,time,value")));
        }
        let parse = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| bad(format!("row {k}: {e}")));
        let (sensor, time, value) = (parse(0)?, parse(1)?, parse(2)?);
        let expected_time = problem.times.get(k / s).copied().unwrap_or(f64::NAN);
        if sensor != (k % s) as f64 || (time - expected_time).abs() > 1e-9 {
            return Err(bad(format!("row {k}: expected sensor {} at time {expected_time}", k % s)));
        }
        out.push(value);
    }
    if out.len() != problem.output_dim() {
        return Err(bad(format!("{} readings, expected {}", out.len(), problem.output_dim())));
    }
    Ok(out)
}

pub fn make_data(r: &Resolved) -> Result<(), CliError> {
    let data = synthesize(&r.config, r.seed)?;
    std::fs::create_dir_all(&r.output_dir).map_err(|e| CliError::Io(e.to_string()))?;
    let stamp = Stamp { config_hash: r.hash.clone(), seed: r.seed };
    write_csv(&r.output_dir, "data.csv", &stamp, &["sensor", "time", "value"], &reading_rows(&data))?;
    let d = &r.config.diffusion;
    #[derive(Serialize)]
    struct Provenance<'a> {
        layout: SensorLayout,
        source: [f64; 2],
        noise: f64,
        data_seed: u64,
        truth_grid: usize,
        problem: &'a DiffusionProblem,
    }
    let prov = Provenance {
        layout: data.layout,
        source: d.source,
        noise: d.noise,
        data_seed: d.data_seed.unwrap_or(r.seed),
        truth_grid: d.truth_grid,
        problem: &data.problem,
    };
    write_json(&r.output_dir, "data.json", &stamp, &prov)
}

struct Setup {
    model: JointDensityModel,
    fit: FitConfig,
    diffusion_data: Option<DiffusionData>,
}

fn setup(r: &Resolved) -> Result<Setup, CliError> {
    let cfg = &r.config;
    let mut fit_cfg = cfg.fit.clone();
    match cfg.problem {
        Problem::Catalysis => {
            let mut data = match &cfg.catalysis.data {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                    CatalysisData::parse(&text)?
                }
                None => CatalysisData::table1(),
            };
            if cfg.catalysis.include_initial_row {
                data = data.with_initial_row();
            }
            Ok(Setup { model: catalysis::joint_model(&data)?, fit: fit_cfg, diffusion_data: None })
        }
        Problem::DiffusionCorners | Problem::DiffusionMidpoints => {
            let layout = layout(cfg.problem).expect("diffusion problem");
            let inference = DiffusionProblem::with_layout(cfg.diffusion.grid, layout);
            let (readings, generated) = match &cfg.diffusion.data {
                Some(p) => (read_readings(p, &inference)?, None),
                None => {
                    let d = synthesize(cfg, r.seed)?;
                    (d.readings.clone(), Some(d))
                }
            };
            if fit_cfg.mean_bounds.is_none() {
                let (lo, hi) = diffusion::MEAN_BOX;
                fit_cfg.mean_bounds = Some(Bounds::new(vec![lo, lo, f64::NEG_INFINITY], vec![hi, hi, f64::INFINITY])?);
            }
            Ok(Setup { model: diffusion::joint_model(inference, readings)?, fit: fit_cfg, diffusion_data: generated })
        }
        Problem::LinearGaussian => {
            let p = cfg.linear_gaussian.as_ref().expect("checked at load");
            Ok(Setup { model: p.model()?, fit: fit_cfg, diffusion_data: None })
        }
    }
}

#[derive(Serialize)]
struct ParameterSummary<'a> {
    name: &'a str,
    #[serde(flatten)]
    marginal: Marginal,
}

#[derive(Serialize)]
struct DerivedSummary {
    name: String,
    description: &'static str,
    #[serde(flatten)]
    interval: Interval,
}

/// Rates per minute and the noise scale for catalysis, the noise scale for
/// diffusion.
fn derived(problem: Problem, marg: &[Marginal]) -> Vec<DerivedSummary> {
    let mut out = Vec::new();
    if problem == Problem::Catalysis {
        for (i, m) in marg.iter().take(5).enumerate() {
            out.push(DerivedSummary {
                name: format!("k{}", i + 1),
                description: "rate constant, 1/min",
                interval: m.map_quantiles(catalysis::rate_per_minute),
            });
        }
    }
    if problem != Problem::LinearGaussian {
        out.push(DerivedSummary {
            name: "sigma".into(),
            description: "noise standard deviation",
            interval: marg.last().expect("nonempty").map_quantiles(f64::exp),
        });
    }
    out
}

#[derive(Serialize)]
struct FitInfo<'a> {
    components: usize,
    final_f2: f64,
    converged: bool,
    restart: usize,
    forward_evals: usize,
    total_forward_evals: usize,
    restarts: Vec<RestartInfo<'a>>,
}

#[derive(Serialize)]
struct RestartInfo<'a> {
    index: usize,
    final_f2: Option<f64>,
    converged: bool,
    sweeps: usize,
    forward_evals: usize,
    error: &'a Option<String>,
}

impl<'a> From<&'a RestartSummary> for RestartInfo<'a> {
    fn from(s: &'a RestartSummary) -> Self {
        Self {
            index: s.index,
            final_f2: s.final_f2,
            converged: s.converged,
            sweeps: s.sweeps,
            forward_evals: s.forward_evals,
            error: &s.error,
        }
    }
}

#[derive(Serialize)]
struct ExactPosterior {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    problem: Problem,
    method: Method,
    parameters: Vec<ParameterSummary<'a>>,
    derived: Vec<DerivedSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitInfo<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chain: Option<ChainInfo<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_posterior: Option<ExactPosterior>,
}

#[derive(Serialize)]
struct ChainInfo<'a> {
    dt: f64,
    burn_in: usize,
    thin: usize,
    total: usize,
    samples: usize,
    start: &'a [f64],
    acceptance_rate: f64,
    mirror_acceptance_rate: Option<f64>,
    forward_evals: usize,
}

pub fn run(r: &Resolved) -> Result<(), CliError> {
    let cfg = &r.config;
    let s = setup(r)?;
    std::fs::create_dir_all(&r.output_dir).map_err(|e| CliError::Io(e.to_string()))?;
    let stamp = Stamp { config_hash: r.hash.clone(), seed: r.seed };
    let names = parameter_names(cfg);
    if let Some(d) = &s.diffusion_data {
        write_csv(&r.output_dir, "data.csv", &stamp, &["sensor", "time", "value"], &reading_rows(d))?;
    }
    let exact_posterior = match &cfg.linear_gaussian {
        Some(p) if cfg.problem == Problem::LinearGaussian => {
            let post = p.posterior()?;
            Some(ExactPosterior { std: post.std_devs(), mean: post.mean })
        }
        _ => None,
    };

    match cfg.method {
        Method::Vi => {
            let rep = fit(&s.model, &s.fit)?;
            let marg = mixture_marginals(&rep.state)?;
            write_mixture(r, &stamp, &names, &rep.state)?;
            write_trace(r, &stamp, &rep)?;
            write_density(r, &stamp, &names, &rep.state)?;
            let summary = Summary {
                problem: cfg.problem,
                method: cfg.method,
                parameters: names.iter().zip(&marg).map(|(n, m)| ParameterSummary { name: n, marginal: *m }).collect(),
                derived: derived(cfg.problem, &marg),
                fit: Some(FitInfo {
                    components: rep.state.components(),
                    final_f2: rep.final_f2(),
                    converged: rep.converged,
                    restart: rep.restart,
                    forward_evals: rep.forward_evals,
                    total_forward_evals: rep.total_forward_evals,
                    restarts: rep.restarts.iter().map(RestartInfo::from).collect(),
                }),
                chain: None,
                exact_posterior,
            };
            write_json(&r.output_dir, "summary.json", &stamp, &summary)
        }
        Method::Mala => {
            let start = match &cfg.start {
                Some(s) => s.clone(),
                None => {
                    let one = FitConfig { components: 1, ..s.fit.clone() };
                    fit(&s.model, &one)?.state.means()[0].clone()
                }
            };
            let chain = mala_sample(&s.model, &start, &cfg.mala)?;
            let marg = sample_marginals(&chain.samples);
            write_chain(r, &stamp, &names, &chain)?;
            write_histograms(r, &stamp, &names, &chain)?;
            let info = ChainInfo {
                dt: cfg.mala.dt,
                burn_in: cfg.mala.burn_in,
                thin: cfg.mala.thin,
                total: cfg.mala.total,
                samples: chain.len(),
                start: &start,
                acceptance_rate: chain.acceptance_rate,
                mirror_acceptance_rate: chain.mirror_acceptance_rate,
                forward_evals: chain.forward_evals,
            };
            write_json(&r.output_dir, "chain.json", &stamp, &info)?;
            let summary = Summary {
                problem: cfg.problem,
                method: cfg.method,
                parameters: names.iter().zip(&marg).map(|(n, m)| ParameterSummary { name: n, marginal: *m }).collect(),
                derived: derived(cfg.problem, &marg),
                fit: None,
                chain: Some(info),
                exact_posterior,
            };
            write_json(&r.output_dir, "summary.json", &stamp, &summary)
        }
    }
}

fn write_mixture(r: &Resolved, stamp: &Stamp, names: &[String], q: &MixtureState) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Doc<'a> {
        parameters: &'a [String],
        mixture: &'a MixtureState,
    }
    write_json(&r.output_dir, "mixture.json", stamp, &Doc { parameters: names, mixture: q })
}

fn write_trace(r: &Resolved, stamp: &Stamp, rep: &FitReport) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for s in &rep.restarts {
        for rec in &s.records {
            rows.push(vec![
                s.index.to_string(),
                rec.sweep.to_string(),
                num(rec.f0_before_means),
                num(rec.f0_after_means),
                num(rec.f2_before_weights),
                num(rec.f2_after_weights),
                num(rec.f2_after_variances),
                rec.forward_evals.to_string(),
            ]);
        }
    }
    let header = [
        "restart",
        "sweep",
        "f0_before_means",
        "f0_after_means",
        "f2_before_weights",
        "f2_after_weights",
        "f2",
        "forward_evals",
    ];
    write_csv(&r.output_dir, "trace.csv", stamp, &header, &rows)
}

fn write_density(r: &Resolved, stamp: &Stamp, names: &[String], q: &MixtureState) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (j, name) in names.iter().enumerate() {
        for (x, p) in marginal_density_curve(q, j, r.config.plot_points, 4.0) {
            rows.push(vec![name.clone(), num(x), num(p)]);
        }
    }
    write_csv(&r.output_dir, "density.csv", stamp, &["parameter", "x", "density"], &rows)
}

fn write_chain(r: &Resolved, stamp: &Stamp, names: &[String], chain: &Chain) -> Result<(), CliError> {
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = chain.samples.iter().map(|s| s.iter().map(|x| num(*x)).collect()).collect();
    write_csv(&r.output_dir, "chain.csv", stamp, &header, &rows)
}

/// Normalized histograms, `min(plot_points, 100)` bins per parameter.
fn write_histograms(r: &Resolved, stamp: &Stamp, names: &[String], chain: &Chain) -> Result<(), CliError> {
    let bins = r.config.plot_points.min(100);
    let mut rows = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let col = chain.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for x in &col {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            let centre = lo + (b as f64 + 0.5) * width;
            rows.push(vec![name.clone(), num(centre), num(*c as f64 / (col.len() as f64 * width))]);
        }
    }
    write_csv(&r.output_dir, "density.csv", stamp, &["parameter", "x", "density"], &rows)
}
