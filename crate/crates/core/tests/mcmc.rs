use varinv::joint::{JointEval, LogDensity};
use varinv::mcmc::{mala_sample, MalaConfig};
use varinv::Result;

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

/// Mean and batch-means standard error.
fn batch_mean(x: &[f64], batches: usize) -> (f64, f64) {
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}

#[test]
fn standard_normal_moments_within_three_standard_errors() {
    for seed in 0..3 {
        let chain = mala_sample(&StdNormal(2), &[0.0, 0.0], &MalaConfig { seed, ..Default::default() }).unwrap();
        assert_eq!(chain.len(), 990);
        for j in 0..2 {
            let x = chain.column(j);
            let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
            let (m, se) = batch_mean(&x, 30);
            let (s, se2) = batch_mean(&sq, 30);
            assert!(m.abs() <= 3.0 * se, "seed {seed} x{j}: mean {m} se {se}");
            assert!((s - 1.0).abs() <= 3.0 * se2, "seed {seed} x{j}: E[x^2] {s} se {se2}");
        }
    }
}

#[test]
fn tiny_steps_are_almost_always_accepted() {
    let chain = mala_sample(&StdNormal(2), &[0.5, -0.5], &MalaConfig { dt: 1e-3, ..Default::default() }).unwrap();
    assert!(chain.acceptance_rate > 0.99, "{}", chain.acceptance_rate);
}

#[test]
fn large_steps_decorrelate_thinned_samples() {
    // dt = 1 is the exact one-step Gaussian proposal scale for this target
    let cfg = MalaConfig { dt: 1.0, ..Default::default() };
    let chain = mala_sample(&StdNormal(2), &[0.0, 0.0], &cfg).unwrap();
    for j in 0..2 {
        let r = chain.autocorrelation(j, 1);
        assert!(r.abs() < 0.2, "x{j}: lag-1 autocorrelation {r}");
    }
}

#[test]
fn acceptance_falls_as_steps_grow() {
    let rate = |dt: f64| {
        let cfg = MalaConfig { dt, total: 20_000, ..Default::default() };
        mala_sample(&StdNormal(4), &[0.0; 4], &cfg).unwrap().acceptance_rate
    };
    let (a, b, c) = (rate(0.3), rate(1.2), rate(1.8));
    assert!(a > b && b > c, "{a} {b} {c}");
}
