//! Simulation studies: power sweeps over data-generating scenarios, empirical
//! rejection curves for a fixed `p_D`, and the decay of permuted statistics
//! with sample size.
//!
//! Every random draw comes from a stream keyed by the master seed and the
//! cell's indices, so results do not depend on the number of worker threads.

use std::f64::consts::PI;

use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bplanner::rejection_probability;
use crate::statistic::dhsic_factorized;
use crate::error::{Error, Result};
use crate::kernel::{build_gram_stack, Dataset, GramStack, KernelSpec, Matrix};
use crate::level::Alpha;
use crate::perm_test::{test_sampled, TiePolicy};
use crate::permutation::{sample_permutation_vector, to_assignment};
use crate::rng;

const DATA_STREAM: u64 = 0;
const PERM_STREAM: u64 = 1;

/// Dimension of both variables in the linear-Gaussian scenario.
pub const SCENARIO1_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// `X2 = theta X1 + noise`, both standard normal in `R^5`.
    Scenario1,
    /// `X2 = sin(theta X1)` on the fixed grid `X1_i = 2 pi i / n`.
    Scenario2,
    /// Independent standard normals, one block per entry of `dims`.
    NullGaussian,
    /// Data supplied by the caller through [`power_sweep_with`].
    Custom,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Scenario1 => "scenario1",
            ScenarioKind::Scenario2 => "scenario2",
            ScenarioKind::NullGaussian => "null_gaussian",
            ScenarioKind::Custom => "custom",
        }
    }

    /// Whether the scenario's data are the same in every replication.
    pub fn data_is_fixed(&self) -> bool {
        matches!(self, ScenarioKind::Scenario2)
    }
}

fn default_alpha() -> Alpha {
    Alpha::from_ratio(1, 20).expect("0.05 is a valid level")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub thetas: Vec<f64>,
    pub n: usize,
    #[serde(default)]
    pub dims: Vec<usize>,
    pub replications: usize,
    #[serde(rename = "B_list", alias = "b_list")]
    pub b_list: Vec<u64>,
    #[serde(default = "default_alpha")]
    pub alpha: Alpha,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub tie_policy: TiePolicy,
    /// Fixed Gaussian bandwidth for every variable; median heuristic when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

impl ScenarioSpec {
    /// A spec with the default theta grid for `kind`.
    pub fn new(kind: ScenarioKind, n: usize, replications: usize, b_list: Vec<u64>) -> Self {
        ScenarioSpec {
            kind,
            thetas: default_thetas(kind),
            n,
            dims: Vec::new(),
            replications,
            b_list,
            alpha: default_alpha(),
            master_seed: 0,
            tie_policy: TiePolicy::Conservative,
            bandwidth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be at least 1".into()));
        }
        if self.b_list.is_empty() {
            return Err(Error::InvalidInput("B_list must not be empty".into()));
        }
        if self.b_list.contains(&0) {
            return Err(Error::InvalidInput("every B must be at least 1".into()));
        }
        if self.thetas.is_empty() {
            return Err(Error::InvalidInput("theta grid must not be empty".into()));
        }
        if self.thetas.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("theta values must be finite".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidInput("n must be at least 2".into()));
        }
        if let Some(s) = self.bandwidth {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::DomainError(format!("bandwidth must be positive, got {s}")));
            }
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidInput("dimensions must be at least 1".into()));
        }
        match self.kind {
            ScenarioKind::NullGaussian if self.dims.len() == 1 => Err(Error::InvalidInput(
                "null_gaussian needs at least 2 dims".into(),
            )),
            ScenarioKind::Scenario1 if self.dims.len() > 1 && self.dims.iter().any(|&m| m != self.dims[0]) => {
                Err(Error::InvalidInput("scenario1 needs equal dims for both variables".into()))
            }
            _ => Ok(()),
        }
    }

    fn kernels(&self, d: usize) -> Vec<KernelSpec> {
        let spec = match self.bandwidth {
            Some(s) => KernelSpec::gaussian(s),
            None => KernelSpec::gaussian_median(),
        };
        vec![spec; d]
    }

    fn generate(&self, theta: f64, seed: u64) -> Result<Dataset> {
        match self.kind {
            ScenarioKind::Scenario1 => {
                let m = self.dims.first().copied().unwrap_or(SCENARIO1_DIM);
                generate_linear_gaussian(theta, self.n, m, seed)
            }
            ScenarioKind::Scenario2 => generate_scenario2(theta, self.n),
            ScenarioKind::NullGaussian => {
                let dims = if self.dims.is_empty() { vec![1, 1] } else { self.dims.clone() };
                generate_null_gaussian(self.n, &dims, seed)
            }
            ScenarioKind::Custom => Err(Error::InvalidInput(
                "custom scenarios need a caller-supplied generator".into(),
            )),
        }
    }
}

/// Default theta grids: `0, 0.05, .., 0.5` for scenario 1, `1, 2, .., 20` for
/// scenario 2, and `{0}` otherwise.
pub fn default_thetas(kind: ScenarioKind) -> Vec<f64> {
    match kind {
        ScenarioKind::Scenario1 => (0..=10).map(|i| i as f64 * 0.05).collect(),
        ScenarioKind::Scenario2 => (1..=20).map(f64::from).collect(),
        _ => vec![0.0],
    }
}

fn normal_block(rows: usize, cols: usize, r: &mut rng::StreamRng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(r)).collect();
    Matrix::new(rows, cols, data).expect("sized buffer")
}

fn generate_linear_gaussian(theta: f64, n: usize, m: usize, seed: u64) -> Result<Dataset> {
    let mut r = rng::stream(seed, &[]);
    let x1 = normal_block(n, m, &mut r);
    let noise = normal_block(n, m, &mut r);
    let x2 = x1
        .as_slice()
        .iter()
        .zip(noise.as_slice())
        .map(|(x, e)| theta * x + e)
        .collect();
    Dataset::new(vec![x1, Matrix::new(n, m, x2)?])
}

/// `X1, noise ~ N(0, I_5)` independently and `X2 = theta X1 + noise`.
pub fn generate_scenario1(theta: f64, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidInput("n must be at least 2".into()));
    }
    generate_linear_gaussian(theta, n, SCENARIO1_DIM, seed)
}

/// The deterministic dataset `X1_i = 2 pi i / n` (`i = 1..=n`), `X2 = sin(theta X1)`.
pub fn generate_scenario2(theta: f64, n: usize) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidInput("n must be at least 2".into()));
    }
    let x1: Vec<f64> = (1..=n).map(|i| i as f64 * 2.0 * PI / n as f64).collect();
    let x2: Vec<f64> = x1.iter().map(|x| (theta * x).sin()).collect();
    Dataset::new(vec![Matrix::column(&x1), Matrix::column(&x2)])
}

/// Independent standard normal blocks of the given dimensions.
pub fn generate_null_gaussian(n: usize, dims: &[usize], seed: u64) -> Result<Dataset> {
    let mut r = rng::stream(seed, &[]);
    Dataset::new(dims.iter().map(|&m| normal_block(n, m, &mut r)).collect())
}

/// One cell of a power sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub kind: String,
    pub theta: f64,
    pub n: usize,
    #[serde(rename = "B")]
    pub b: u64,
    pub alpha: f64,
    pub replications: usize,
    pub rejections: usize,
    pub rate: f64,
    pub mc_stderr: f64,
}

impl PowerRow {
    fn new(spec: &ScenarioSpec, theta: f64, b: u64, rejections: usize) -> Self {
        let reps = spec.replications;
        let rate = rejections as f64 / reps as f64;
        PowerRow {
            kind: spec.kind.name().to_string(),
            theta,
            n: spec.n,
            b,
            alpha: spec.alpha.as_f64(),
            replications: reps,
            rejections,
            rate,
            mc_stderr: (rate * (1.0 - rate) / reps as f64).sqrt(),
        }
    }
}

/// Seed of the data drawn for replication `rep` at theta index `ti`. It does
/// not involve the B index, so every B in a sweep sees the same datasets.
pub fn data_seed(master: u64, ti: usize, rep: usize) -> u64 {
    rng::derive_seed(master, &[DATA_STREAM, ti as u64, rep as u64])
}

/// Seed of the permutations for one `(theta, B, replication)` cell.
pub fn permutation_seed(master: u64, ti: usize, bi: usize, rep: usize) -> u64 {
    rng::derive_seed(master, &[PERM_STREAM, ti as u64, bi as u64, rep as u64])
}

/// Rejection rates of the Monte Carlo test for every `(theta, B)` in `spec`.
///
/// Random scenarios draw fresh data per replication; fixed scenarios reuse
/// one dataset per theta and only vary the permutation seeds.
pub fn power_sweep(spec: &ScenarioSpec) -> Result<Vec<PowerRow>> {
    spec.validate()?;
    power_sweep_with(spec, spec.kind.data_is_fixed(), |theta, seed| spec.generate(theta, seed))
}

/// [`power_sweep`] with caller-supplied data. `generate(theta, seed)` must be
/// deterministic; when `fixed_data` is set it is called once per theta.
pub fn power_sweep_with<G>(spec: &ScenarioSpec, fixed_data: bool, generate: G) -> Result<Vec<PowerRow>>
where
    G: Fn(f64, u64) -> Result<Dataset> + Sync,
{
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.thetas.len() * spec.b_list.len());
    for (ti, &theta) in spec.thetas.iter().enumerate() {
        let fixed = if fixed_data {
            let data = generate(theta, data_seed(spec.master_seed, ti, 0))?;
            Some(build_gram_stack(&data, &spec.kernels(data.d()))?)
        } else {
            None
        };
        let per_rep: Vec<Vec<bool>> = (0..spec.replications)
            .into_par_iter()
            .map(|rep| -> Result<Vec<bool>> {
                let owned;
                let gram: &GramStack = match &fixed {
                    Some(g) => g,
                    None => {
                        let data = generate(theta, data_seed(spec.master_seed, ti, rep))?;
                        owned = build_gram_stack(&data, &spec.kernels(data.d()))?;
                        &owned
                    }
                };
                spec.b_list
                    .iter()
                    .enumerate()
                    .map(|(bi, &b)| {
                        let seed = permutation_seed(spec.master_seed, ti, bi, rep);
                        test_sampled(gram, b, spec.alpha, spec.tie_policy, seed).map(|r| r.reject)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (bi, &b) in spec.b_list.iter().enumerate() {
            let rejections = per_rep.iter().filter(|v| v[bi]).count();
            rows.push(PowerRow::new(spec, theta, b, rejections));
        }
    }
    Ok(rows)
}

/// One `(p_D, B)` cell of an empirical rejection curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub p_d: f64,
    #[serde(rename = "B")]
    pub b: u64,
    pub alpha: f64,
    pub trials: u64,
    pub rejections: u64,
    pub empirical: f64,
    pub analytic: f64,
    pub sigma: f64,
    pub within_4sigma: bool,
}

/// For each `(p_D, B)`, draws `Z ~ Binom(B, p_D)` `trials` times, counts
/// `(1 + Z) / (B + 1) <= alpha`, and compares with the exact probability.
pub fn rejection_curve_empirical(
    p_grid: &[f64],
    b_list: &[u64],
    alpha: Alpha,
    trials: u64,
    seed: u64,
) -> Result<Vec<CurveRow>> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    if b_list.is_empty() || b_list.contains(&0) {
        return Err(Error::InvalidInput("B_list must be non-empty with every B >= 1".into()));
    }
    if let Some(p) = p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::DomainError(format!("p_D must lie in [0, 1], got {p}")));
    }
    let cells: Vec<(usize, usize)> = (0..p_grid.len())
        .flat_map(|pi| (0..b_list.len()).map(move |bi| (pi, bi)))
        .collect();
    cells
        .into_par_iter()
        .map(|(pi, bi)| {
            let (p, b) = (p_grid[pi], b_list[bi]);
            let analytic = rejection_probability(p, b, alpha)?;
            let max_rank = alpha.max_rejecting_rank(b);
            let binom = Binomial::new(b, p).map_err(|e| Error::DomainError(e.to_string()))?;
            let mut r = rng::stream(seed, &[pi as u64, bi as u64]);
            let rejections = (0..trials)
                .filter(|_| binom.sample(&mut r) < max_rank)
                .count() as u64;
            let empirical = rejections as f64 / trials as f64;
            let sigma = (analytic * (1.0 - analytic) / trials as f64).sqrt();
            Ok(CurveRow {
                p_d: p,
                b,
                alpha: alpha.as_f64(),
                trials,
                rejections,
                empirical,
                analytic,
                sigma,
                within_4sigma: (empirical - analytic).abs() <= 4.0 * sigma,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShrinkageRow {
    pub n: usize,
    pub observed_statistic: f64,
    pub mean_permuted_statistic: f64,
    pub permutations: usize,
}

/// For each `n`, draws one dataset and averages the statistic over
/// `perms_per_n` uniformly random permutation vectors.
pub fn permuted_statistic_shrinkage<G>(
    n_list: &[usize],
    generate: G,
    kernels: &[KernelSpec],
    perms_per_n: usize,
    seed: u64,
) -> Result<Vec<ShrinkageRow>>
where
    G: Fn(usize, u64) -> Result<Dataset>,
{
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("n_list must be strictly ascending".into()));
    }
    if perms_per_n == 0 {
        return Err(Error::InvalidInput("need at least one permutation per n".into()));
    }
    n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let data = generate(n, rng::derive_seed(seed, &[DATA_STREAM, k as u64]))?;
            let gram = build_gram_stack(&data, kernels)?;
            let d = gram.d();
            let observed = dhsic_factorized(&gram, &crate::IndexAssignment::identity(n, d)).value;
            let total: f64 = (0..perms_per_n)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::stream(seed, &[PERM_STREAM, k as u64, i as u64]);
                    let psi = sample_permutation_vector(n, d, &mut r);
                    let asg = to_assignment(&psi, d).expect("d - 1 parts");
                    dhsic_factorized(&gram, &asg).value
                })
                .collect::<Vec<_>>()
                .iter()
                .sum();
            Ok(ShrinkageRow {
                n,
                observed_statistic: observed,
                mean_permuted_statistic: total / perms_per_n as f64,
                permutations: perms_per_n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario1_shapes_and_determinism() {
        let a = generate_scenario1(0.0, 40, 3).unwrap();
        assert_eq!(a.dims(), vec![5, 5]);
        assert_eq!(a, generate_scenario1(0.0, 40, 3).unwrap());
        assert_ne!(a, generate_scenario1(0.0, 40, 4).unwrap());
    }

    #[test]
    fn scenario1_covariance_tracks_theta() {
        let n = 100;
        let ds = generate_scenario1(1.0, n, 12).unwrap();
        let (x1, x2) = (ds.block(0), ds.block(1));
        let mean = |m: &Matrix, c: usize| (0..n).map(|i| m.get(i, c)).sum::<f64>() / n as f64;
        for a in 0..5 {
            for b in 0..5 {
                let (ma, mb) = (mean(x1, a), mean(x2, b));
                let cov = (0..n)
                    .map(|i| (x1.get(i, a) - ma) * (x2.get(i, b) - mb))
                    .sum::<f64>()
                    / (n - 1) as f64;
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((cov - target).abs() <= 4.0 / (n as f64).sqrt(), "cov[{a}][{b}] = {cov}");
            }
        }
    }

    #[test]
    fn scenario2_grid() {
        let ds = generate_scenario2(0.0, 100).unwrap();
        assert!(ds.block(1).as_slice().iter().all(|&x| x == 0.0));
        let ds = generate_scenario2(1.0, 100).unwrap();
        assert!((ds.block(0).get(24, 0) - PI / 2.0).abs() < 1e-15);
        assert!((ds.block(1).get(24, 0) - 1.0).abs() < 1e-15);
        assert_eq!(ds, generate_scenario2(1.0, 100).unwrap());
    }

    #[test]
    fn curve_edges() {
        let a = Alpha::parse_decimal("0.05").unwrap();
        let rows = rejection_curve_empirical(&[0.0, 1.0], &[19, 99], a, 500, 1).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            let expected = if r.p_d == 0.0 { 1.0 } else { 0.0 };
            assert_eq!(r.empirical, expected);
            assert_eq!(r.analytic, expected);
            assert!(r.within_4sigma);
        }
        assert!(rejection_curve_empirical(&[1.5], &[19], a, 10, 1).is_err());
        assert!(rejection_curve_empirical(&[0.5], &[], a, 10, 1).is_err());
    }

    #[test]
    fn constant_data_has_zero_permuted_statistic() {
        let rows = permuted_statistic_shrinkage(
            &[5, 10, 20],
            |n, _| Dataset::new(vec![Matrix::filled(n, 2, 1.0), Matrix::filled(n, 1, 3.0)]),
            &[KernelSpec::gaussian(1.0), KernelSpec::gaussian(1.0)],
            20,
            0,
        )
        .unwrap();
        assert!(rows.iter().all(|r| r.mean_permuted_statistic == 0.0));
    }

    #[test]
    fn spec_validation() {
        let mut s = ScenarioSpec::new(ScenarioKind::NullGaussian, 20, 10, vec![]);
        assert!(power_sweep(&s).is_err());
        s.b_list = vec![19];
        s.replications = 0;
        assert!(power_sweep(&s).is_err());
        s.replications = 4;
        assert_eq!(power_sweep(&s).unwrap().len(), 1);
        let custom = ScenarioSpec::new(ScenarioKind::Custom, 20, 2, vec![19]);
        assert!(power_sweep(&custom).is_err());
    }

    #[test]
    fn sweep_is_reproducible_and_row_ordered() {
        let mut s = ScenarioSpec::new(ScenarioKind::Scenario1, 20, 8, vec![19, 39]);
        s.thetas = vec![0.0, 1.0];
        s.master_seed = 5;
        let a = power_sweep(&s).unwrap();
        assert_eq!(a, power_sweep(&s).unwrap());
        let keys: Vec<(f64, u64)> = a.iter().map(|r| (r.theta, r.b)).collect();
        assert_eq!(keys, vec![(0.0, 19), (0.0, 39), (1.0, 19), (1.0, 39)]);
        for r in &a {
            assert_eq!(r.mc_stderr, (r.rate * (1.0 - r.rate) / 8.0).sqrt());
        }
    }

    #[test]
    fn spec_parses_from_json() {
        let s: ScenarioSpec = serde_json::from_str(
            r#"{"kind":"scenario2","thetas":[1,2],"n":100,"replications":3,"B_list":[99],"alpha":"0.05","master_seed":9}"#,
        )
        .unwrap();
        assert_eq!(s.kind, ScenarioKind::Scenario2);
        assert_eq!(s.alpha, Alpha::parse_decimal("0.05").unwrap());
        assert_eq!(s.tie_policy, TiePolicy::Conservative);
    }
}
