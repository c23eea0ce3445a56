//! Subcommand definitions and drivers.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dhsic::bplanner::{coverage_curve, minimal_b};
use dhsic::sim::{
    default_thetas, generate_null_gaussian, generate_scenario1, generate_scenario2, power_sweep,
    power_sweep_with, rejection_curve_empirical, ScenarioKind, ScenarioSpec,
};
use dhsic::{
    build_gram_stack, test_exhaustive, test_sampled, Alpha, Bandwidth, Dataset, KernelSpec,
    Matrix, TiePolicy,
};

use crate::error::CliError;
use crate::ingest;
use crate::manifest::{write_json, ManifestBuilder};

#[derive(Debug, Parser)]
#[command(name = "dhsic", version, about = "Joint independence tests with dHSIC")]
pub struct Cli {
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true, env = "DHSIC_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a permutation test on a CSV dataset and print the result as JSON.
    Test(TestArgs),
    /// Find the number of permutations needed for a target p-value accuracy.
    Bplan(BplanArgs),
    /// Power sweep over a simulation scenario; writes power.csv.
    Power(PowerArgs),
    /// Empirical and exact rejection curves as a function of p_D; writes curves.csv.
    Curves(CurvesArgs),
    /// Write a simulated dataset to CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelArg {
    Gaussian,
    Linear,
    GramFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Sampled,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TiesArg {
    Conservative,
    Random,
}

impl From<TiesArg> for TiePolicy {
    fn from(t: TiesArg) -> Self {
        match t {
            TiesArg::Conservative => TiePolicy::Conservative,
            TiesArg::Random => TiePolicy::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum KindArg {
    Scenario1,
    Scenario2,
    NullGaussian,
}

impl From<KindArg> for ScenarioKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Scenario1 => ScenarioKind::Scenario1,
            KindArg::Scenario2 => ScenarioKind::Scenario2,
            KindArg::NullGaussian => ScenarioKind::NullGaussian,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TestArgs {
    /// CSV file with one sample per row (header optional).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column groups "a:b,c:d,..", half-open, one per variable. Default: one variable per column.
    #[arg(long)]
    pub vars: Option<String>,
    /// Kernel per variable (one value applies to all).
    #[arg(long, value_enum, default_values_t = [KernelArg::Gaussian])]
    pub kernel: Vec<KernelArg>,
    /// Gaussian bandwidth per variable: "median" or a positive real (one value applies to all).
    #[arg(long, default_values_t = ["median".to_string()])]
    pub bandwidth: Vec<String>,
    /// Precomputed n x n Gram matrix CSV, consumed in order by gram-file variables.
    #[arg(long)]
    pub gram: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Sampled)]
    pub method: MethodArg,
    /// Number of sampled permutation vectors.
    #[arg(long = "B", default_value_t = 999)]
    pub b: u64,
    /// Level, as a decimal.
    #[arg(long, default_value = "0.05")]
    pub alpha: String,
    #[arg(long, value_enum, default_value_t = TiesArg::Conservative)]
    pub ties: TiesArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest number of permutation vectors exhaustive mode may enumerate.
    #[arg(long, default_value_t = 1_000_000)]
    pub cap: u64,
    /// Also write the result JSON to this file.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Manifest path. Default: "<out>.manifest.json", or "dhsic-test-manifest.json".
    #[arg(long)]
    #[serde(skip)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BplanArgs {
    #[arg(long, default_value = "0.05")]
    pub alpha: String,
    /// Target half-width of the p-value confidence interval.
    #[arg(long)]
    pub epsilon: f64,
    /// Confidence level 1 - lambda.
    #[arg(long)]
    pub confidence: f64,
    /// p_D threshold below which the interval must hold.
    #[arg(long = "C")]
    pub c: f64,
    #[arg(long = "min-B", default_value_t = 1)]
    pub min_b: u64,
    #[arg(long = "max-B", default_value_t = 1 << 24)]
    pub max_b: u64,
    /// Directory for bplan.json, coverage.csv and the manifest.
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Scenario config (JSON, or TOML by .toml extension). Replaces the inline flags.
    #[arg(long, conflicts_with_all = ["kind", "thetas", "n", "dims", "replications", "b_list", "alpha", "seed", "ties", "bandwidth"])]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = KindArg::NullGaussian)]
    pub kind: KindArg,
    /// Comma-separated theta grid; defaults depend on the scenario.
    #[arg(long, value_delimiter = ',')]
    pub thetas: Vec<f64>,
    /// Sample size; default 30 for null_gaussian and 100 otherwise.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    /// Default 2000 for null_gaussian and 500 otherwise.
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long = "B", value_delimiter = ',', default_values_t = [199u64])]
    pub b_list: Vec<u64>,
    #[arg(long, default_value = "0.05")]
    pub alpha: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TiesArg::Conservative)]
    pub ties: TiesArg,
    /// Fixed Gaussian bandwidth; median heuristic when absent.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Power configuration file contents. `custom` scenarios read a fixed dataset
/// from `input`/`vars`, and only permutation seeds vary across replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerConfig {
    #[serde(flatten)]
    pub spec: ScenarioSpec,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub vars: Option<String>,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// Curves config (JSON, or TOML by .toml extension). Replaces the inline flags.
    #[arg(long, conflicts_with_all = ["b_list", "alpha", "grid_step", "p_min", "p_max", "trials", "seed"])]
    pub config: Option<PathBuf>,
    #[arg(long = "B", value_delimiter = ',', default_values_t = [99u64, 999, 9999])]
    pub b_list: Vec<u64>,
    #[arg(long, default_value = "0.05")]
    pub alpha: String,
    #[arg(long, default_value_t = 0.005)]
    pub grid_step: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub p_max: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn default_grid_step() -> f64 {
    0.005
}
fn default_p_max() -> f64 {
    1.0
}
fn default_trials() -> u64 {
    10_000
}
fn default_alpha_text() -> String {
    "0.05".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvesConfig {
    #[serde(rename = "B_list", alias = "b_list")]
    pub b_list: Vec<u64>,
    #[serde(default = "default_alpha_text")]
    pub alpha: String,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default)]
    pub p_min: f64,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub scenario: KindArg,
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Block dimensions for null_gaussian.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 1])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_alpha(text: &str) -> Result<Alpha, CliError> {
    Alpha::parse_decimal(text).map_err(|e| CliError::Usage(format!("--alpha: {e}")))
}

/// Broadcasts a length-1 list to `d` entries, or checks it has exactly `d`.
fn per_variable<T: Clone>(values: &[T], d: usize, flag: &str) -> Result<Vec<T>, CliError> {
    match values.len() {
        1 => Ok(vec![values[0].clone(); d]),
        k if k == d => Ok(values.to_vec()),
        k => Err(CliError::Usage(format!(
            "{flag} given {k} times for {d} variables (give it once or once per variable)"
        ))),
    }
}

fn parse_bandwidth(text: &str) -> Result<Bandwidth, CliError> {
    if text.eq_ignore_ascii_case("median") {
        return Ok(Bandwidth::MedianHeuristic);
    }
    match text.parse::<f64>() {
        Ok(s) if s > 0.0 && s.is_finite() => Ok(Bandwidth::Fixed(s)),
        _ => Err(CliError::Usage(format!(
            "--bandwidth '{text}' must be 'median' or a positive real"
        ))),
    }
}

/// Resolves the dataset and kernels of a `test` invocation.
pub fn load_test_inputs(
    args: &TestArgs,
    manifest: &mut ManifestBuilder,
) -> Result<(Dataset, Vec<KernelSpec>), CliError> {
    let mut grams: Vec<Matrix> = Vec::with_capacity(args.gram.len());
    for path in &args.gram {
        manifest.input(path)?;
        grams.push(ingest::read_gram(path)?);
    }
    let data = match &args.input {
        Some(path) => {
            manifest.input(path)?;
            let table = ingest::read_table(path)?;
            let groups = match &args.vars {
                Some(v) => ingest::parse_column_groups(v, table.cols)?,
                None => ingest::default_groups(table.cols),
            };
            ingest::table_to_dataset(&table, &groups)?
        }
        None => {
            if grams.len() < 2 || args.kernel.iter().any(|k| *k != KernelArg::GramFile) {
                return Err(CliError::Usage(
                    "--input is required unless every variable uses --kernel gram-file".into(),
                ));
            }
            let n = grams[0].rows();
            let index: Vec<f64> = (0..n).map(|i| i as f64).collect();
            Dataset::new(vec![Matrix::column(&index); grams.len()])?
        }
    };
    let d = data.d();
    let kernels = per_variable(&args.kernel, d, "--kernel")?;
    let bandwidths = per_variable(&args.bandwidth, d, "--bandwidth")?;
    let mut grams = grams.into_iter();
    let specs = kernels
        .iter()
        .zip(&bandwidths)
        .map(|(k, bw)| match k {
            KernelArg::Gaussian => Ok(KernelSpec::Gaussian(parse_bandwidth(bw)?)),
            KernelArg::Linear => Ok(KernelSpec::Linear),
            KernelArg::GramFile => grams
                .next()
                .map(KernelSpec::Tabulated)
                .ok_or_else(|| CliError::Usage("not enough --gram files for gram-file variables".into())),
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    if grams.next().is_some() {
        return Err(CliError::Usage("more --gram files than gram-file variables".into()));
    }
    Ok((data, specs))
}

pub fn cmd_test(args: &TestArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("test");
    let alpha = parse_alpha(&args.alpha)?;
    if args.method == MethodArg::Sampled && args.b == 0 {
        return Err(CliError::Usage("--B must be at least 1".into()));
    }
    let (data, specs) = load_test_inputs(args, &mut manifest)?;
    let gram = build_gram_stack(&data, &specs)?;
    let result = match args.method {
        MethodArg::Sampled => test_sampled(&gram, args.b, alpha, args.ties.into(), args.seed)?,
        MethodArg::Exhaustive => {
            test_exhaustive(&gram, alpha, args.ties.into(), args.cap as u128, args.seed)?
        }
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let json = serde_json::to_string_pretty(&result).map_err(std::io::Error::other)?;
    println!("{json}");
    if let Some(out) = &args.out {
        write_json(out, &result)?;
        manifest.output(out);
    }
    let manifest_path = match (&args.manifest, &args.out) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) => PathBuf::from(format!("{}.manifest.json", out.display())),
        (None, None) => PathBuf::from("dhsic-test-manifest.json"),
    };
    manifest.finish(args, Some(args.seed), &manifest_path)?;
    Ok(())
}

pub fn cmd_bplan(args: &BplanArgs) -> Result<(), CliError> {
    let manifest = ManifestBuilder::start("bplan");
    let alpha = parse_alpha(&args.alpha)?;
    if !(args.epsilon > 0.0 && args.epsilon < args.c && args.c < 1.0) {
        return Err(CliError::Usage(format!(
            "need 0 < epsilon < C < 1, got epsilon = {}, C = {}",
            args.epsilon, args.c
        )));
    }
    if args.c <= alpha.as_f64() {
        return Err(CliError::Usage(format!("C = {} must exceed alpha = {alpha}", args.c)));
    }
    if !(0.0..1.0).contains(&args.confidence) {
        return Err(CliError::Usage(format!(
            "--confidence must lie in [0, 1), got {}",
            args.confidence
        )));
    }
    if args.min_b == 0 || args.min_b > args.max_b {
        return Err(CliError::Usage("need 1 <= --min-B <= --max-B".into()));
    }
    let plan = minimal_b(alpha, args.epsilon, args.confidence, args.c, (args.min_b, args.max_b))?;
    fs::create_dir_all(&args.out)?;
    let mut manifest = manifest;
    let plan_path = args.out.join("bplan.json");
    write_json(&plan_path, &plan)?;
    manifest.output(&plan_path);

    let csv_path = args.out.join("coverage.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_io)?;
    w.write_record(["p_d", "coverage"]).map_err(csv_io)?;
    for (p, c) in coverage_curve(&plan) {
        w.write_record([format!("{p}"), format!("{c}")]).map_err(csv_io)?;
    }
    w.flush()?;
    manifest.output(&csv_path);

    println!("{}", serde_json::to_string_pretty(&plan).map_err(std::io::Error::other)?);
    manifest.finish(args, None, &args.out.join("bplan.manifest.json"))?;
    Ok(())
}

fn csv_io(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

fn power_config_from_flags(args: &PowerArgs) -> Result<PowerConfig, CliError> {
    let kind: ScenarioKind = args.kind.into();
    let null = kind == ScenarioKind::NullGaussian;
    let mut spec = ScenarioSpec::new(
        kind,
        args.n.unwrap_or(if null { 30 } else { 100 }),
        args.replications.unwrap_or(if null { 2000 } else { 500 }),
        args.b_list.clone(),
    );
    if !args.thetas.is_empty() {
        spec.thetas = args.thetas.clone();
    }
    spec.dims = args.dims.clone();
    spec.alpha = parse_alpha(&args.alpha)?;
    spec.master_seed = args.seed;
    spec.tie_policy = args.ties.into();
    spec.bandwidth = args.bandwidth;
    Ok(PowerConfig {
        spec,
        input: None,
        vars: None,
    })
}

pub fn cmd_power(args: &PowerArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("power");
    let mut config = match &args.config {
        Some(path) => {
            manifest.input(path)?;
            read_config::<PowerConfig>(path)?
        }
        None => power_config_from_flags(args)?,
    };
    if config.spec.thetas.is_empty() {
        config.spec.thetas = default_thetas(config.spec.kind);
    }
    config.spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = match config.spec.kind {
        ScenarioKind::Custom => {
            let input = config.input.as_ref().ok_or_else(|| {
                CliError::Usage("custom scenarios need an 'input' CSV in the config".into())
            })?;
            manifest.input(input)?;
            let table = ingest::read_table(input)?;
            let groups = match &config.vars {
                Some(v) => ingest::parse_column_groups(v, table.cols)?,
                None => ingest::default_groups(table.cols),
            };
            let data = ingest::table_to_dataset(&table, &groups)?;
            config.spec.n = data.n();
            power_sweep_with(&config.spec, true, |_, _| Ok(data.clone()))?
        }
        _ => power_sweep(&config.spec)?,
    };
    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("power.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_io)?;
    for row in &rows {
        w.serialize(row).map_err(csv_io)?;
    }
    w.flush()?;
    manifest.output(&csv_path);
    let seed = config.spec.master_seed;
    manifest.finish(&config, Some(seed), &args.out.join("power.manifest.json"))?;
    Ok(())
}

pub fn cmd_curves(args: &CurvesArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("curves");
    let config = match &args.config {
        Some(path) => {
            manifest.input(path)?;
            read_config::<CurvesConfig>(path)?
        }
        None => CurvesConfig {
            b_list: args.b_list.clone(),
            alpha: args.alpha.clone(),
            grid_step: args.grid_step,
            p_min: args.p_min,
            p_max: args.p_max,
            trials: args.trials,
            seed: args.seed,
        },
    };
    if config.b_list.is_empty() || config.b_list.contains(&0) {
        return Err(CliError::Usage("B_list must be non-empty with every B >= 1".into()));
    }
    let valid_range = 0.0 <= config.p_min && config.p_min <= config.p_max && config.p_max <= 1.0;
    if config.grid_step.is_nan() || config.grid_step <= 0.0 || !valid_range {
        return Err(CliError::Usage("need grid_step > 0 and 0 <= p_min <= p_max <= 1".into()));
    }
    if config.trials == 0 {
        return Err(CliError::Usage("trials must be at least 1".into()));
    }
    let alpha = parse_alpha(&config.alpha)?;
    let steps = ((config.p_max - config.p_min) / config.grid_step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps)
        .map(|k| (config.p_min + k as f64 * config.grid_step).min(config.p_max))
        .collect();
    let rows = rejection_curve_empirical(&grid, &config.b_list, alpha, config.trials, config.seed)?;
    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("curves.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_io)?;
    for row in &rows {
        w.serialize(row).map_err(csv_io)?;
    }
    w.flush()?;
    manifest.output(&csv_path);
    manifest.finish(&config, Some(config.seed), &args.out.join("curves.manifest.json"))?;
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("generate");
    let data = match args.scenario {
        KindArg::Scenario1 => generate_scenario1(args.theta, args.n, args.seed)?,
        KindArg::Scenario2 => generate_scenario2(args.theta, args.n)?,
        KindArg::NullGaussian => generate_null_gaussian(args.n, &args.dims, args.seed)?,
    };
    ingest::write_dataset(&data, &args.out)?;
    manifest.output(&args.out);
    println!("{}", ingest::groups_string(&data));
    let manifest_path = PathBuf::from(format!("{}.manifest.json", args.out.display()));
    manifest.finish(args, Some(args.seed), &manifest_path)?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Bplan(a) => cmd_bplan(a),
        Command::Power(a) => cmd_power(a),
        Command::Curves(a) => cmd_curves(a),
        Command::Generate(a) => cmd_generate(a),
    }
}
