//! The `etas` command: simulate catalogs, fit them by the linearized
//! approximation, run the reference sampler, check fits and sweep binnings.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 when a
//! computation fails or a fit does not converge.

pub mod config;
pub mod result;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use etas_core::catalog::parse_catalog;
use etas_core::diagnostics::{predictive_band, residual_test};
use etas_core::inference::fit;
use etas_core::mcmc::{chain_diagnostics, mh_sample, McmcConfig};
use etas_core::priors::{empirical_kb_prior, prior_summary};
use etas_core::simulator::{simulate, SimConfig};
use etas_core::stats::QuantileSummary;
use etas_core::{BinningConfig, EventCatalog, FitConfig};
use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use config::{Config, Preset};
use result::{FitRecord, PARAM_NAMES};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    Usage(String),
    /// A computation failed or did not converge.
    Numerical(String),
}

impl std::error::Error for CliError {}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

fn numerical(e: etas_core::Error) -> CliError {
    CliError::Numerical(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "etas", version, about = "Temporal ETAS simulation and approximate Bayesian inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a catalog from the `[params]` of a config file.
    Simulate(SimulateArgs),
    /// Fit a catalog with the linearized approximation.
    Fit(FitArgs),
    /// Sample the exact posterior with the reference Metropolis sampler.
    Mcmc(McmcArgs),
    /// Residual test and compensator band for a fitted catalog.
    Diagnose(DiagnoseArgs),
    /// Fit once per binning in a grid and tabulate convergence.
    SweepBins(SweepArgs),
    /// Monte Carlo summaries of the preset priors.
    PriorTable(PriorTableArgs),
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    /// Prior set, overriding `priors.preset`.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Scaled gamma family, overriding `priors.gamma_scale`.
    #[arg(long)]
    pub gamma_scale: Option<f64>,
    /// Separate tied event times by EPS days per tie rank.
    #[arg(long, value_name = "EPS", num_args = 0..=1, default_missing_value = "1e-9")]
    pub jitter_ties: Option<f64>,
}

impl PriorArgs {
    fn apply(&self, config: &mut Config) {
        if let Some(p) = self.preset {
            config.priors.preset = p;
        }
        if self.gamma_scale.is_some() {
            config.priors.gamma_scale = self.gamma_scale;
        }
        if self.jitter_ties.is_some() {
            config.catalog.jitter_ties = self.jitter_ties;
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Catalog output.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest output; defaults to `<out>.manifest.toml`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Result file (TOML).
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for the posterior draws behind the reported quantiles.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub priors: PriorArgs,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub growth: Option<f64>,
    #[arg(long)]
    pub n_max: Option<u32>,
    #[arg(long)]
    pub max_outer: Option<usize>,
}

#[derive(Debug, Args)]
pub struct McmcArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Chains output (delimited).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub priors: PriorArgs,
    #[arg(long)]
    pub n_iter: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Start the chain at the posterior mean of a fit result.
    #[arg(long, value_name = "RESULT")]
    pub init: Option<PathBuf>,
    /// Acceptance rates, effective sample sizes and marginals (TOML).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    /// Result file written by `fit`.
    #[arg(long)]
    pub result: PathBuf,
    /// Compensator band output (delimited).
    #[arg(long)]
    pub out: PathBuf,
    /// Residual test report (TOML); printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use a result that did not converge.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Comparison table output (delimited).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub priors: PriorArgs,
    /// Geometric growth factors of the bin lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 5.0, 7.0, 10.0])]
    pub growth: Vec<f64>,
    /// First-bin lengths in days.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.5])]
    pub delta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [3, 10])]
    pub n_max: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct PriorTableArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Table output (delimited); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Mcmc(a) => cmd_mcmc(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::SweepBins(a) => cmd_sweep_bins(&a),
        Command::PriorTable(a) => cmd_prior_table(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn load_catalog(path: &Path, config: &Config) -> Result<EventCatalog, CliError> {
    let text = config::read_text(path)?;
    let parsed = parse_catalog(&text, config.window, config.ties())
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if parsed.dropped > 0 {
        warn!("{}: dropped {} rows outside the window or below the cutoff", path.display(), parsed.dropped);
    }
    Ok(parsed.catalog)
}

#[derive(Serialize)]
struct Manifest<'a> {
    etas_version: &'a str,
    seed: u64,
    n_events: usize,
    catalog: String,
    created_unix: u64,
    config: &'a Config,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut config = Config::load(&args.config)?;
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    let params = config
        .params
        .ok_or_else(|| CliError::Usage("config has no [params] section to simulate from".into()))?;
    let mut sim = SimConfig::new(params, config.window, config.simulate.gr_beta, config.seed());
    sim.max_events = config.simulate.max_events;
    sim.validate().map_err(|e| config::usage("simulate", e))?;
    let catalog = simulate(&sim).map_err(numerical)?;
    write_text(&args.out, &catalog.to_delimited())?;

    config.seed = Some(config.seed());
    let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let manifest = Manifest {
        etas_version: env!("CARGO_PKG_VERSION"),
        seed: config.seed(),
        n_events: catalog.len(),
        catalog: args.out.display().to_string(),
        created_unix,
        config: &config,
    };
    let manifest_path = args.manifest.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".manifest.toml");
        PathBuf::from(p)
    });
    let text = toml::to_string(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
    write_text(&manifest_path, &text)?;
    eprintln!("simulated {} events", catalog.len());
    Ok(())
}

fn fit_config(config: &Config, binning: BinningConfig) -> Result<FitConfig, CliError> {
    let mut fc = FitConfig::new(config.priors.resolve()?);
    fc.binning = binning;
    fc.theta0 = config.fit.theta0;
    fc.max_outer = config.fit.max_outer;
    fc.convergence_frac = config.fit.convergence_frac;
    fc.validate().map_err(|e| config::usage("fit", e))?;
    Ok(fc)
}

/// Fits a catalog and builds the result record, without writing it.
pub fn fit_record(catalog: &EventCatalog, config: &Config, binning: BinningConfig) -> Result<FitRecord, CliError> {
    let fc = fit_config(config, binning)?;
    let result = fit(catalog, &fc).map_err(numerical)?;
    FitRecord::new(&result, binning, catalog, config.ties(), config.fit.summary_samples, config.seed())
}

pub fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let mut config = Config::load(&args.config)?;
    args.priors.apply(&mut config);
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    let b = &mut config.binning;
    b.delta = args.delta.or(b.delta);
    b.growth = args.growth.or(b.growth);
    b.n_max = args.n_max.or(b.n_max);
    if let Some(m) = args.max_outer {
        config.fit.max_outer = m;
    }
    let binning = config.binning.resolve()?;
    let catalog = load_catalog(&args.catalog, &config)?;
    let record = fit_record(&catalog, &config, binning)?;
    write_text(&args.out, &record.to_toml())?;
    if record.converged {
        eprintln!("converged after {} iterations", record.iterations);
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "fit did not converge after {} iterations: {}",
            record.iterations,
            record.diagnostic.as_deref().unwrap_or("no diagnostic")
        )))
    }
}

#[derive(Serialize)]
struct McmcReport {
    stuck: bool,
    coordinates: Vec<etas_core::mcmc::CoordinateReport>,
}

pub fn cmd_mcmc(args: &McmcArgs) -> Result<(), CliError> {
    let mut config = Config::load(&args.config)?;
    args.priors.apply(&mut config);
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    let catalog = load_catalog(&args.catalog, &config)?;
    let mut mc = McmcConfig::new(config.priors.resolve()?, config.seed());
    mc.n_iter = args.n_iter.unwrap_or(config.mcmc.n_iter);
    mc.burn_in = args.burn_in.unwrap_or(config.mcmc.burn_in);
    mc.proposal_scales = config.mcmc.proposal_scales;
    mc.theta0 = config.mcmc.theta0;
    if let Some(path) = &args.init {
        mc.theta0 = FitRecord::load(path)?.mean;
    }
    mc.validate().map_err(|e| config::usage("mcmc", e))?;
    let chains = mh_sample(&catalog, &mc).map_err(numerical)?;
    write_text(&args.out, &chains.to_delimited())?;
    if chains.stuck {
        warn!("a coordinate rejected every proposal for a long stretch; the chain may be stuck");
    }
    if let Some(path) = &args.report {
        let report = McmcReport {
            stuck: chains.stuck,
            coordinates: chain_diagnostics(&chains).map_err(numerical)?,
        };
        let text = toml::to_string(&report).map_err(|e| CliError::Numerical(e.to_string()))?;
        write_text(path, &text)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ResidualReport {
    statistic: f64,
    p_value: f64,
    n: usize,
    reject_at_5pct: bool,
    /// Parameters the compensator was evaluated at.
    params: etas_core::EtasParams,
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    let record = FitRecord::load(&args.result)?;
    let posterior = record.posterior()?;
    if !posterior.converged && !args.force {
        return Err(CliError::Numerical(
            "the fit did not converge; pass --force to diagnose it anyway".into(),
        ));
    }
    let text = config::read_text(&args.catalog)?;
    let catalog = parse_catalog(&text, record.window, record.ties())
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.catalog.display())))?
        .catalog;
    let envelope = predictive_band(&catalog, &posterior, args.samples, args.seed, args.force).map_err(numerical)?;
    write_text(&args.out, &envelope.to_delimited())?;

    let params = posterior.posterior_mean_natural();
    let test = residual_test(&catalog, &params).map_err(numerical)?;
    let report = ResidualReport {
        statistic: test.statistic,
        p_value: test.p_value,
        n: test.n,
        reject_at_5pct: test.p_value < 0.05,
        params,
    };
    let text = toml::to_string(&report).map_err(|e| CliError::Numerical(e.to_string()))?;
    match &args.report {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// One row of the binning comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub binning: BinningConfig,
    pub iterations: usize,
    pub converged: bool,
    pub theta_mean: [f64; 5],
    pub theta_sd: [f64; 5],
    /// Natural-scale value at the Gaussian mean (the posterior median).
    pub median: [f64; 5],
    pub diagnostic: String,
}

impl SweepRow {
    pub const HEADER: &'static str = "growth,delta,n_max,iterations,converged,\
theta_mu,theta_k,theta_alpha,theta_c,theta_p,sd_mu,sd_k,sd_alpha,sd_c,sd_p,\
mu,k,alpha,c,p,diagnostic";

    fn from_record(binning: BinningConfig, r: &FitRecord) -> Self {
        let posterior = r.priors.to_natural(&r.mean.into());
        Self {
            binning,
            iterations: r.iterations,
            converged: r.converged,
            theta_mean: r.mean,
            theta_sd: std::array::from_fn(|j| r.marginals[j].theta_sd),
            median: posterior.as_array(),
            diagnostic: r.diagnostic.clone().unwrap_or_default(),
        }
    }

    fn failed(binning: BinningConfig, e: &CliError) -> Self {
        Self {
            binning,
            iterations: 0,
            converged: false,
            theta_mean: [f64::NAN; 5],
            theta_sd: [f64::NAN; 5],
            median: [f64::NAN; 5],
            diagnostic: e.to_string(),
        }
    }

    pub fn to_delimited(&self) -> String {
        let nums: Vec<String> = self
            .theta_mean
            .iter()
            .chain(&self.theta_sd)
            .chain(&self.median)
            .map(|v| v.to_string())
            .collect();
        format!(
            "{},{},{},{},{},{},\"{}\"",
            self.binning.growth,
            self.binning.delta,
            self.binning.n_max,
            self.iterations,
            self.converged,
            nums.join(","),
            self.diagnostic.replace('"', "'")
        )
    }
}

/// Fits every binning in the grid (in parallel) and returns the rows
/// ordered by iteration count, grid order breaking ties.
pub fn sweep_rows(catalog: &EventCatalog, config: &Config, grid: &[BinningConfig]) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|&b| match fit_record(catalog, config, b) {
            Ok(r) => SweepRow::from_record(b, &r),
            Err(e) => SweepRow::failed(b, &e),
        })
        .collect();
    rows.sort_by_key(|r| r.iterations);
    rows
}

pub fn cmd_sweep_bins(args: &SweepArgs) -> Result<(), CliError> {
    let mut config = Config::load(&args.config)?;
    args.priors.apply(&mut config);
    // the table reports the Gaussian approximation only
    config.fit.summary_samples = 1;
    let catalog = load_catalog(&args.catalog, &config)?;
    let mut grid = Vec::new();
    for &growth in &args.growth {
        for &delta in &args.delta {
            for &n_max in &args.n_max {
                grid.push(BinningConfig::new(delta, growth, n_max).map_err(|e| config::usage("grid", e))?);
            }
        }
    }
    if grid.is_empty() {
        return Err(CliError::Usage("empty binning grid".into()));
    }
    let rows = sweep_rows(&catalog, &config, &grid);
    let mut out = String::from(SweepRow::HEADER);
    out.push('\n');
    for r in &rows {
        out.push_str(&r.to_delimited());
        out.push('\n');
    }
    write_text(&args.out, &out)
}

fn summary_line(name: &str, s: &QuantileSummary) -> String {
    format!("{name},{},{},{},{},{},{},{}\n", s.mean, s.sd, s.q01, s.q25, s.q50, s.q75, s.q99)
}

pub fn cmd_prior_table(args: &PriorTableArgs) -> Result<(), CliError> {
    if args.samples < 2 {
        return Err(CliError::Usage("need at least 2 samples".into()));
    }
    let mut out = String::from("prior,mean,sd,q01,q25,q50,q75,q99\n");
    let kb = empirical_kb_prior(args.samples, args.seed).map_err(numerical)?;
    out.push_str(&summary_line("kb_uniform_implied", &kb));
    let replicate = etas_core::EtasPriors::replicate();
    let s = prior_summary(&replicate.k, args.samples, args.seed).map_err(numerical)?;
    out.push_str(&summary_line("kb_lognormal", &s));
    let gamma = etas_core::EtasPriors::gamma();
    for (name, spec) in PARAM_NAMES.iter().zip(gamma.as_array()) {
        let s = prior_summary(&spec, args.samples, args.seed).map_err(numerical)?;
        out.push_str(&summary_line(&format!("gamma_{name}"), &s));
    }
    match &args.out {
        Some(path) => write_text(path, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}
