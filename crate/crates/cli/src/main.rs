use clap::{Args, Parser, Subcommand};
use linprobit::bench::IngestionSpec;
use linprobit_cli::config::{
    self, BenchConfig, DatasetEntry, EstimateConfig, Format, RunConfig, Sabotage, SweepConfig, VerifyConfig,
};
use linprobit_cli::{cmd_bench, cmd_estimate, cmd_sweep, cmd_verify, CliError, EXIT_CONFIG, EXIT_OK};
use linprobit::estimators::{EstimatorId, SolverConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "linprobit", version, about = "Linearized probit regression: sweeps, benchmarks, estimation")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MSE versus SNR on synthetic problems.
    Sweep(SweepArgs),
    /// Cross-validated ACC/AUC on CSV datasets.
    Bench(BenchArgs),
    /// Fit one estimator to a design and observation vector.
    Estimate(EstimateArgs),
    /// Run the self-verification suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct Chains {
    /// Comma-separated estimator names (LMMSE, LS, MAP, ML, LogitMAP, PM).
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    gibbs_samples: Option<usize>,
    #[arg(long)]
    gibbs_burn_in: Option<usize>,
    /// Use 50,000 kept Gibbs samples after 20,000 burn-in.
    #[arg(long)]
    full_chains: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    chains: Chains,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated SNR values in dB.
    #[arg(long, allow_hyphen_values = true)]
    snr_grid: Option<String>,
    /// Comma-separated sizes, e.g. `10x5,50x20`.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    sigma_x_sq: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    chains: Chains,
    /// Dataset CSV; repeatable.
    #[arg(long = "dataset")]
    datasets: Vec<PathBuf>,
    /// Ingestion spec JSON used for datasets without a sidecar spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Shorthand for a spec with only a label column.
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    partitions: Option<usize>,
    /// Comma-separated sigma_x^2 grid.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Headerless CSV design matrix, one row per measurement.
    #[arg(long)]
    design: PathBuf,
    /// Headerless CSV of observations.
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    estimator: Option<EstimatorId>,
    #[arg(long)]
    sigma_x_sq: Option<f64>,
    #[arg(long)]
    sigma_w_sq: Option<f64>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    gibbs_samples: Option<usize>,
    #[arg(long)]
    gibbs_burn_in: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo sample count for every check.
    #[arg(long)]
    trials: Option<usize>,
    /// Inject a known defect (negative control).
    #[arg(long, value_enum)]
    sabotage: Option<Sabotage>,
}

fn apply_chains(chains: &Chains, solver: &mut SolverConfig, estimators: &mut Vec<EstimatorId>) -> Result<(), CliError> {
    if chains.full_chains {
        let full = SolverConfig::default();
        solver.gibbs_samples = full.gibbs_samples;
        solver.gibbs_burn_in = full.gibbs_burn_in;
    }
    if let Some(v) = chains.gibbs_samples {
        solver.gibbs_samples = v;
    }
    if let Some(v) = chains.gibbs_burn_in {
        solver.gibbs_burn_in = v;
    }
    if let Some(list) = &chains.estimators {
        *estimators = config::parse_estimators(list)?;
    }
    Ok(())
}

fn sweep_config(a: &SweepArgs) -> Result<SweepConfig, CliError> {
    let mut c: SweepConfig = config::read_config(a.common.config.as_deref())?;
    c.seed = a.common.seed.unwrap_or(c.seed);
    c.output = a.common.output.clone().or(c.output);
    c.format = a.common.format.unwrap_or(c.format);
    c.trials = a.trials.unwrap_or(c.trials);
    c.sigma_x_sq = a.sigma_x_sq.unwrap_or(c.sigma_x_sq);
    if let Some(g) = &a.snr_grid {
        c.snr_grid_db = config::parse_reals(g, "--snr-grid")?;
    }
    if let Some(s) = &a.sizes {
        c.sizes = config::parse_sizes(s)?;
    }
    apply_chains(&a.chains, &mut c.solver, &mut c.estimators)?;
    Ok(c)
}

fn bench_config(a: &BenchArgs) -> Result<BenchConfig, CliError> {
    let mut c: BenchConfig = config::read_config(a.common.config.as_deref())?;
    c.plan.seed = a.common.seed.unwrap_or(c.plan.seed);
    c.output = a.common.output.clone().or(c.output);
    c.format = a.common.format.unwrap_or(c.format);
    c.plan.folds = a.folds.unwrap_or(c.plan.folds);
    c.plan.partitions = a.partitions.unwrap_or(c.plan.partitions);
    if let Some(g) = &a.grid {
        c.grid = config::parse_reals(g, "--grid")?;
    }
    if let Some(path) = &a.spec {
        c.spec = Some(config::read_config::<SpecFile>(Some(path))?.0);
    } else if let Some(label) = &a.label_column {
        c.spec = Some(IngestionSpec::new(label.clone()));
    }
    c.datasets
        .extend(a.datasets.iter().map(|p| DatasetEntry { path: p.clone(), spec: None }));
    apply_chains(&a.chains, &mut c.solver, &mut c.estimators)?;
    Ok(c)
}

/// Reads an ingestion spec through the strict config reader.
#[derive(serde::Deserialize)]
#[serde(transparent)]
struct SpecFile(IngestionSpec);

impl Default for SpecFile {
    fn default() -> Self {
        SpecFile(IngestionSpec::new(""))
    }
}

fn estimate_config(a: &EstimateArgs) -> Result<EstimateConfig, CliError> {
    let mut c: EstimateConfig = config::read_config(a.common.config.as_deref())?;
    c.seed = a.common.seed.unwrap_or(c.seed);
    c.output = a.common.output.clone().or(c.output);
    c.estimator = a.estimator.unwrap_or(c.estimator);
    c.sigma_x_sq = a.sigma_x_sq.unwrap_or(c.sigma_x_sq);
    c.sigma_w_sq = a.sigma_w_sq.unwrap_or(c.sigma_w_sq);
    c.smoothing = a.smoothing.unwrap_or(c.smoothing);
    c.solver.gibbs_samples = a.gibbs_samples.unwrap_or(c.solver.gibbs_samples);
    c.solver.gibbs_burn_in = a.gibbs_burn_in.unwrap_or(c.solver.gibbs_burn_in);
    Ok(c)
}

fn verify_config(a: &VerifyArgs) -> Result<VerifyConfig, CliError> {
    let mut c: VerifyConfig = config::read_config(a.config.as_deref())?;
    c.seed = a.seed.unwrap_or(c.seed);
    c.trials = a.trials.or(c.trials);
    c.sabotage = a.sabotage.or(c.sabotage);
    Ok(c)
}

fn print_config(c: RunConfig) -> Result<i32, CliError> {
    println!("{}", serde_json::to_string_pretty(&c).map_err(CliError::runtime)?);
    Ok(EXIT_OK)
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Sweep(a) => {
            let c = sweep_config(a)?;
            if cli.print_config {
                return print_config(RunConfig::Sweep(c));
            }
            cmd_sweep(&c).map(|_| EXIT_OK)
        }
        Command::Bench(a) => {
            let c = bench_config(a)?;
            if cli.print_config {
                return print_config(RunConfig::Bench(c));
            }
            cmd_bench(&c)
        }
        Command::Estimate(a) => {
            let c = estimate_config(a)?;
            if cli.print_config {
                return print_config(RunConfig::Estimate(c));
            }
            cmd_estimate(&c, &a.design, &a.observations).map(|_| EXIT_OK)
        }
        Command::Verify(a) => {
            let c = verify_config(a)?;
            if cli.print_config {
                return print_config(RunConfig::Verify(c));
            }
            Ok(cmd_verify(&c))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let code = pool.install(|| match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    });
    ExitCode::from(code as u8)
}
