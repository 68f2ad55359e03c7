use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rcrt::{
    bound_span_prob, chernoff_success, exact_span_prob, run_experiment, solve_set, Algorithm,
    EnsembleConfig, ExperimentConfig, ObjectiveMode, ObservationFile, SolveOptions,
};

#[derive(Parser)]
#[command(name = "rcrt", about = "Statistical robust CRT reconstruction harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded Monte Carlo sweep over an SNR grid and write a CSV.
    Simulate(SimulateArgs),
    /// Reconstruct the numbers behind one observation file.
    Solve(SolveArgs),
    /// Closed-form probability calculators.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Algo1,
    Algo2,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Algo1 => Algorithm::Algo1,
            AlgoArg::Algo2 => Algorithm::Algo2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Full,
    Literal,
}

impl From<ObjectiveArg> for ObjectiveMode {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Full => ObjectiveMode::FullPosterior,
            ObjectiveArg::Literal => ObjectiveMode::Theorem1Literal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Clone, Copy)]
struct EnsembleArg(Option<EnsembleConfig>);

fn parse_ensemble(s: &str) -> Result<EnsembleArg, String> {
    match s {
        "none" => Ok(EnsembleArg(None)),
        "pairs" => Ok(EnsembleArg(Some(EnsembleConfig::all_pairs()))),
        other => match other.strip_prefix("subsets:") {
            Some(size) => {
                let size: usize = size
                    .parse()
                    .map_err(|_| format!("invalid subset size in `{other}`"))?;
                Ok(EnsembleArg(Some(EnsembleConfig::all_subsets(size))))
            }
            None => Err(format!(
                "expected `none`, `pairs`, or `subsets:S`, got `{other}`"
            )),
        },
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of targets N (L defaults to 2N samplers).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 100.0)]
    gamma: f64,
    #[arg(long, default_value_t = -40.0, allow_hyphen_values = true)]
    snr_min: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    snr_max: f64,
    #[arg(long, default_value_t = 1.0)]
    snr_step: f64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, value_enum, default_value = "algo2")]
    algo: AlgoArg,
    #[arg(long, value_enum, default_value = "full")]
    objective: ObjectiveArg,
    /// `none`, `pairs`, or `subsets:S`.
    #[arg(long, value_parser = parse_ensemble, default_value = "none")]
    ensemble: EnsembleArg,
    #[arg(long, value_enum, default_value = "off")]
    ec: Switch,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores); the CSV is identical either way.
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Observation JSON: {"gamma": REAL, "M": [INT...], "R": [[REAL x L] x N]}.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "algo2")]
    algo: AlgoArg,
    #[arg(long, value_enum, default_value = "off")]
    ec: Switch,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Cluster-span probabilities: the exact value and its product bound.
    Bound {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        l: usize,
    },
    /// Chernoff lower bound on majority-vote success.
    Chernoff {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        kappa: usize,
    },
}

fn snr_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if step <= 0.0 {
        bail!("--snr-step must be positive");
    }
    if max < min {
        bail!("--snr-max must be at least --snr-min");
    }
    let mut grid = Vec::new();
    let mut i = 0u64;
    loop {
        let snr = min + i as f64 * step;
        if snr > max + 1e-9 {
            break;
        }
        grid.push(snr);
        i += 1;
    }
    Ok(grid)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::new(args.n);
    cfg.gamma = args.gamma;
    cfg.snr_grid = snr_grid(args.snr_min, args.snr_max, args.snr_step)?;
    cfg.trials = args.trials;
    cfg.algorithm = args.algo.into();
    cfg.objective = args.objective.into();
    cfg.ensemble = args.ensemble.0;
    cfg.ec = args.ec.on();
    cfg.restarts = args.restarts;
    cfg.max_iter = args.max_iter;
    cfg.master_seed = args.seed;
    cfg.workers = args.workers;

    let metrics = run_experiment(&cfg)?;
    let csv = metrics.to_csv();
    match &args.out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let file: ObservationFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.input.display()))?;
    let (ms, obs) = file.into_parts()?;
    let opt = SolveOptions {
        algorithm: args.algo.into(),
        objective: ObjectiveMode::FullPosterior,
        ec: args.ec.on(),
        max_iter: args.max_iter,
        restarts: args.restarts,
    };
    let mut rng = rand::rngs::StdRng::seed_from_u64(args.seed);
    let (recs, _) = solve_set(&obs, &ms, &opt, &mut rng)?;
    for rec in recs {
        println!(
            "{}",
            serde_json::json!({
                "y_hat": rec.y_hat,
                "quotient": rec.quotient as u64,
                "mu_hat": rec.mu_hat,
                "ec_consistency": rec.ec_consistency,
                "reliable": rec.reliable,
            })
        );
    }
    Ok(())
}

fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Bound { sigma, delta, n, l } => {
            let exact = exact_span_prob(sigma, delta, n, l)?;
            let bound = bound_span_prob(sigma, delta, n, l)?;
            println!("exact_span_prob={exact}");
            println!("bound_span_prob={bound}");
        }
        AnalyzeCommand::Chernoff { p, kappa } => {
            let value = chernoff_success(p, kappa)?;
            println!("chernoff_success={value}");
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => simulate(args),
        Command::Solve(args) => solve(args),
        Command::Analyze { what } => analyze(what),
    }
}
