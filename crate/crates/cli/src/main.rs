//! `consensus`: simulate, run experiments, verify against the oracle and
//! check signal models.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 no certified
//! consensus within the round cap, 3 engine and oracle disagree.

use clap::{Args, Parser, Subcommand};
use consensus_core::config::{self, ModelSpec};
use consensus_core::harness::{self, summary_json};
use consensus_core::oracle::{run_verification, VerifyBudget};
use consensus_core::{ExperimentConfig, Simulation, TieRule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_UNCERTIFIED: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "consensus", version, about = "Bayesian consensus by repeated voting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play one run to consensus and print its transcript.
    Simulate(SimulateArgs),
    /// Run the configured Monte Carlo experiment and write results.csv and summary.json.
    Experiment(ExperimentArgs),
    /// Compare the engine with the exhaustive oracle on random discrete instances.
    Verify(VerifyArgs),
    /// Check the model in a config file and report its diagnostics.
    ValidateModel(ValidateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_rounds: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing results.
    #[arg(long)]
    force: bool,
    #[arg(long, env = "CONSENSUS_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    max_rounds: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Random instances on top of the built-in ones.
    #[arg(long, default_value_t = VerifyBudget::default().instances)]
    instances: usize,
    #[arg(long, default_value_t = VerifyBudget::default().agents)]
    agents: usize,
    #[arg(long, default_value_t = VerifyBudget::default().max_atoms)]
    max_atoms: usize,
    #[arg(long, default_value_t = VerifyBudget::default().rounds)]
    rounds: usize,
    #[arg(long, default_value_t = VerifyBudget::default().seed)]
    seed: u64,
    /// Break exact ties toward 1 in the engine (mutation check).
    #[arg(long, hide = true)]
    tie_vote_one: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    read(path)?.parse().map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn override_rounds(config: &mut ExperimentConfig, max_rounds: Option<usize>) -> Result<(), Failure> {
    if let Some(k) = max_rounds {
        if k == 0 {
            return Err(fail(EXIT_CONFIG, "--max-rounds must be at least 1"));
        }
        config.max_rounds = k;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let mut config = load(&args.config)?;
    override_rounds(&mut config, args.max_rounds)?;
    let seed = args.seed.unwrap_or(config.seed);
    let n = config.agents[0];
    if config.agents.len() > 1 {
        eprintln!("note: simulating the first agent count, n={n}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = Simulation::sample(&config.model, n, &mut rng)
        .and_then(|mut sim| sim.run_until_consensus(config.max_rounds).map(|()| sim.result()))
        .map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    print!("{}", result.transcript());
    if result.certified {
        Ok(0)
    } else {
        eprintln!("no certified consensus within {} rounds", config.max_rounds);
        Ok(EXIT_UNCERTIFIED)
    }
}

fn experiment(args: ExperimentArgs) -> Result<u8, Failure> {
    let mut config = load(&args.config)?;
    override_rounds(&mut config, args.max_rounds)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(fail(EXIT_CONFIG, "--workers must be at least 1"));
        }
        config.workers = Some(w);
    }
    if config.kind.is_none() {
        return Err(fail(EXIT_CONFIG, format!("{}: missing required key `experiment`", args.config.display())));
    }
    let dir = args
        .out
        .or_else(|| config.out.clone())
        .ok_or_else(|| fail(EXIT_CONFIG, "no output directory: set `out` in the config or pass --out"))?;
    let csv_path = dir.join("results.csv");
    let json_path = dir.join("summary.json");
    if !args.force {
        if let Some(existing) = [&csv_path, &json_path].into_iter().find(|p| p.exists()) {
            return Err(fail(EXIT_CONFIG, format!("{} exists; pass --force to overwrite", existing.display())));
        }
    }

    let output = harness::run_experiment(&config).map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    let io = |p: &Path, e: std::io::Error| fail(EXIT_CONFIG, format!("{}: {e}", p.display()));
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    fs::write(&csv_path, output.table.to_csv()).map_err(|e| io(&csv_path, e))?;
    fs::write(&json_path, summary_json(&config, &output)).map_err(|e| io(&json_path, e))?;
    eprintln!("run {}: {} rows written to {}", harness::run_id(&config), output.table.rows.len(), dir.display());
    if output.uncertified > 0 {
        eprintln!("{} trials reached no certified consensus within {} rounds", output.uncertified, config.max_rounds);
        return Ok(EXIT_UNCERTIFIED);
    }
    Ok(0)
}

fn verify(args: VerifyArgs) -> Result<u8, Failure> {
    let budget = VerifyBudget {
        instances: args.instances,
        agents: args.agents,
        max_atoms: args.max_atoms,
        rounds: args.rounds,
        seed: args.seed,
    };
    let tie_rule = if args.tie_vote_one { TieRule::VoteOne } else { TieRule::VoteZero };
    if budget.instances == 0 {
        eprintln!("warning: --instances 0, nothing verified");
        return Ok(0);
    }
    let reports = run_verification(&budget, tie_rule).map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    let mut diverged = 0;
    for (id, report) in &reports {
        println!("{}", report.line(id));
        diverged += usize::from(!report.is_match());
    }
    if diverged > 0 {
        println!("FAIL {diverged} of {} instances diverge", reports.len());
        return Ok(EXIT_DIVERGENCE);
    }
    println!("OK {} instances match", reports.len());
    Ok(0)
}

fn validate_model(args: ValidateArgs) -> Result<u8, Failure> {
    let text = read(&args.config)?;
    let model =
        config::model_from_file(&text).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", args.config.display())))?;
    let report = model.validate_model();
    println!("model = {}", ModelSpec(&model));
    println!("E[exp(-X) | S=1] = {}", report.inverse_likelihood_mean);
    if report.is_valid() {
        println!("valid");
        return Ok(0);
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    Ok(EXIT_CONFIG)
}

fn main() -> ExitCode {
    // clap's own usage-error code (2) would collide with the uncertified code
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Experiment(a) => experiment(a),
        Command::Verify(a) => verify(a),
        Command::ValidateModel(a) => validate_model(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
