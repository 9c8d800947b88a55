use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use stratlearn::baseline::{grid_hindsight_optimum, hindsight_optimum, numeric_best_response};
use stratlearn::costs::CostSpec;
use stratlearn::harness::{self, emit, ExperimentConfig};
use stratlearn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "stratlearn",
    version,
    about = "Online linear classification against strategic agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv, report.json, config-echo.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip rounds.csv.
        #[arg(long)]
        no_round_log: bool,
    },
    /// Run a (θ, n) grid with replicates and write sweep.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        n_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        theta_grid: Vec<f64>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and print the derived schedule and constants.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Reference solvers, printed as JSON.
    #[command(subcommand)]
    Oracle(Oracle),
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, value_parser = parse_exponent)]
    p: f64,
    #[arg(long)]
    r: f64,
    /// Row-major transform; identity when omitted.
    #[arg(long = "A", value_delimiter = ',', allow_hyphen_values = true)]
    a: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-12)]
    eps: f64,
}

impl CostArgs {
    fn build(&self, d: usize) -> Result<CostSpec> {
        match &self.a {
            Some(a) => CostSpec::from_row_major(self.p, self.r, d, a, self.eps),
            None => CostSpec::new(self.p, self.r, nalgebra::DMatrix::identity(d, d), self.eps),
        }
    }
}

#[derive(Subcommand)]
enum Oracle {
    /// Closed-form best response next to the numeric utility maximizer.
    BestResponse {
        #[command(flatten)]
        cost: CostArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        beta: Vec<f64>,
    },
    /// Conjugate value and subgradient at β.
    Conjugate {
        #[command(flatten)]
        cost: CostArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        beta: Vec<f64>,
    },
    /// Hindsight optimum of a config's stream by subgradient descent.
    Hindsight {
        #[arg(long)]
        config: PathBuf,
    },
    /// Hindsight optimum of a config's stream by grid search (d ≤ 3).
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-2)]
        resolution: f64,
    },
}

fn parse_exponent(text: &str) -> std::result::Result<f64, String> {
    match text.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        other => other.parse().map_err(|e| format!("{e}")),
    }
}

fn out_dir(config: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| config.out.as_ref().map(|p| config.base_dir.join(p)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>, no_round_log: bool) -> Result<()> {
    let config = load(&config, seed)?;
    let dir = emit::ensure_dir(&out_dir(&config, out))?;
    emit::write_config_echo(&dir, &config)?;
    match harness::run_experiment(&config) {
        Ok((records, report)) => {
            if !no_round_log {
                emit::write_rounds(&dir.join(emit::ROUNDS_FILE), config.d, &records)?;
            }
            emit::write_json(&dir.join(emit::REPORT_FILE), &report)?;
            eprintln!(
                "n={} cum_loss={:.6} baseline={:.6} (gap {:.2e}) regret={:.6}",
                report.n, report.cum_loss, report.baseline_loss, report.baseline_gap, report.regret
            );
            Ok(())
        }
        Err(aborted) => {
            let path = dir.join(emit::ROUNDS_FILE);
            emit::write_rounds(&path, config.d, &aborted.records)?;
            eprintln!(
                "aborted after {} rounds; partial log at {}",
                aborted.records.len(),
                path.display()
            );
            Err(aborted.error)
        }
    }
}

fn sweep(
    config: PathBuf,
    n_grid: Vec<usize>,
    theta_grid: Vec<f64>,
    replicates: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = load(&config, seed)?;
    let replicates = replicates.unwrap_or(config.replicates);
    let table = harness::sweep(&config, &n_grid, &theta_grid, replicates)?;
    let dir = emit::ensure_dir(&out_dir(&config, out))?;
    emit::write_config_echo(&dir, &config)?;
    emit::write_json(&dir.join(emit::SWEEP_FILE), &table)?;
    println!(
        "{:>6} {:>10} {:>14} {:>12} {:>14}",
        "theta", "n", "mean_regret", "std", "bound"
    );
    for cell in &table.cells {
        match (&cell.error, cell.mean_regret, cell.std_regret, cell.regret_bound) {
            (None, Some(m), Some(s), Some(b)) => {
                println!("{:>6} {:>10} {:>14.4} {:>12.4} {:>14.4}", cell.theta, cell.n, m, s, b)
            }
            (err, ..) => println!(
                "{:>6} {:>10} error: {}",
                cell.theta,
                cell.n,
                err.as_deref().unwrap_or("?")
            ),
        }
    }
    for s in &table.slopes {
        match s.gamma_fit {
            Some(g) => println!("theta={} gamma_fit={g:.4}", s.theta),
            None => println!("theta={} gamma_fit=n/a", s.theta),
        }
    }
    Ok(())
}

fn validate(config: PathBuf) -> Result<()> {
    let config = ExperimentConfig::load(&config)?;
    let prep = harness::prepare(&config, 0)?;
    print_json(&json!({
        "n": prep.n,
        "d": prep.d,
        "theta_realized": prep.theta_realized,
        "theta_hat": prep.schedule.theta_hat,
        "delta": prep.schedule.delta,
        "eta": prep.schedule.eta,
        "M": prep.constants.m,
        "L": prep.constants.l,
        "C": prep.constants.c,
        "regret_bound": prep.regret_bound(),
    }));
    Ok(())
}

fn oracle(cmd: Oracle) -> Result<()> {
    match cmd {
        Oracle::BestResponse { cost, x, beta } => {
            let spec = cost.build(x.len())?;
            let br = spec.best_response(&x, &beta)?;
            let numeric = if spec.is_degenerate() {
                None
            } else {
                Some(numeric_best_response(&spec, &x, &beta, 100_000, 1e-6)?)
            };
            let numeric_utility = numeric.as_ref().map(|xn| spec.utility(&x, xn, &beta)).transpose()?;
            print_json(&json!({
                "xhat": br.xhat,
                "inner": br.inner,
                "utility": spec.utility(&x, &br.xhat, &beta)?,
                "numeric_xhat": numeric,
                "numeric_utility": numeric_utility,
            }));
        }
        Oracle::Conjugate { cost, beta } => {
            let spec = cost.build(beta.len())?;
            print_json(&json!({
                "dual_norm": spec.dual_norm(&beta)?,
                "value": if spec.is_degenerate() { None } else { Some(spec.conjugate_value(&beta)?) },
                "subgradient": if spec.is_degenerate() { None } else { Some(spec.conjugate_subgradient(&beta)?) },
            }));
        }
        Oracle::Hindsight { config } => {
            let config = ExperimentConfig::load(&config)?;
            let prep = harness::prepare(&config, 0)?;
            let sol = hindsight_optimum(
                &prep.agents,
                prep.kind,
                prep.radius,
                prep.d,
                prep.budget.iterations,
                prep.budget.tol,
            )?;
            print_json(&serde_json::to_value(&sol).expect("serializable"));
        }
        Oracle::Grid { config, resolution } => {
            let config = ExperimentConfig::load(&config)?;
            let prep = harness::prepare(&config, 0)?;
            let sol = grid_hindsight_optimum(&prep.agents, prep.kind, prep.radius, prep.d, resolution)?;
            print_json(&serde_json::to_value(&sol).expect("serializable"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: std::result::Result<(), Error> = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            no_round_log,
        } => run(config, seed, out, no_round_log),
        Command::Sweep {
            config,
            n_grid,
            theta_grid,
            replicates,
            seed,
            out,
        } => sweep(config, n_grid, theta_grid, replicates, seed, out),
        Command::Validate { config } => validate(config),
        Command::Oracle(cmd) => oracle(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
