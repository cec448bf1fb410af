use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use intersim::emissions::{EmissionCoefficients, EmissionsError, Pollutant, DEFAULT_CLASS, PC_G_EU4_CSV};
use intersim::harness::{emit_results, emit_sweep, evaluate, parse_rates, sweep, EvalConfig, HarnessError};
use intersim::policies::{PolicyError, PolicyHandle};
use intersim::topology::{load_scenario, paper4, NetworkSpec, ScenarioError};

const EXIT_VALIDATION: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "intersim", version, about = "Mixed-autonomy intersection simulator and experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one policy at one RV penetration rate over several seeds.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// RV penetration rate in [0, 1].
        #[arg(long, default_value_t = 1.0)]
        rv_rate: f64,
        /// Per-tick trajectory CSV for the first seed.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Evaluate a policy at several penetration rates plus the signal baseline.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `start:end:step` (inclusive) or a comma list; empty for baseline only.
        #[arg(long, default_value = "0.1:1.0:0.1")]
        rates: String,
    },
    /// Host the environment wire protocol.
    Serve {
        /// `host:port`, `tcp://host:port`, or `stdio`.
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
    },
    /// Print the loaded emission coefficients.
    EmissionsTable {
        #[arg(long, default_value = DEFAULT_CLASS)]
        class: String,
        /// Coefficient CSV; the bundled table when omitted.
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file, or `paper4` for the bundled four-intersection network.
    #[arg(long, default_value = "paper4")]
    scenario: String,
    /// `signal`, `fcfs`, or `external <tcp://host:port>`.
    #[arg(long, default_value = "fcfs")]
    policy: String,
    /// Endpoint for `--policy external`.
    #[arg(long)]
    endpoint: Option<String>,
    /// First seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of seeded runs (seeds `seed`, `seed + 1`, ...).
    #[arg(long, default_value_t = 10)]
    runs: u64,
    #[arg(long, default_value_t = 1000)]
    duration: u64,
    #[arg(long, default_value_t = 500)]
    window: u64,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Concurrent episodes; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

impl Common {
    fn scenario(&self) -> Result<(String, Arc<NetworkSpec>)> {
        if self.scenario == "paper4" {
            return Ok(("paper4".into(), Arc::new(paper4())));
        }
        let net = load_scenario(&self.scenario).with_context(|| format!("loading scenario {}", self.scenario))?;
        Ok((net.name.clone(), Arc::new(net)))
    }

    fn policy(&self) -> Result<PolicyHandle> {
        let text = match (&self.endpoint, self.policy.as_str()) {
            (Some(e), "external") => format!("external {e}"),
            (Some(_), _) => bail!(PolicyError::Unknown(format!("{} with --endpoint", self.policy))),
            (None, p) => p.to_string(),
        };
        Ok(text.parse::<PolicyHandle>()?)
    }

    fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            duration_s: self.duration,
            window_s: self.window,
            seeds: (self.seed..self.seed + self.runs).collect(),
            dt: self.dt,
            workers: self.workers,
            ..EvalConfig::default()
        }
    }
}

/// Number of conflict-monitor events, which the run treats as an invariant breach.
fn run(cli: Cli) -> Result<u64> {
    match cli.command {
        Command::Simulate { common, rv_rate, trajectory } => {
            let (name, net) = common.scenario()?;
            let policy = common.policy()?;
            let cfg = EvalConfig { trajectory, ..common.eval_config() };
            let report = evaluate(&name, &net, &policy, rv_rate, &cfg)?;
            emit_results(&report, &common.out)?;
            let avg = &report.intersection_average;
            println!(
                "{} {} at {}: fuel {:.6} ml/s (4-intersection mean), conflicts {}; results in {}",
                name,
                policy,
                report.label,
                avg.values[Pollutant::Fuel.index()].unwrap_or(f64::NAN),
                report.total_conflicts(),
                common.out.display()
            );
            Ok(report.total_conflicts())
        }
        Command::Sweep { common, rates } => {
            let (name, net) = common.scenario()?;
            let policy = common.policy()?;
            let rates = parse_rates(&rates)?;
            let report = sweep(&name, &net, &policy, &rates, &common.eval_config())?;
            emit_sweep(&report, &common.out)?;
            println!("{} columns written to {}", report.reports.len(), common.out.join("sweep.csv").display());
            Ok(report.reports.iter().map(|r| r.total_conflicts()).sum())
        }
        Command::Serve { listen } => {
            eprintln!("serving on {listen}");
            intersim::protocol::serve(&listen)?;
            Ok(0)
        }
        Command::EmissionsTable { class, file } => {
            let coeffs = match file {
                Some(path) => EmissionCoefficients::load(&path, &class)?,
                None => EmissionCoefficients::from_csv_str(PC_G_EU4_CSV, &class)?,
            };
            println!("class,pollutant,unit,f1,f2,f3,f4,f5,f6,scale");
            for p in Pollutant::ALL {
                let f = coeffs.get(p);
                println!("{},{},{},{},{},{},{},{},{},{}", coeffs.class, p, p.unit(), f[0], f[1], f[2], f[3], f[4], f[5], coeffs.scale);
            }
            Ok(0)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return match h {
                h if h.is_invariant_breach() => EXIT_INVARIANT,
                HarnessError::Config(_) | HarnessError::Demand(_) | HarnessError::Policy(PolicyError::MissingSignalPlan(_)) => {
                    EXIT_VALIDATION
                }
                _ => 1,
            };
        }
        if cause.is::<ScenarioError>() || cause.is::<PolicyError>() || cause.is::<EmissionsError>() {
            return EXIT_VALIDATION;
        }
    }
    1
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("error: conflict monitor recorded {n} violation(s); see conflicts.csv");
            ExitCode::from(EXIT_INVARIANT)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
