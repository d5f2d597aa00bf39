use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use impactlab::env::{build_named_env, compile_to_mdp, pathology, ENV_NAMES};
use impactlab::experiment::{self, RawConfig, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_VERIFY};
use impactlab::verify::{format_report, selected, verify, Fault, VerifyOptions};
use impactlab::Error;

#[derive(Parser)]
#[command(name = "impactlab", version, about = "Low-impact agency lab: baselines, impact measures and penalized planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in environments.
    ListEnvs {
        /// Also compile each environment and show its size.
        #[arg(long)]
        verbose: bool,
    },
    /// Sweep the penalty weight and write sweep.csv, frontier.csv, sweep.svg and run.meta.
    Run(RunArgs),
    /// Run the acceptance suite and print one line per criterion.
    Verify {
        /// Only criteria whose name contains this text (or with this number).
        #[arg(long)]
        filter: Option<String>,
        /// Inject a known defect to check that the suite catches it.
        #[arg(long, hide = true, value_parser = ["rr-sign-flip"])]
        inject_fault: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in environment name.
    #[arg(long, conflicts_with = "env_file")]
    env: Option<String>,
    /// Environment in the text format.
    #[arg(long)]
    env_file: Option<PathBuf>,
    /// initial-state, initial-inaction or stepwise.
    #[arg(long)]
    baseline: Option<String>,
    /// Inaction rollout length for the stepwise baseline.
    #[arg(long)]
    tau: Option<usize>,
    /// Impact measure, e.g. relative-reachability or aup.
    #[arg(long)]
    measure: Option<String>,
    /// relu or abs (value-difference only).
    #[arg(long)]
    shape: Option<String>,
    /// a:b:n(log|lin) or a comma list.
    #[arg(long)]
    mu_grid: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn to_raw(&self) -> RawConfig {
        let mut raw = RawConfig::default();
        raw.env.name = self.env.clone();
        raw.env.file = self.env_file.clone();
        raw.env.gamma = self.gamma;
        raw.baseline.kind = self.baseline.clone();
        raw.baseline.tau = self.tau;
        raw.measure.kind = self.measure.clone();
        raw.measure.shape = self.shape.clone();
        raw.planner.mu_grid = self.mu_grid.clone();
        raw.run.tol = self.tol;
        raw.run.seed = self.seed;
        raw.run.out = self.out.clone();
        raw
    }
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn list_envs(verbose: bool) -> i32 {
    for name in ENV_NAMES {
        let about = pathology(name).unwrap_or_default();
        if verbose {
            match build_named_env(name).and_then(|e| compile_to_mdp(&e)) {
                Ok(env) => println!(
                    "{name:<18} {:>6} states {:>2} actions  {about}",
                    env.n_states(),
                    env.mdp.n_actions()
                ),
                Err(e) => {
                    eprintln!("{name}: {e}");
                    return EXIT_RUNTIME;
                }
            }
        } else {
            println!("{name:<18} {about}");
        }
    }
    EXIT_OK
}

fn run(args: &RunArgs) -> i32 {
    let base = match &args.config {
        Some(path) => match RawConfig::load(path) {
            Ok(raw) => raw,
            Err(e) => {
                eprintln!("config error: {e}");
                return EXIT_CONFIG;
            }
        },
        None => RawConfig::default(),
    };
    let cfg = match base.merge(args.to_raw()).resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let report = match experiment::run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return error_code(&e);
        }
    };
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("mu={}: {}", row.mu, row.error.as_deref().unwrap_or_default());
    }
    println!("{} rows", report.rows.len());
    if report.safe_effective.is_empty() {
        println!("no safe and effective mu on this grid");
    }
    for (lo, hi) in &report.safe_effective {
        println!("safe and effective: mu in [{lo}, {hi}]");
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    if report.has_errors() {
        EXIT_RUNTIME
    } else {
        EXIT_OK
    }
}

fn verify_cmd(filter: Option<String>, fault: Option<String>) -> i32 {
    if selected(filter.as_deref()).is_empty() {
        eprintln!("no criterion matches '{}'", filter.unwrap_or_default());
        return EXIT_CONFIG;
    }
    let opts = VerifyOptions {
        filter,
        fault: fault.map(|_| Fault::FlipRelativeReachability),
    };
    let results = verify(&opts);
    print!("{}", format_report(&results));
    if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_VERIFY
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("IMPACTLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    exit(match cli.command {
        Command::ListEnvs { verbose } => list_envs(verbose),
        Command::Run(args) => run(&args),
        Command::Verify { filter, inject_fault } => verify_cmd(filter, inject_fault),
    })
}
