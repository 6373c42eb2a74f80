use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weakctl_core::config::{ExperimentConfig, SynthSpec};
use weakctl_core::error::Result;
use weakctl_core::pipeline::{self, Mode, DEFAULT_DP_DELTA};
use weakctl_core::verify::CheckReport;

/// Optimal control of weakly-controlled gradient flows.
#[derive(Parser)]
#[command(name = "weakctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a generator spec.
    Synth(Common),
    /// Solve for the control and write all artifacts.
    Run(Common),
    /// Evaluate the uncontrolled flow with the same artifact schema.
    Baseline(Common),
    /// Finite-difference and convergence-order checks.
    Gradcheck(Checks),
    /// Value-function gradient check at t = 0.
    Dpcheck(Checks),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to output.dir from the config, then "out").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct Checks {
    #[command(flatten)]
    common: Common,
    /// Probe step for the value-function differences.
    #[arg(long, default_value_t = DEFAULT_DP_DELTA)]
    delta: f64,
    #[arg(long, hide = true)]
    inject_adjoint_sign_flip: bool,
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common.out.clone().or_else(|| config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((config, out))
}

fn summarize(reports: &[CheckReport], quiet: bool) -> i32 {
    let mut code = 0;
    for r in reports {
        if !quiet {
            let status = if r.passed { "PASS" } else { "FAIL" };
            println!("{status} {:<28} max rel err {:.3e} (tol {:.0e})", r.name, r.max_rel_error, r.tolerance);
            for n in &r.notes {
                println!("     {n}");
            }
        }
        if !r.passed {
            code = 1;
        }
    }
    code
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(c) => {
            let mut spec = SynthSpec::load(&c.config)?;
            if let Some(seed) = c.seed {
                spec.seed = seed;
            }
            let out = c.out.unwrap_or_else(|| PathBuf::from("out"));
            let path = pipeline::synth(&spec, &out)?;
            if !c.quiet {
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Run(c) => run(&c, Mode::Run),
        Command::Baseline(c) => run(&c, Mode::Baseline),
        Command::Gradcheck(k) => {
            let (config, out) = load(&k.common)?;
            let reports = pipeline::gradcheck(&config, &out, k.inject_adjoint_sign_flip)?;
            Ok(summarize(&reports, k.common.quiet))
        }
        Command::Dpcheck(k) => {
            let (config, out) = load(&k.common)?;
            let reports = pipeline::dpcheck(&config, &out, k.delta, k.inject_adjoint_sign_flip)?;
            Ok(summarize(&reports, k.common.quiet))
        }
    }
}

fn run(c: &Common, mode: Mode) -> Result<i32> {
    let (config, out) = load(c)?;
    let outcome = pipeline::run(&config, &out, mode)?;
    if !c.quiet {
        let m = &outcome.metrics;
        println!("J(0)  = {:.10e}", m.j_eps_zero);
        println!("J(u*) = {:.10e}", m.j_eps_star);
        if let Some(reason) = m.stop_reason {
            println!("{} iterations, stop: {reason:?}", m.iterations);
        }
        println!("artifacts in {}", out.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let quiet = match &cli.command {
        Command::Synth(c) | Command::Run(c) | Command::Baseline(c) => c.quiet,
        Command::Gradcheck(k) | Command::Dpcheck(k) => k.common.quiet,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "error" } else { "warn" }))
        .init();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
