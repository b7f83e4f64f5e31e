use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rieszdual_cli::{execute, verify_dir, CliError, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "rieszdual", version, about = "Riesz bases, inverse Gramians and dual decay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the basis and measure member envelopes.
    Basis(RunArgs),
    /// Assemble the Gramian and estimate the Riesz bounds.
    Gramian(RunArgs),
    /// Invert nested sections and synthesize duals.
    Duals(RunArgs),
    /// Calibrate the constants and check the bounds.
    Bounds(RunArgs),
    /// Run every stage and write report.json.
    Report(RunArgs),
    /// Re-check a finished run from its artifacts.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage, then verify.
    All(RunArgs),
}

fn run(args: &RunArgs, stage: Stage) -> Result<PathBuf, CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let seed = args.seed.unwrap_or(cfg.seed);
    let report = execute(&cfg, stage, &out, seed)?;
    let s = &report.summary;
    println!(
        "[{}] hard invariants: {} passed, {} failed; soft: {} passed, {} failed; {} not applicable",
        stage.name(),
        s.hard_passed,
        s.hard_failed,
        s.soft_passed,
        s.soft_failed,
        s.not_applicable
    );
    for inv in report.invariants.iter().filter(|i| i.failed_hard()) {
        eprintln!(
            "FAIL {}/{}/{}: value {:?}, threshold {:?} {}",
            inv.stage, inv.scope, inv.name, inv.value, inv.threshold, inv.note
        );
    }
    match report.hard_failures() {
        0 => Ok(out),
        n => Err(CliError::Invariants(n)),
    }
}

fn verify(out: PathBuf) -> Result<(), CliError> {
    let summary = verify_dir(&out)?;
    for c in &summary.checks {
        println!(
            "[verify] {:<8} {}/{}: value {:?}, threshold {:?}",
            format!("{:?}", c.verdict).to_lowercase(),
            c.scope,
            c.name,
            c.value,
            c.threshold
        );
    }
    match summary.failures() {
        0 => Ok(()),
        n => Err(CliError::Invariants(n)),
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Basis(a) => run(&a, Stage::Basis).map(drop),
        Command::Gramian(a) => run(&a, Stage::Gramian).map(drop),
        Command::Duals(a) => run(&a, Stage::Duals).map(drop),
        Command::Bounds(a) => run(&a, Stage::Bounds).map(drop),
        Command::Report(a) => run(&a, Stage::Report).map(drop),
        Command::Verify { config, out } => {
            let dir = match (out, config) {
                (Some(o), _) => o,
                (None, Some(c)) => RunConfig::load(&c)?.output.dir,
                (None, None) => return Err(CliError::Config("verify needs --out or --config".into())),
            };
            verify(dir)
        }
        Command::All(a) => verify(run(&a, Stage::Report)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
