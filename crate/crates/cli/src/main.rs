use std::path::PathBuf;
use std::process::ExitCode;

use bpire_cli::{
    cmd_run, cmd_suite, cmd_validate, print_suite, suite_exit_code, CliError, Overrides, DEFAULT_ASSUMPTIONS,
};
use clap::{Args, Parser, Subcommand};

/// Experiments on supercritical branching processes with immigration in a
/// random environment.
#[derive(Parser)]
#[command(name = "bpire", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions for a model file.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ASSUMPTIONS.0)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_ASSUMPTIONS.1)]
        p: f64,
        #[arg(long, default_value_t = DEFAULT_ASSUMPTIONS.2)]
        q: f64,
    },
    /// Run one experiment config.
    Run(RunArgs),
    /// Run every config listed in a suite file.
    Suite(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (run) or suite file (suite).
    #[arg(long)]
    config: PathBuf,
    /// Model file overriding the config's `model_file`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory; falls back to the config, then $BPIRE_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Run even when the model fails the assumption check.
    #[arg(long)]
    force: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            model: self.model.clone(),
            out: self.out.clone(),
            seed: self.seed,
            workers: self.workers,
            force: self.force,
        }
    }
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code.clamp(0, 255) as u8)
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    exit(e.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { model, delta, p, q } => match cmd_validate(&model, delta, p, q) {
            Ok(code) => exit(code),
            Err(e) => fail(e),
        },
        Command::Run(args) => match cmd_run(&args.config, &args.overrides()) {
            Ok(v) => {
                println!(
                    "{} {} config_hash={} csv={}",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.experiment,
                    v.config_hash,
                    v.artifacts[0].display()
                );
                if let Some(err) = v.metrics.get("error") {
                    eprintln!("error: {}", err.as_str().unwrap_or_default());
                }
                exit(if v.pass { 0 } else { 1 })
            }
            Err(e) => fail(e),
        },
        Command::Suite(args) => match cmd_suite(&args.config, &args.overrides()) {
            Ok(rows) => {
                print_suite(&rows);
                exit(suite_exit_code(&rows))
            }
            Err(e) => fail(e),
        },
    }
}
