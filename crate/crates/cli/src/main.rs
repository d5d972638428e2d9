use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lrflow::{run, CliResult, Command, ExperimentConfig};

/// Long-range Ising scaling, RBM flows and block-spin comparisons.
#[derive(Debug, Parser)]
#[command(name = "lrflow", version)]
struct Args {
    command: Command,
    /// TOML configuration file; defaults apply to anything it omits.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Base seed; section k of mcmc, rbm, flow, stack, thermometer gets seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved configuration and its hash, then exit.
    #[arg(long)]
    print_config: bool,
    /// Configuration overrides of the form --section.key=value.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

fn main_inner(args: &Args) -> CliResult<()> {
    let cfg = ExperimentConfig::load(args.config.as_deref(), &args.overrides, args.seed)?;
    if args.print_config {
        println!("# config_hash={}", cfg.hash());
        print!("{}", cfg.canonical_toml());
        return Ok(());
    }
    for p in run(args.command, &cfg)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match main_inner(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::FAILURE
        }
    }
}
