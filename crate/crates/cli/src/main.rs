use std::path::PathBuf;
use std::process;

use clap::Parser;
use slowfast_cli::{load_config, run_command, CliError};

const EXIT_CODES: &str = "Exit status:
  0  success
  1  configuration error (parse, unknown or missing key, out-of-range value)
  2  a numerical routine did not converge
  3  system validation failed
  4  file could not be read or written
  5  other precondition failed (too few samples, empty data, ...)";

/// Run one slow-fast experiment described by a TOML-style config file.
#[derive(Parser, Debug)]
#[command(name = "slowfast", version, after_help = EXIT_CODES)]
struct Args {
    /// Config file with [system], [run] and optional [output] sections.
    config: PathBuf,
    /// Overrides `seed` in [run].
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `dir` in [output].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots where the command has one.
    #[arg(long)]
    svg: bool,
}

fn run(args: Args) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    cfg.emit_svg |= args.svg;
    let report = run_command(&cfg)?;
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    for (k, v) in &report.headline {
        println!("{k} = {v}");
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Args::parse()) {
        eprintln!("error: {e}");
        process::exit(e.exit_code());
    }
}
