use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aoii_core::cli::{exit_code, execute, Mode, RawConfig, RunOptions};
use aoii_core::{Error, Result};

#[derive(Parser)]
#[command(name = "aoii", version, about = "Power-constrained AoII transmission policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one parameter point.
    Solve(Opts),
    /// Solve over `grid.p`.
    SweepP(Opts),
    /// Solve over `grid.ps`.
    SweepPs(Opts),
    /// Solve over `grid.alpha`.
    SweepAlpha(Opts),
    /// Solve, then simulate the mixed policy.
    Simulate(Opts),
    /// Like simulate, with 3-standard-error agreement flags.
    Validate(Opts),
}

#[derive(Args)]
struct Opts {
    /// key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "N")]
    n: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    ps: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    xi: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Record wall-clock time per row in `runtime_ms`.
    #[arg(long)]
    timing: bool,
}

fn run(mode: Mode, opts: Opts) -> Result<()> {
    let mut raw = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
                line: 0,
                msg: format!("cannot read {}: {e}", path.display()),
            })?;
            RawConfig::parse(&text)?
        }
        None => RawConfig::default(),
    };
    raw.set("mode", mode.name())?;
    let overrides = [
        ("N", &opts.n),
        ("p", &opts.p),
        ("p_s", &opts.ps),
        ("alpha", &opts.alpha),
        ("m", &opts.m),
        ("eps", &opts.eps),
        ("xi", &opts.xi),
        ("horizon", &opts.horizon),
        ("seed", &opts.seed),
        ("out", &opts.out),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            raw.set(key, v.clone())?;
        }
    }
    let spec = raw.into_spec()?;
    execute(&spec, RunOptions { timing: opts.timing, threads: None })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, opts) = match cli.command {
        Command::Solve(o) => (Mode::Solve, o),
        Command::SweepP(o) => (Mode::SweepP, o),
        Command::SweepPs(o) => (Mode::SweepPs, o),
        Command::SweepAlpha(o) => (Mode::SweepAlpha, o),
        Command::Simulate(o) => (Mode::Simulate, o),
        Command::Validate(o) => (Mode::Validate, o),
    };
    match run(mode, opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aoii: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
