use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mie_cli::run::{run_report, run_simulate, Command};
use mie_cli::{CliError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "mie", version, about = "Interventional and marginal interventional effect estimation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a synthetic dataset from a [dgp] section and write it as CSV.
    Simulate(Common),
    /// Estimate IE/MIE from a CSV input or a simulated dataset.
    Estimate(Common),
    /// Evaluate ground-truth IE/MIE for a [dgp] section.
    Oracle(Common),
    /// Reproduce the stylized-family table on the RHC data.
    ReplicateRhc(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path: CSV for simulate, JSON report otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn load(common: &Common, required: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None if required => return Err(CliError::Config("--config is required for this command".into())),
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

fn execute(cli: Cli) -> Result<()> {
    let (cmd, common) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Estimate(c) => (Command::Estimate, c),
        Cmd::Oracle(c) => (Command::Oracle, c),
        Cmd::ReplicateRhc(c) => (Command::ReplicateRhc, c),
    };
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load(&common, cmd != Command::ReplicateRhc)?;
    if cmd == Command::Simulate {
        let out = common.out.unwrap_or_else(|| PathBuf::from("simulated.csv"));
        println!("{}", run_simulate(&cfg, &out)?);
        return Ok(());
    }
    let (report, table) = run_report(cmd, &cfg)?;
    print!("{}", table.render());
    for note in &report.notes {
        println!("note: {note}");
    }
    if let Some(out) = &common.out {
        write(out, &report.to_json())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            eprintln!("error[usage]: {msg}; run `mie --help`");
            return ExitCode::from(64);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
