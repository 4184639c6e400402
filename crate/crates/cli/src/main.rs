use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pcflow::config::{parse_config, RunConfig};
use pcflow::io::{read_snapshot, write_atomic};
use pcflow::oracle::run_oracles;
use pcflow::run::{check, run};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Pseudospectral pluriclosed flow on flat complex tori.
#[derive(Parser)]
#[command(name = "pcflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve per the config and write series.csv, snapshots and summary.json.
    Run { config: PathBuf },
    /// Run the identity, monotonicity and subsolution checks on a short run.
    /// Exits 0 iff every check passes.
    Check { config: PathBuf },
    /// Spectral, determinant and torsion-identity oracles.
    Oracle,
    /// Dump a snapshot as text.
    Export {
        snapshot: PathBuf,
        /// Write per-point field values as CSV instead of the header.
        #[arg(long)]
        csv: bool,
        /// Output file; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_config(&text)?)
}

fn cmd_run(path: &Path) -> Result<bool> {
    let config = load(path)?;
    let out = run(&config)?;
    let s = &out.summary;
    println!(
        "{}: {} steps to t = {}, {} samples",
        s.mode, s.steps, s.t_final, s.samples
    );
    for (name, fit) in &s.fits {
        if let Some(f) = fit {
            println!("  log {name}: slope {:.4e}, R² {:.4}", f.slope, f.r_squared);
        }
    }
    print!("{}", s.monotone);
    if let Some(a) = &s.abort {
        println!("aborted at t = {} (step {}): {}", a.t, a.step, a.message);
    }
    println!("wrote {}", config.output_dir.display());
    Ok(s.abort.is_none())
}

fn cmd_check(path: &Path) -> Result<bool> {
    let config = load(path)?;
    let report = check(&config)?;
    print!("{report}");
    std::fs::create_dir_all(&config.output_dir)?;
    let json = serde_json::to_string_pretty(&report)?;
    write_atomic(&config.output_dir.join("check_report.json"), json.as_bytes())?;
    Ok(report.pass)
}

fn cmd_oracle() -> Result<bool> {
    let report = run_oracles()?;
    print!("{report}");
    Ok(report.pass)
}

fn cmd_export(path: &Path, csv: bool, output: Option<&Path>) -> Result<bool> {
    let snap = read_snapshot(path).with_context(|| format!("reading {}", path.display()))?;
    let text = if csv { snap.to_csv() } else { snap.header() };
    match output {
        Some(o) => write_atomic(o, text.as_bytes())?,
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
            _ => {}
        },
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config),
        Command::Check { config } => cmd_check(config),
        Command::Oracle => cmd_oracle(),
        Command::Export { snapshot, csv, output } => cmd_export(snapshot, *csv, output.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
