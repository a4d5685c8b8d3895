use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use coded_arq::cli::{run_sweep, write_csv, Mode, SweepConfig};

#[derive(Parser)]
#[command(version, about = "Throughput and delay of ARQ, HARQ and coded ARQ over Gilbert-Elliott channels")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a parameter sweep and write CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["analytic", "sim", "both"])]
        mode: Option<String>,
        /// Output path; stdout when absent here and in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn run() -> Result<bool> {
    let Command::Sweep { config, mode, out, tol, seeds } = Args::parse().command;
    let mut cfg = SweepConfig::load(&config)?;
    if let Some(m) = mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(t) = tol {
        cfg.tol = t;
    }
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if out.is_some() {
        cfg.out = out;
    }
    let rows = run_sweep(&cfg)?;
    match &cfg.out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(&rows, BufWriter::new(f))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_csv(&rows, &mut lock)?;
            lock.flush()?;
        }
    }
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "{} eps={} T={}: {}",
            r.scheme,
            r.eps,
            r.timeout,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(rows.iter().all(|r| r.error.is_none()))
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
