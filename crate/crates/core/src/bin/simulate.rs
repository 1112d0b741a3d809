use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use mfsic::bench::{emit_report, parse_pairs, run, SimConfig};
use mfsic::Error;

/// Monte-Carlo link simulation of MIMO detectors.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Args {
    /// Flat key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for results.csv and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `scenario`.
    #[arg(long)]
    scenario: Option<String>,
}

fn load(args: &Args) -> mfsic::Result<SimConfig> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| Error::Io {
        path: args.config.clone(),
        source,
    })?;
    let mut pairs = parse_pairs(&text)?;
    if let Some(seed) = args.seed {
        pairs.insert("master_seed".into(), seed.to_string());
    }
    if let Some(s) = &args.scenario {
        pairs.insert("scenario".into(), s.clone());
    }
    SimConfig::from_pairs(pairs)
}

#[cfg(feature = "parallel")]
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> mfsic::Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T: Send>(_threads: Option<usize>, f: impl FnOnce() -> T + Send) -> mfsic::Result<T> {
    Ok(f())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let cfg = match load(&args) {
        Ok(cfg) => cfg,
        Err(Error::Config(errs)) => {
            eprintln!("invalid configuration:");
            for e in errs {
                eprintln!("  {e}");
            }
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = with_threads(args.threads, || run(&cfg))
        .and_then(|r| r)
        .and_then(|report| emit_report(&report, &cfg, &args.out).map(|paths| (report, paths)));
    match result {
        Ok((report, paths)) => {
            eprintln!(
                "{} cells in {:.1} s, written to {}",
                report.cells.len(),
                report.wall_time_s,
                paths.csv.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
