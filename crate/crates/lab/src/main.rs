use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use ipla_lab::{execute, Command, Options};

/// Experiment harness for the interacting particle Langevin algorithm.
#[derive(Debug, Parser)]
#[command(name = "ipla-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides `run.seed` from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to IPLA_LAB_THREADS, then all cores
    #[arg(long, env = "IPLA_LAB_THREADS")]
    threads: Option<usize>,
    /// Also write a gnuplot script `plot.gp` next to the CSVs
    #[arg(long)]
    gnuplot: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(k);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    let opts = Options {
        config: cli.config,
        output_dir: cli.output_dir,
        seed: cli.seed,
        gnuplot: cli.gnuplot,
    };
    let started = Instant::now();
    let result = pool.install(|| execute(cli.command, &opts));
    match result {
        Ok(report) => {
            for line in &report.stdout {
                println!("{line}");
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for f in &report.files {
                eprintln!("wrote {}", f.display());
            }
            eprintln!("elapsed {:.2} s", started.elapsed().as_secs_f64());
            if let Some(msg) = &report.failure {
                eprintln!("error: {msg}");
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
