use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsd_sim::{emit_plot_data, run_campaign, run_theory, with_jobs, write_outputs, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "dsd-sim", version, about = "Device-edge speculative decoding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, global = true, default_value_t = default_jobs())]
    jobs: usize,

    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every campaign and write CSVs plus summary.txt.
    Run { config: PathBuf },
    /// Run only the theory fuzz suite.
    Check { config: PathBuf },
    /// Turn campaign CSVs into per-curve series files.
    Plot {
        dir: PathBuf,
        /// Also write SVG line charts.
        #[arg(long)]
        svg: bool,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

const EXIT_CONFIG: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, ExitCode> {
    match ExperimentConfig::load(path) {
        Ok(mut cfg) => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            Ok(cfg)
        }
        Err(e) => {
            eprintln!("config error: {e}");
            Err(ExitCode::from(EXIT_CONFIG))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg_path, theory_only) = match &cli.command {
        Command::Plot { dir, svg } => {
            let out = cli.out.clone().unwrap_or_else(|| dir.join("plots"));
            return match emit_plot_data(dir, &out, *svg) {
                Ok(files) => {
                    println!("wrote {} files to {}", files.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(EXIT_CONFIG)
                }
            };
        }
        Command::Run { config } => (config, false),
        Command::Check { config } => (config, true),
    };
    let cfg = match load(cfg_path, cli.seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let result = with_jobs(cli.jobs, || if theory_only { run_theory(&cfg) } else { run_campaign(&cfg) })
        .and_then(|r| r)
        .and_then(|report| write_outputs(&report, &cfg, &out).map(|_| report));
    match result {
        Ok(report) => {
            let violations = report.violations();
            let shape_failures = report
                .checks
                .iter()
                .filter(|c| c.class == dsd_sim::CheckClass::Shape && !c.passed)
                .count();
            println!(
                "{} checks, {} invariant violations, {shape_failures} shape checks failed; outputs in {}",
                report.checks.len(),
                violations.len(),
                out.display()
            );
            for v in &violations {
                eprintln!("violation: {}: {}", v.name, v.detail);
            }
            if violations.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VIOLATION)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
