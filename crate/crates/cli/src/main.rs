use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use h2c_cli::{exit, pipeline, selftest, ExperimentConfig};

#[derive(Parser)]
#[command(name = "h2c", version, about = "Task-free continual learning experiments for trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic task CSVs and stream manifest.
    Gen {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Train and evaluate every strategy and seed, then write the summary.
    Run {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Re-evaluate the checkpoints of one run directory.
    Eval {
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// A `runs/<strategy>/seed_<k>` directory.
        run_dir: PathBuf,
    },
    /// Rebuild the summary from the result matrices on disk.
    Report {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Run the fast invariant checks.
    Selftest,
    /// Print the default configuration as JSON.
    DefaultConfig,
}

fn load(path: &Option<PathBuf>) -> Result<ExperimentConfig, ExitCode> {
    let result = match path {
        Some(p) => ExperimentConfig::load(p),
        None => {
            let mut cfg = ExperimentConfig::default();
            cfg.apply_env();
            cfg.validate().map(|_| cfg)
        }
    };
    result.map_err(|e| {
        eprintln!("config error: {e:#}");
        ExitCode::from(exit::CONFIG as u8)
    })
}

fn runtime<T>(r: anyhow::Result<T>) -> Result<T, ExitCode> {
    r.map_err(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(exit::RUNTIME as u8)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = (|| -> Result<(), ExitCode> {
        match cli.command {
            Command::Gen { config } => {
                let cfg = load(&config)?;
                let manifest = runtime(pipeline::cmd_gen(&cfg))?;
                for t in &manifest.tasks {
                    println!("task {} -> {} ({} samples)", t.label, cfg.data_dir().join(&t.file).display(), t.samples);
                }
            }
            Command::Run { config } => {
                let cfg = load(&config)?;
                let manifest = runtime(pipeline::cmd_run(&cfg))?;
                let failed = manifest.cells.iter().filter(|c| c.status != "ok").count();
                let summary = runtime(pipeline::cmd_report(&cfg))?;
                print!("{}", summary.to_table());
                if failed > 0 {
                    eprintln!("{failed} cell(s) failed; see {}", cfg.runs_dir().join(pipeline::RUN_MANIFEST).display());
                    return Err(ExitCode::from(exit::RUNTIME as u8));
                }
            }
            Command::Eval { config, run_dir } => {
                let cfg = load(&config)?;
                let report = runtime(pipeline::cmd_eval(&cfg, &run_dir))?;
                let opt = |v: Option<f64>| v.map_or("N/A".to_string(), |b| format!("{b:.3}"));
                println!(
                    "FDE-AVG {:.3}  MR-AVG {:.3}  FDE-BWT {}  MR-BWT {}",
                    report.fde_avg,
                    report.mr_avg,
                    opt(report.fde_bwt),
                    opt(report.mr_bwt)
                );
            }
            Command::Report { config } => {
                let cfg = load(&config)?;
                print!("{}", runtime(pipeline::cmd_report(&cfg))?.to_table());
            }
            Command::Selftest => {
                let checks = selftest::run_all();
                for c in &checks {
                    println!("{}", c.line());
                }
                if !checks.iter().all(|c| c.passed()) {
                    return Err(ExitCode::from(exit::SELFTEST as u8));
                }
            }
            Command::DefaultConfig => {
                let text = serde_json::to_string_pretty(&ExperimentConfig::default())
                    .expect("config serializes");
                println!("{text}");
            }
        }
        Ok(())
    })();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
