use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ivmatch::config::RunConfig;
use ivmatch::synthetic::{self, SyntheticSpec};
use ivmatch::{pipeline, Error};

/// Pair matching that strengthens an instrument, with randomization
/// inference on the matched pairs.
#[derive(Parser)]
#[command(name = "ivmatch", version)]
struct Cli {
    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and solve the match; write pairs and design reports.
    Match {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run the three-part test and sensitivity bounds on a saved study.
    Infer {
        #[arg(short, long)]
        config: PathBuf,
        /// Pair file written by `match` (default: <output_dir>/pairs.csv).
        #[arg(short, long)]
        study: Option<PathBuf>,
    },
    /// Re-run the match across separation thresholds.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Write one stratum's program as MPS.
    ExportMps {
        #[arg(short, long)]
        config: PathBuf,
        /// Stratum key as shown in strata.csv.
        #[arg(long)]
        stratum: String,
        /// Output file (default: stdout).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Verify a saved study against every design constraint.
    Check {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        study: Option<PathBuf>,
    },
    /// Write a seeded synthetic cohort and a config that matches it.
    Synth {
        #[arg(long, default_value_t = 300)]
        units: usize,
        #[arg(long, default_value_t = 2)]
        hospitals: usize,
        #[arg(long, default_value_t = 3)]
        years: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory for cohort.csv and config.toml.
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 3,
        Error::Csv(e) if e.is_io_error() => 3,
        Error::Infeasible(_) | Error::LimitReached(_) | Error::Violation(_) => 2,
        _ => 1,
    }
}

fn load(path: &Path) -> Result<RunConfig, Error> {
    RunConfig::load(path)
}

fn study_path(config: &RunConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| config.output_dir.join("pairs.csv"))
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Match { config } => {
            let config = load(&config)?;
            let run = pipeline::run_match(&config)?;
            println!(
                "{} pairs in {} strata; {} units unpaired",
                run.study.len(),
                run.study.strata.len(),
                run.study.discarded.len()
            );
            for f in &run.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Infer { config, study } => {
            let config = load(&config)?;
            let study = study_path(&config, study);
            let result = pipeline::run_infer(&config, &study)?;
            print!("{}", result.summary());
        }
        Command::Sweep { config } => {
            let config = load(&config)?;
            let table = pipeline::run_sweep(&config)?;
            print!("{}", table.to_text());
        }
        Command::ExportMps {
            config,
            stratum,
            out,
        } => {
            let config = load(&config)?;
            let text = pipeline::export_stratum_mps(&config, &stratum)?;
            match out {
                Some(path) => write_file(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Check { config, study } => {
            let config = load(&config)?;
            let study = study_path(&config, study);
            let report = pipeline::run_check(&config, &study)?;
            for v in &report.violations {
                println!("{v}");
            }
            if !report.passed() {
                return Err(Error::Violation(format!(
                    "{} violations in {} pairs",
                    report.violations.len(),
                    report.pairs
                )));
            }
            println!("ok: {} pairs in {} strata satisfy every constraint", report.pairs, report.strata);
        }
        Command::Synth {
            units,
            hospitals,
            years,
            seed,
            out,
        } => {
            std::fs::create_dir_all(&out).map_err(|source| Error::Io {
                path: out.clone(),
                source,
            })?;
            let spec = SyntheticSpec {
                units,
                hospitals,
                years,
                seed,
            };
            write_file(&out.join("cohort.csv"), &synthetic::generate(&spec))?;
            write_file(&out.join("config.toml"), &synthetic::config_toml("cohort.csv"))?;
            println!("wrote {} and {}", out.join("cohort.csv").display(), out.join("config.toml").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
