use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tapd::config::parse_config;
use tapd::report::{emit_reports, load_run, TableFormat};
use tapd::run::{resume, train, RunOptions};
use tapd_core::schedule::{ExperimentConfig, Profile};

#[derive(Parser)]
#[command(name = "tapd", version, about = "Continual actor-critic experiments with task-agnostic pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Toy,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Start a new run.
    Train {
        /// Flat key=value configuration file. Without one the profile defaults are used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Base profile; only valid without --config (the file's `profile` key decides otherwise).
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        /// Run directory.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        /// Stop after this many units; continue later with `resume`.
        #[arg(long)]
        max_units: Option<usize>,
    },
    /// Continue a run from its latest checkpoint.
    Resume {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        max_units: Option<usize>,
    },
    /// Write CSV/JSON reports and the plotting script for one or more runs.
    Report {
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        /// Output directory; defaults to `<run>/reports` for a single run.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
}

fn run(cli: Cli) -> tapd::Result<()> {
    match cli.command {
        Command::Train { config, seed, profile, out, max_units } => {
            let mut cfg = match (config, profile) {
                (Some(_), Some(_)) => {
                    return Err(tapd::Error::Config("--profile conflicts with --config; set `profile` in the file".into()))
                }
                (Some(path), None) => {
                    let text = std::fs::read_to_string(&path).map_err(|source| tapd::Error::Io { path, source })?;
                    parse_config(&text)?
                }
                (None, p) => ExperimentConfig::for_profile(match p {
                    Some(ProfileArg::Paper) => Profile::Paper,
                    _ => Profile::Toy,
                }),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let m = train(&cfg, &out, RunOptions { max_units })?;
            println!("{}: {:?} at step {} ({}/{} units)", out.display(), m.status, m.global_step, m.units_completed, m.units_total);
        }
        Command::Resume { manifest, max_units } => {
            let m = resume(&manifest, RunOptions { max_units })?;
            println!("{}: {:?} at step {} ({}/{} units)", manifest.display(), m.status, m.global_step, m.units_completed, m.units_total);
        }
        Command::Report { manifest, out, format } => {
            let out = match (out, manifest.as_slice()) {
                (Some(o), _) => o,
                (None, [one]) => one.parent().unwrap_or(std::path::Path::new(".")).join("reports"),
                (None, _) => return Err(tapd::Error::Config("--out is required with several manifests".into())),
            };
            let runs = manifest.iter().map(|m| load_run(m)).collect::<tapd::Result<Vec<_>>>()?;
            let format = match format {
                FormatArg::Csv => TableFormat::Csv,
                FormatArg::Json => TableFormat::Json,
            };
            for p in emit_reports(&runs, &out, format)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
