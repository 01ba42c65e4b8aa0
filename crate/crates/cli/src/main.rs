use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ridematch_cli::{run_experiment, ExperimentConfig, ReportFormat};
use ridematch_core::trips::{synth_commute, write_trips_csv, DEFAULT_UTC_OFFSET_S};
use ridematch_core::{CommuteMode, Error, GridSpec, RoutingLedger, SynthSpec};

#[derive(Parser)]
#[command(
    name = "match-bench",
    version,
    about = "Compare ride-match search approaches on a shareability network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Morning,
    Evening,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Defaults to the extension of --out, else csv.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Check a config and list every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic commute workload as a trip CSV.
    Synth {
        #[arg(long, value_enum, default_value = "morning")]
        mode: Mode,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        grid_rows: usize,
        #[arg(long, default_value_t = 30)]
        grid_cols: usize,
        #[arg(long, default_value_t = 200.0)]
        spacing_m: f64,
        #[arg(long, default_value_t = 7)]
        grid_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(Vec<String>),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    let cfg = ExperimentConfig::load(path).map_err(|e| Failure::Config(vec![e.to_string()]))?;
    cfg.validated().map_err(Failure::Config)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            out,
            format,
        } => {
            let cfg = load_config(&config)?;
            let report = run_experiment(&cfg)?;
            let format = match (format, &out) {
                (Some(Format::Csv), _) => ReportFormat::Csv,
                (Some(Format::Json), _) => ReportFormat::Json,
                (None, Some(p)) => ReportFormat::for_path(p),
                (None, None) => ReportFormat::Csv,
            };
            let mut w = sink(&out)?;
            w.write_all(report.render(format)?.as_bytes())?;
            w.flush()?;
            let failed = report.rows.iter().filter(|r| r.status != "ok").count();
            if failed > 0 {
                eprintln!(
                    "{failed} of {} rows failed; see the status column",
                    report.rows.len()
                );
            }
        }
        Command::Validate { config } => {
            load_config(&config)?;
            eprintln!("{}: ok", config.display());
        }
        Command::Synth {
            mode,
            n,
            seed,
            grid_rows,
            grid_cols,
            spacing_m,
            grid_seed,
            out,
        } => {
            let grid = GridSpec {
                rows: grid_rows,
                cols: grid_cols,
                spacing_m,
                seed: grid_seed,
                ..GridSpec::default()
            };
            let net = grid.build()?;
            let mode = match mode {
                Mode::Morning => CommuteMode::Morning,
                Mode::Evening => CommuteMode::Evening,
            };
            let spec = SynthSpec {
                mode,
                n,
                seed,
                window: mode.window(),
                ..SynthSpec::default()
            };
            let w = synth_commute(&net, &spec, &RoutingLedger::new())?;
            let mut sink = sink(&out)?;
            write_trips_csv(&w.rides, &mut sink, DEFAULT_UTC_OFFSET_S)?;
            sink.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(errs)) => {
            eprintln!(
                "configuration rejected ({} problem{}):",
                errs.len(),
                if errs.len() == 1 { "" } else { "s" }
            );
            for e in errs {
                eprintln!("  - {e}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
