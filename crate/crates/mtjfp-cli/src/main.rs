//! `mtjfp` — switching statistics for perpendicular spin-torque devices.
//!
//! Exit codes: 0 success, 2 configuration or input problem, 3 solver failure,
//! 4 regression failure, 5 calibration failure.

mod cli;
mod commands;
mod config;

use clap::Parser;

use mtjfp::device::DeviceError;
use mtjfp::fit::FitError;
use mtjfp::fvm::FvmError;
use mtjfp::sllgs::SllgsError;
use mtjfp::spectral::SpectralError;
use mtjfp::stats::{RateKind, StatsError};

use cli::{Cli, Cmd};
use config::FileConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Fit(String),
    Calibration(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Fit(_) => 4,
            CliError::Calibration(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Solver(m)
            | CliError::Fit(m)
            | CliError::Calibration(m) => m,
        }
    }
}

impl From<DeviceError> for CliError {
    fn from(e: DeviceError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FvmError> for CliError {
    fn from(e: FvmError) -> Self {
        match e {
            FvmError::BadGrading(_) => CliError::Config(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::BadInput(_) => CliError::Config(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<SllgsError> for CliError {
    fn from(e: SllgsError) -> Self {
        match e {
            SllgsError::BadOptions(_) | SllgsError::Device(_) => CliError::Config(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::BadInput(_) | StatsError::Io(_) => CliError::Config(e.to_string()),
            StatsError::Device(e) => e.into(),
            StatsError::Fvm(e) => e.into(),
            StatsError::Spectral(e) => e.into(),
            StatsError::Sllgs(e) => e.into(),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::TooFewPoints { .. } | FitError::BadSpace(_) | FitError::DeckParse(_) => {
                CliError::Config(e.to_string())
            }
            FitError::Io(e) => CliError::Config(e.to_string()),
            FitError::Device(e) => e.into(),
            FitError::CalibrationNoRetardingCross { .. }
            | FitError::CalibrationNoDrivingCross { .. } => CliError::Calibration(e.to_string()),
            FitError::Stats(e) => e.into(),
            FitError::Sllgs(e) => e.into(),
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = FileConfig::load(cli.config.as_deref()).map_err(CliError::Config)?;

    #[cfg(feature = "parallel")]
    if cli.jobs > 0 {
        // Fails only if a pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    if cli.jobs > 0 {
        eprintln!("note: built without the parallel feature; --jobs has no effect");
    }

    match &cli.cmd {
        Cmd::SolveFpe(a) => commands::solve_fpe(&cfg, a),
        Cmd::CompareSolvers(a) => commands::compare_solvers(&cfg, a),
        Cmd::Wer(a) => commands::rate_curve(&cfg, a, RateKind::Write),
        Cmd::Rer(a) => commands::rate_curve(&cfg, a, RateKind::Read),
        Cmd::Fit(a) => commands::fit(&cfg, a),
        Cmd::Calibrate(a) => commands::calibrate(&cfg, a),
        Cmd::Transient(a) => commands::transient(&cfg, a),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
