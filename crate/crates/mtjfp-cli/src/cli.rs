//! Command-line surface. Flags override the `--config` file, which overrides
//! built-in defaults (the reference device, spectral solver, 40 uA / 10 ns
//! drive).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "mtjfp",
    version,
    about = "Macrospin switching statistics: density solvers, stochastic ensembles,\n\
             parameter regression and fictitious-field calibration",
    propagate_version = true
)]
pub struct Cli {
    /// TOML configuration file; flags take precedence over its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel sections (0 = automatic).
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    pub jobs: usize,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Evolve the unswitched-well density through one pulse; write the final
    /// state (spectral: `n,r_n`; fvm: `theta_rad,p_mass,rho_density`).
    SolveFpe(SolveFpeArgs),
    /// Run both density solvers on one drive; write the switched-fraction
    /// series of each plus their gap, with timings on stderr.
    CompareSolvers(CompareArgs),
    /// Write-error-rate curve over a current sweep.
    Wer(RateArgs),
    /// Read-disturb-rate curve over a current sweep.
    Rer(RateArgs),
    /// Regress device parameters against measured switching times; write the
    /// fitted device deck.
    Fit(FitArgs),
    /// Match fictitious-field coefficients to density-solver switching times;
    /// write the calibrated deck.
    Calibrate(CalibrateArgs),
    /// Integrate a single magnetization trajectory (`t_s,mx,my,mz`).
    Transient(TransientArgs),
}

#[derive(Debug, Args)]
pub struct SolveFpeArgs {
    /// Pulse current, A.
    #[arg(long, value_name = "A")]
    pub current: Option<f64>,
    /// Easy-axis external field, A/m.
    #[arg(long, value_name = "A_PER_M")]
    pub field: Option<f64>,
    /// Pulse duration, s.
    #[arg(long, value_name = "S")]
    pub pulse: Option<f64>,
    /// Density solver: spectral or fvm.
    #[arg(long, value_name = "KIND")]
    pub solver: Option<String>,
    /// Legendre truncation order (spectral).
    #[arg(long, value_name = "N")]
    pub order: Option<usize>,
    /// Cell count (fvm).
    #[arg(long, value_name = "M")]
    pub cells: Option<usize>,
    /// Mesh grading (fvm): uniform-theta, uniform-cos or tanh.
    #[arg(long, value_name = "KIND")]
    pub grading: Option<String>,
    /// Pole-refinement strength of the tanh grading.
    #[arg(long, value_name = "BETA")]
    pub tanh_beta: Option<f64>,
    /// Output file, or - for stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Pulse current, A.
    #[arg(long, value_name = "A")]
    pub current: Option<f64>,
    /// Easy-axis external field, A/m.
    #[arg(long, value_name = "A_PER_M")]
    pub field: Option<f64>,
    /// Pulse duration, s.
    #[arg(long, value_name = "S")]
    pub pulse: Option<f64>,
    /// Legendre truncation order of the spectral side.
    #[arg(long, value_name = "N")]
    pub order: Option<usize>,
    /// Cell count of the finite-volume side.
    #[arg(long, value_name = "M")]
    pub cells: Option<usize>,
    /// Mesh grading of the finite-volume side.
    #[arg(long, value_name = "KIND")]
    pub grading: Option<String>,
    /// Pole-refinement strength of the tanh grading.
    #[arg(long, value_name = "BETA")]
    pub tanh_beta: Option<f64>,
    /// Number of evenly spaced comparison times.
    #[arg(long, default_value_t = 100, value_name = "K")]
    pub samples: usize,
    /// Output file, or - for stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    /// Explicit current list, A (comma separated).
    #[arg(long, value_delimiter = ',', value_name = "A,A,...")]
    pub currents: Vec<f64>,
    /// Current linspace start:stop:points, A.
    #[arg(long, value_name = "SPEC")]
    pub sweep: Option<String>,
    /// Easy-axis external field, A/m.
    #[arg(long, value_name = "A_PER_M")]
    pub field: Option<f64>,
    /// Pulse duration, s.
    #[arg(long, value_name = "S")]
    pub pulse: Option<f64>,
    /// Density solver: spectral or fvm.
    #[arg(long, value_name = "KIND")]
    pub solver: Option<String>,
    /// Legendre truncation order (spectral).
    #[arg(long, value_name = "N")]
    pub order: Option<usize>,
    /// Cell count (fvm).
    #[arg(long, value_name = "M")]
    pub cells: Option<usize>,
    /// Mesh grading (fvm).
    #[arg(long, value_name = "KIND")]
    pub grading: Option<String>,
    /// Pole-refinement strength of the tanh grading.
    #[arg(long, value_name = "BETA")]
    pub tanh_beta: Option<f64>,
    /// Output file, or - for stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Measured curve CSV (current_A,pulse_s,temp_K,rate,kind,solver).
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Free parameter with bounds, name=lo:hi (repeatable). Overrides the
    /// config's [[fit.param]] entries.
    #[arg(long, value_name = "NAME=LO:HI")]
    pub free: Vec<String>,
    /// Easy-axis external field during the measurements, A/m.
    #[arg(long, value_name = "A_PER_M")]
    pub field: Option<f64>,
    /// Basin hops after the first descent.
    #[arg(long, value_name = "N")]
    pub hops: Option<usize>,
    /// Proposal seed; a given seed reproduces the fit exactly.
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
    /// Hard cap on loss evaluations.
    #[arg(long, value_name = "N")]
    pub max_evals: Option<usize>,
    /// Legendre truncation order used inside the loss.
    #[arg(long, value_name = "N")]
    pub order: Option<usize>,
    /// Output deck file, or - for stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Pulse current, A.
    #[arg(long, value_name = "A")]
    pub current: Option<f64>,
    /// Easy-axis external field, A/m.
    #[arg(long, value_name = "A_PER_M")]
    pub field: Option<f64>,
    /// Target write error rates (comma separated).
    #[arg(long, value_delimiter = ',', value_name = "R,R,...")]
    pub targets: Vec<f64>,
    /// Start from the device stored in this deck instead of the config.
    #[arg(long, value_name = "PATH")]
    pub deck: Option<PathBuf>,
    /// Transient integrator step, s.
    #[arg(long, value_name = "S")]
    pub dt: Option<f64>,
    /// Relative switching-time tolerance ending the bisection.
    #[arg(long, value_name = "TOL")]
    pub tol_rel: Option<f64>,
    /// Output deck file, or - for stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct TransientArgs {
    /// Pulse current, A.
    #[arg(long, value_name = "A")]
    pub current: Option<f64>,
    /// Easy-axis external field, A/m.
    #[arg(long, value_name = "A_PER_M")]
    pub field: Option<f64>,
    /// Run length, s.
    #[arg(long, value_name = "S")]
    pub duration: Option<f64>,
    /// Integrator step, s.
    #[arg(long, value_name = "S")]
    pub dt: Option<f64>,
    /// Thermal model: none, fictitious or stochastic.
    #[arg(long, value_name = "KIND")]
    pub thermal: Option<String>,
    /// Fictitious-field coefficient (thermal = fictitious).
    #[arg(long, value_name = "CF")]
    pub cf: Option<f64>,
    /// Deck supplying the device and calibrated coefficients.
    #[arg(long, value_name = "PATH")]
    pub deck: Option<PathBuf>,
    /// Target rate selecting the deck's cf entry (thermal = fictitious).
    #[arg(long, value_name = "RATE")]
    pub target: Option<f64>,
    /// Noise seed (thermal = stochastic).
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
    /// Record every Nth step.
    #[arg(long, value_name = "N")]
    pub stride: Option<usize>,
    /// Starting state: tilt, boltzmann or fixed.
    #[arg(long, value_name = "KIND")]
    pub initial: Option<String>,
    /// Components of the fixed starting state (unit vector).
    #[arg(long, value_delimiter = ',', value_name = "X,Y,Z")]
    pub m0: Option<Vec<f64>>,
    /// Output file, or - for stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<String>,
}
