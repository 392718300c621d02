//! TOML configuration file model.
//!
//! Every field is optional: values resolve as *flag > file > default*. The
//! default device is the shipped 50 nm reference disc. When a `[device]`
//! section is present, its keys overlay that reference geometry field by
//! field, except that the barrier override `delta` must be opted into
//! explicitly (a partial `[device]` section would otherwise silently keep a
//! stale override while changing the quantities it should be derived from).

use std::fs;
use std::path::Path;

use mtjfp::device::{reference_device, DeviceParams};
use mtjfp::fvm::{Grading, DEFAULT_TANH_BETA};
use mtjfp::nalgebra::Vector3;
use mtjfp::stats::SolverChoice;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub device: Option<DeviceSection>,
    pub solver: Option<SolverSection>,
    pub drive: Option<DriveSection>,
    pub sweep: Option<SweepSection>,
    pub fit: Option<FitSection>,
    pub calibrate: Option<CalibrateSection>,
    pub transient: Option<TransientSection>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub msat_a_per_m: Option<f64>,
    pub volume_m3: Option<f64>,
    pub alpha: Option<f64>,
    pub hk_eff_a_per_m: Option<f64>,
    pub temp_k: Option<f64>,
    pub pol_p: Option<f64>,
    pub eps_prime: Option<f64>,
    /// Thermal-stability override; omit to derive it from the geometry.
    pub delta: Option<f64>,
    /// Pinned-layer unit direction, default +z.
    pub m_p: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// "spectral" or "fvm".
    pub kind: Option<String>,
    /// Legendre truncation order (spectral).
    pub order: Option<usize>,
    /// Cell count (fvm).
    pub cells: Option<usize>,
    /// "uniform-theta", "uniform-cos" or "tanh" (fvm).
    pub grading: Option<String>,
    pub tanh_beta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    pub current_a: Option<f64>,
    pub h_ext_z_a_per_m: Option<f64>,
    pub pulse_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Explicit current list; wins over the linspace fields.
    pub currents_a: Option<Vec<f64>>,
    pub start_a: Option<f64>,
    pub stop_a: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub hops: Option<usize>,
    pub seed: Option<u64>,
    pub max_evals: Option<usize>,
    /// Legendre order used inside the loss.
    pub order: Option<usize>,
    #[serde(default)]
    pub param: Vec<FitParamSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitParamSection {
    pub name: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    #[serde(default)]
    pub frozen: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub targets: Option<Vec<f64>>,
    pub tol_rel: Option<f64>,
    pub dt_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientSection {
    pub dt_s: Option<f64>,
    pub duration_s: Option<f64>,
    /// "none", "fictitious" or "stochastic".
    pub thermal: Option<String>,
    pub c_f: Option<f64>,
    pub seed: Option<u64>,
    pub stride: Option<usize>,
    /// "tilt", "boltzmann" or "fixed".
    pub initial: Option<String>,
    pub m0: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub out: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, String> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// Device resolved from `[device]` over the reference disc.
    pub fn device(&self) -> DeviceParams {
        let mut dev = reference_device();
        let Some(s) = &self.device else {
            return dev;
        };
        // A partial section re-derives the barrier unless overridden below.
        dev.delta = None;
        if let Some(v) = s.msat_a_per_m {
            dev.msat_a_per_m = v;
        }
        if let Some(v) = s.volume_m3 {
            dev.volume_m3 = v;
        }
        if let Some(v) = s.alpha {
            dev.alpha = v;
        }
        if let Some(v) = s.hk_eff_a_per_m {
            dev.hk_eff_a_per_m = v;
        }
        if let Some(v) = s.temp_k {
            dev.temp_k = v;
        }
        if let Some(v) = s.pol_p {
            dev.pol_p = v;
        }
        if let Some(v) = s.eps_prime {
            dev.eps_prime = v;
        }
        if let Some(v) = s.delta {
            dev.delta = Some(v);
        }
        if let Some(v) = s.m_p {
            dev.m_p = Vector3::new(v[0], v[1], v[2]);
        }
        dev
    }
}

/// First present value wins: flag, then file, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Like [`pick`] but without a default.
pub fn pick_opt<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

pub fn parse_grading(name: &str, beta: f64) -> Result<Grading, String> {
    match name {
        "uniform-theta" => Ok(Grading::UniformTheta),
        "uniform-cos" => Ok(Grading::UniformCos),
        "tanh" => Ok(Grading::Tanh { beta }),
        _ => Err(format!(
            "unknown grading {name:?} (known: uniform-theta, uniform-cos, tanh)"
        )),
    }
}

/// Resolves the solver choice from flags and the `[solver]` section.
pub struct SolverFlags<'a> {
    pub kind: Option<&'a str>,
    pub order: Option<usize>,
    pub cells: Option<usize>,
    pub grading: Option<&'a str>,
    pub tanh_beta: Option<f64>,
}

pub fn solver_choice(cfg: &FileConfig, flags: &SolverFlags) -> Result<SolverChoice, String> {
    let empty = SolverSection::default();
    let s = cfg.solver.as_ref().unwrap_or(&empty);
    let kind = flags
        .kind
        .map(str::to_string)
        .or_else(|| s.kind.clone())
        .unwrap_or_else(|| "spectral".to_string());
    match kind.as_str() {
        "spectral" => Ok(SolverChoice::Spectral {
            n: pick(flags.order, s.order, mtjfp::spectral::DEFAULT_ORDER),
        }),
        "fvm" => {
            let beta = pick(flags.tanh_beta, s.tanh_beta, DEFAULT_TANH_BETA);
            let grading_name = flags
                .grading
                .map(str::to_string)
                .or_else(|| s.grading.clone())
                .unwrap_or_else(|| "tanh".to_string());
            Ok(SolverChoice::Fvm {
                m: pick(flags.cells, s.cells, 512),
                grading: parse_grading(&grading_name, beta)?,
            })
        }
        _ => Err(format!("unknown solver {kind:?} (known: spectral, fvm)")),
    }
}

/// Inclusive linspace written as "start:stop:points".
pub fn parse_linspace(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("sweep {spec:?}: want start:stop:points"));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|e| format!("sweep start {:?}: {e}", parts[0]))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|e| format!("sweep stop {:?}: {e}", parts[1]))?;
    let n: usize = parts[2]
        .parse()
        .map_err(|e| format!("sweep points {:?}: {e}", parts[2]))?;
    linspace(start, stop, n)
}

pub fn linspace(start: f64, stop: f64, n: usize) -> Result<Vec<f64>, String> {
    if n == 0 {
        return Err("sweep needs at least one point".to_string());
    }
    if n == 1 {
        return Ok(vec![start]);
    }
    let step = (stop - start) / (n - 1) as f64;
    Ok((0..n).map(|k| start + step * k as f64).collect())
}
