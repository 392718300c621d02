//! Stochastic macrospin integrator (LLGS) in SI units.
//!
//! The magnetization obeys
//!
//! ```text
//! dm/dt = -g' m x H  -  a g' m x (m x H)
//!         + g' be  m x (m_p x m)  -  g' be' (m x m_p)
//! ```
//!
//! with `g'` the reduced gyromagnetic ratio, uniaxial easy axis along z,
//! spin-torque magnitudes `be = -k_stt I` (positive current destabilizes the
//! state aligned with the polarizer) and `be' = eps' be`. Thermal agitation
//! enters as a Gaussian random field with per-component standard deviation
//!
//! ```text
//! sigma_H = sqrt( 2 kB T a / (g mu0^2 Ms V dt) ),
//! ```
//!
//! the amplitude fixed by the fluctuation-dissipation balance so that long
//! runs reproduce the Boltzmann distribution (asserted in the tests below).
//! Integration is a stochastic Heun step: the same field sample is used in
//! the predictor and the corrector, and the state is renormalized afterward.
//!
//! A deterministic "fictitious thermal field" mode replaces the random field
//! by `c_f sigma_ref` along the azimuthal direction, with `sigma_ref`
//! evaluated at the fixed reference step `tau_d / 1000` so the calibrated
//! `c_f` does not drift when the integration step changes.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::constants::{GAMMA, K_B, MU_0};
use crate::device::{DeviceError, DeviceParams};
use crate::exec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SllgsError {
    #[error("step rejected at t = {t_s:e} s (|dm| = {jump:.3})")]
    StepRejected { t_s: f64, jump: f64 },
    #[error("non-finite state at t = {t_s:e} s")]
    NonFiniteState { t_s: f64 },
    #[error("bad options: {0}")]
    BadOptions(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// One piecewise-constant drive interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub current_a: f64,
    pub h_ext_z_a_per_m: f64,
    pub duration_s: f64,
}

/// Thermal model for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Thermal {
    /// No thermal agitation (zero-temperature dynamics).
    None,
    /// Deterministic azimuthal field `c_f * sigma_ref` standing in for the
    /// average effect of noise; `c_f` is found by calibration.
    Fictitious { c_f: f64 },
    /// Random field, reproducible from the seed.
    Stochastic { seed: u64 },
}

/// Starting magnetization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    /// Tilt by the thermal-average angle `theta_0 = asin(sqrt(1/(2 Delta)))`
    /// in the x-z plane. Deterministic runs need this offset: the exact pole
    /// is a stationary point.
    ThermalAverageTilt,
    /// Draw from the Boltzmann distribution of the unswitched well. Only
    /// available when the run has a random-number stream.
    Boltzmann,
    Fixed(Vector3<f64>),
}

/// Per-component standard deviation (A/m) of the thermal field at step `dt`.
pub fn thermal_sigma_a_per_m(dev: &DeviceParams, dt_s: f64) -> f64 {
    (2.0 * K_B * dev.temp_k * dev.alpha
        / (GAMMA * MU_0 * MU_0 * dev.msat_a_per_m * dev.volume_m3 * dt_s))
        .sqrt()
}

/// Reference step used by the fictitious-field mode.
pub fn fictitious_dt_ref_s(dev: &DeviceParams) -> f64 {
    dev.tau_d_s() / 1000.0
}

/// Precomputed per-segment coefficients.
#[derive(Debug, Clone, Copy)]
pub struct SegmentCtx {
    pub gamma_prime: f64,
    pub alpha: f64,
    pub hk_eff: f64,
    pub h_ext_z: f64,
    /// In-plane torque magnitude in field units (A/m).
    pub beta_eps: f64,
    /// Field-like torque magnitude in field units (A/m).
    pub beta_eps_prime: f64,
    pub m_p: Vector3<f64>,
}

pub fn segment_ctx(dev: &DeviceParams, seg: &Segment) -> SegmentCtx {
    let beta_eps = -dev.stt_prefactor_per_amp() * seg.current_a;
    SegmentCtx {
        gamma_prime: dev.gamma_prime(),
        alpha: dev.alpha,
        hk_eff: dev.hk_eff_a_per_m,
        h_ext_z: seg.h_ext_z_a_per_m,
        beta_eps,
        beta_eps_prime: dev.eps_prime * beta_eps,
        m_p: dev.m_p,
    }
}

/// Time derivative of the magnetization for a given extra (thermal) field.
pub fn llgs_rhs(m: &Vector3<f64>, ctx: &SegmentCtx, extra_field: &Vector3<f64>) -> Vector3<f64> {
    let h = Vector3::new(
        extra_field.x,
        extra_field.y,
        extra_field.z + ctx.hk_eff * m.z + ctx.h_ext_z,
    );
    let m_x_h = m.cross(&h);
    let g = ctx.gamma_prime;
    let mut rhs = -g * m_x_h - ctx.alpha * g * m.cross(&m_x_h);
    if ctx.beta_eps != 0.0 {
        rhs += g * ctx.beta_eps * m.cross(&ctx.m_p.cross(m));
        rhs -= g * ctx.beta_eps_prime * m.cross(&ctx.m_p);
    }
    rhs
}

/// Largest per-step displacement accepted before the step is declared broken.
pub const MAX_STEP_JUMP: f64 = 0.5;

/// One Heun (predictor-corrector) step. The extra-field closure is evaluated
/// at both stages so state-dependent fields stay consistent; stochastic
/// callers pass a closure returning the one sample drawn for this step.
pub fn step_heun<F: Fn(&Vector3<f64>) -> Vector3<f64>>(
    m: &Vector3<f64>,
    dt_s: f64,
    t_s: f64,
    ctx: &SegmentCtx,
    extra_field: F,
) -> Result<Vector3<f64>, SllgsError> {
    let k1 = llgs_rhs(m, ctx, &extra_field(m));
    let pred = m + dt_s * k1;
    let k2 = llgs_rhs(&pred, ctx, &extra_field(&pred));
    let raw = m + (0.5 * dt_s) * (k1 + k2);
    if !(raw.x.is_finite() && raw.y.is_finite() && raw.z.is_finite()) {
        return Err(SllgsError::NonFiniteState { t_s });
    }
    let jump = (raw - m).norm();
    if jump > MAX_STEP_JUMP {
        return Err(SllgsError::StepRejected { t_s, jump });
    }
    Ok(raw.normalize())
}

/// Draws `x = cos(theta)` from the Boltzmann density `exp(Delta x^2)` on the
/// unswitched well `x in [0, 1]`, by rejection.
pub fn sample_boltzmann_polar<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> f64 {
    if delta >= 1.0 {
        // Substitute w = 1 - x: target exp(-2 Delta w + Delta w^2); propose a
        // truncated exponential of rate Delta and accept with
        // exp(-Delta w (1 - w)) <= 1.
        let tail = 1.0 - (-delta).exp();
        loop {
            let u: f64 = rng.random();
            let w = -(1.0 - u * tail).ln() / delta;
            let accept: f64 = rng.random();
            if accept < (-delta * w * (1.0 - w)).exp() {
                return 1.0 - w;
            }
        }
    } else {
        loop {
            let x: f64 = rng.random();
            let accept: f64 = rng.random();
            if accept < (-delta * (1.0 - x * x)).exp() {
                return x;
            }
        }
    }
}

/// Draws a unit vector from the unswitched-well Boltzmann distribution.
pub fn sample_boltzmann_state<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> Vector3<f64> {
    let x = sample_boltzmann_polar(delta, rng);
    let sin_t = (1.0 - x * x).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), x)
}

#[derive(Debug, Clone)]
pub struct TransientOptions {
    pub dt_s: f64,
    /// Record every `record_stride`-th step (the initial and final states are
    /// always recorded). `usize::MAX` keeps endpoints only.
    pub record_stride: usize,
    pub thermal: Thermal,
    pub initial: InitialState,
}

impl TransientOptions {
    /// Defaults for a device: `dt = tau_d / 1000`, full recording, no noise,
    /// thermal-average tilt.
    pub fn for_device(dev: &DeviceParams) -> Self {
        TransientOptions {
            dt_s: dev.tau_d_s() / 1000.0,
            record_stride: 1,
            thermal: Thermal::None,
            initial: InitialState::ThermalAverageTilt,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t_s: Vec<f64>,
    pub m: Vec<Vector3<f64>>,
    pub final_m: Vector3<f64>,
    /// Whether the final state lies in the switched hemisphere
    /// (`m . m_p < 0`).
    pub switched: bool,
}

fn thermal_tilt(dev: &DeviceParams) -> Vector3<f64> {
    let delta = dev.delta_effective();
    let s = (1.0 / (2.0 * delta)).min(1.0).sqrt();
    let theta0 = s.asin();
    Vector3::new(theta0.sin(), 0.0, theta0.cos())
}

/// Azimuthal unit vector about the polarizer axis, with a fixed fallback at
/// the poles where the azimuth is undefined.
fn azimuthal_dir(m: &Vector3<f64>, m_p: &Vector3<f64>) -> Vector3<f64> {
    let c = m_p.cross(m);
    let n = c.norm();
    if n < 1e-12 {
        let alt = Vector3::new(1.0, 0.0, 0.0);
        let c2 = m_p.cross(&alt);
        return c2.normalize();
    }
    c / n
}

struct SegmentPlan {
    ctx: SegmentCtx,
    n_steps: usize,
    dt_s: f64,
    dt_last_s: f64,
}

fn plan_segments(
    dev: &DeviceParams,
    waveform: &[Segment],
    dt_s: f64,
) -> Result<Vec<SegmentPlan>, SllgsError> {
    if !(dt_s.is_finite() && dt_s > 0.0) {
        return Err(SllgsError::BadOptions(format!("dt = {dt_s} s")));
    }
    let mut plans = Vec::with_capacity(waveform.len());
    for seg in waveform {
        if !(seg.duration_s.is_finite() && seg.duration_s >= 0.0) {
            return Err(SllgsError::BadOptions(format!(
                "segment duration {} s",
                seg.duration_s
            )));
        }
        if seg.duration_s == 0.0 {
            continue;
        }
        let n = (seg.duration_s / dt_s - 1e-9).ceil().max(1.0) as usize;
        let dt_last = seg.duration_s - (n - 1) as f64 * dt_s;
        plans.push(SegmentPlan {
            ctx: segment_ctx(dev, seg),
            n_steps: n,
            dt_s,
            dt_last_s: dt_last,
        });
    }
    Ok(plans)
}

// The RNG dwarfs the other variants, but there is exactly one FieldSource
// per trajectory and it sits on the stack of the integration loop; boxing
// would add a pointer chase to every field draw.
#[allow(clippy::large_enum_variant)]
enum FieldSource {
    None,
    Fictitious { strength: f64, m_p: Vector3<f64> },
    Stochastic { rng: ChaCha8Rng },
}

impl FieldSource {
    /// Field for one step of size `dt`; stochastic sources draw exactly one
    /// sample per call, so callers must call once per step.
    fn sample(&mut self, dev: &DeviceParams, dt_s: f64) -> FieldSample {
        match self {
            FieldSource::None => FieldSample::Constant(Vector3::zeros()),
            FieldSource::Fictitious { strength, m_p } => FieldSample::Azimuthal {
                strength: *strength,
                m_p: *m_p,
            },
            FieldSource::Stochastic { rng } => {
                let sigma = thermal_sigma_a_per_m(dev, dt_s);
                let v = Vector3::new(
                    sigma * rng.sample::<f64, _>(StandardNormal),
                    sigma * rng.sample::<f64, _>(StandardNormal),
                    sigma * rng.sample::<f64, _>(StandardNormal),
                );
                FieldSample::Constant(v)
            }
        }
    }
}

enum FieldSample {
    Constant(Vector3<f64>),
    Azimuthal { strength: f64, m_p: Vector3<f64> },
}

impl FieldSample {
    fn at(&self, m: &Vector3<f64>) -> Vector3<f64> {
        match self {
            FieldSample::Constant(v) => *v,
            FieldSample::Azimuthal { strength, m_p } => *strength * azimuthal_dir(m, m_p),
        }
    }
}

fn make_source(dev: &DeviceParams, thermal: &Thermal) -> FieldSource {
    match thermal {
        Thermal::None => FieldSource::None,
        Thermal::Fictitious { c_f } => FieldSource::Fictitious {
            strength: c_f * thermal_sigma_a_per_m(dev, fictitious_dt_ref_s(dev)),
            m_p: dev.m_p,
        },
        Thermal::Stochastic { seed } => FieldSource::Stochastic {
            rng: ChaCha8Rng::seed_from_u64(*seed),
        },
    }
}

fn initial_state(
    dev: &DeviceParams,
    initial: &InitialState,
    source: &mut FieldSource,
) -> Result<Vector3<f64>, SllgsError> {
    match initial {
        InitialState::ThermalAverageTilt => Ok(thermal_tilt(dev)),
        InitialState::Fixed(m) => {
            if (m.norm() - 1.0).abs() > 1e-9 {
                return Err(SllgsError::BadOptions(format!(
                    "fixed initial state has norm {}",
                    m.norm()
                )));
            }
            Ok(*m)
        }
        InitialState::Boltzmann => match source {
            FieldSource::Stochastic { rng } => {
                Ok(sample_boltzmann_state(dev.delta_effective(), rng))
            }
            _ => Err(SllgsError::BadOptions(
                "Boltzmann initial state requires the stochastic thermal mode".into(),
            )),
        },
    }
}

fn integrate<S: FnMut(f64, &Vector3<f64>)>(
    dev: &DeviceParams,
    plans: &[SegmentPlan],
    mut m: Vector3<f64>,
    source: &mut FieldSource,
    mut sink: S,
) -> Result<Vector3<f64>, SllgsError> {
    let mut t = 0.0f64;
    sink(t, &m);
    for plan in plans {
        for k in 0..plan.n_steps {
            let dt = if k + 1 == plan.n_steps {
                plan.dt_last_s
            } else {
                plan.dt_s
            };
            let sample = source.sample(dev, dt);
            m = step_heun(&m, dt, t, &plan.ctx, |mm| sample.at(mm))?;
            t += dt;
            sink(t, &m);
        }
    }
    Ok(m)
}

/// Integrates one magnetization history through the waveform.
pub fn run_transient(
    dev: &DeviceParams,
    waveform: &[Segment],
    opts: &TransientOptions,
) -> Result<Trajectory, SllgsError> {
    let dev = dev.checked()?;
    let plans = plan_segments(&dev, waveform, opts.dt_s)?;
    let mut source = make_source(&dev, &opts.thermal);
    let m0 = initial_state(&dev, &opts.initial, &mut source)?;

    let stride = opts.record_stride.max(1);
    let total_steps: usize = plans.iter().map(|p| p.n_steps).sum();
    let mut t_s = Vec::new();
    let mut m_rec = Vec::new();
    let mut k = 0usize;
    let final_m = integrate(&dev, &plans, m0, &mut source, |t, m| {
        let at_end = k == total_steps;
        if k == 0 || at_end || (stride != usize::MAX && k.is_multiple_of(stride)) {
            t_s.push(t);
            m_rec.push(*m);
        }
        k += 1;
    })?;
    let switched = final_m.dot(&dev.m_p) < 0.0;
    Ok(Trajectory {
        t_s,
        m: m_rec,
        final_m,
        switched,
    })
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub dt_s: f64,
    pub n_walks: usize,
    pub base_seed: u64,
    pub initial: InitialState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub n_walks: usize,
    pub switched: usize,
}

impl EnsembleResult {
    pub fn switch_probability(&self) -> f64 {
        self.switched as f64 / self.n_walks as f64
    }

    /// Probability that a write attempt failed (state never left the initial
    /// well, or returned to it).
    pub fn write_error_rate(&self) -> f64 {
        1.0 - self.switch_probability()
    }
}

/// Runs independent thermal histories. Walk `w` uses stream `w` of a ChaCha
/// generator seeded with `base_seed`, so results are identical for any worker
/// count and any execution order.
pub fn run_ensemble(
    dev: &DeviceParams,
    waveform: &[Segment],
    opts: &EnsembleOptions,
) -> Result<EnsembleResult, SllgsError> {
    if opts.n_walks == 0 {
        return Err(SllgsError::BadOptions("n_walks = 0".into()));
    }
    let dev = dev.checked()?;
    let plans = plan_segments(&dev, waveform, opts.dt_s)?;
    let delta = dev.delta_effective();

    let outcomes = exec::map_indexed(opts.n_walks, |w| -> Result<bool, SllgsError> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.base_seed);
        rng.set_stream(w as u64);
        let m0 = match opts.initial {
            InitialState::Boltzmann => sample_boltzmann_state(delta, &mut rng),
            InitialState::ThermalAverageTilt => thermal_tilt(&dev),
            InitialState::Fixed(m) => m,
        };
        let mut source = FieldSource::Stochastic { rng };
        let final_m = integrate(&dev, &plans, m0, &mut source, |_, _| {})?;
        Ok(final_m.dot(&dev.m_p) < 0.0)
    });

    let mut switched = 0usize;
    for r in outcomes {
        if r? {
            switched += 1;
        }
    }
    Ok(EnsembleResult {
        n_walks: opts.n_walks,
        switched,
    })
}

/// Writes a trajectory as `t_s,mx,my,mz` CSV rows.
pub fn write_trajectory_csv<W: std::io::Write>(
    traj: &Trajectory,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "t_s,mx,my,mz")?;
    for (t, m) in traj.t_s.iter().zip(&traj.m) {
        writeln!(out, "{:e},{:e},{:e},{:e}", t, m.x, m.y, m.z)?;
    }
    Ok(())
}
