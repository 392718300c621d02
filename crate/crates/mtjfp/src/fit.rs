//! Parameter regression against measured switching times, fictitious-field
//! calibration, and the portable "model card" deck tying both together.
//!
//! The regression compares model and measured pulse durations at fixed target
//! error rates on a log axis,
//!
//! ```text
//! loss = sum_k w_k (log10 t_model_k - log10 t_meas_k)^2,
//! ```
//!
//! with a smooth penalty when the model cannot reach a point's target at all
//! (the search for the crossing runs out of time): the unreachable point
//! contributes the distance to the search horizon plus the squared rate
//! deficit in decades, so the optimizer is still pulled toward feasibility.
//! The optimizer is basin hopping over a box, with a projected quasi-Newton
//! (BFGS) local descent and central-difference gradients; every evaluation is
//! deterministic, so a given seed always reproduces the same fit.
//!
//! Calibration finds the fictitious-field coefficient `c_f` at which the
//! deterministic transient switches exactly when the density solver says the
//! write error rate crosses a target. Low-rate targets sit later than the
//! noise-free switching time, so the bracket expands into negative
//! (retarding) coefficients when needed.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::device::{DeviceError, DeviceParams};
use crate::exec;
use crate::sllgs::{run_transient, InitialState, Segment, SllgsError, Thermal, TransientOptions};
use crate::stats::{time_to_wer, CurveRow, StatsError, TimeToRateOptions};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least 3 points to regress, got {have}")]
    TooFewPoints { have: usize },
    #[error("bad fit space: {0}")]
    BadSpace(String),
    #[error("deck parse: {0}")]
    DeckParse(String),
    #[error(
        "no crossing: even the retarding coefficient c_f = {c_f_limit} switches \
         before the target time {target_time_s:e} s"
    )]
    CalibrationNoRetardingCross { c_f_limit: f64, target_time_s: f64 },
    #[error(
        "no crossing: even the driving coefficient c_f = {c_f_limit} cannot switch \
         by the target time {target_time_s:e} s"
    )]
    CalibrationNoDrivingCross { c_f_limit: f64, target_time_s: f64 },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Sllgs(#[from] SllgsError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("deck io: {0}")]
    Io(#[from] std::io::Error),
}

/// Parameters the regression may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamName {
    MsatAPerM,
    HkEffAPerM,
    Alpha,
    PolP,
    VolumeM3,
}

impl ParamName {
    pub fn key(&self) -> &'static str {
        match self {
            ParamName::MsatAPerM => "msat_a_per_m",
            ParamName::HkEffAPerM => "hk_eff_a_per_m",
            ParamName::Alpha => "alpha",
            ParamName::PolP => "pol_p",
            ParamName::VolumeM3 => "volume_m3",
        }
    }

    fn get(&self, dev: &DeviceParams) -> f64 {
        match self {
            ParamName::MsatAPerM => dev.msat_a_per_m,
            ParamName::HkEffAPerM => dev.hk_eff_a_per_m,
            ParamName::Alpha => dev.alpha,
            ParamName::PolP => dev.pol_p,
            ParamName::VolumeM3 => dev.volume_m3,
        }
    }

    fn set(&self, dev: &mut DeviceParams, v: f64) {
        match self {
            ParamName::MsatAPerM => dev.msat_a_per_m = v,
            ParamName::HkEffAPerM => dev.hk_eff_a_per_m = v,
            ParamName::Alpha => dev.alpha = v,
            ParamName::PolP => dev.pol_p = v,
            ParamName::VolumeM3 => dev.volume_m3 = v,
        }
    }
}

/// Coordinate used by the optimizer for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    /// Optimize the natural logarithm; the right choice for the strictly
    /// positive physical magnitudes handled here.
    Log,
}

#[derive(Debug, Clone)]
pub struct FitParam {
    pub name: ParamName,
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
    pub frozen: bool,
}

impl FitParam {
    pub fn free(name: ParamName, lo: f64, hi: f64) -> Self {
        FitParam {
            name,
            lo,
            hi,
            scale: Scale::Log,
            frozen: false,
        }
    }

    pub fn frozen(name: ParamName) -> Self {
        FitParam {
            name,
            lo: 0.0,
            hi: 0.0,
            scale: Scale::Linear,
            frozen: true,
        }
    }

    fn encode(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => v,
            Scale::Log => v.ln(),
        }
    }

    fn decode(&self, z: f64) -> f64 {
        match self.scale {
            Scale::Linear => z,
            Scale::Log => z.exp(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitSpace {
    pub params: Vec<FitParam>,
}

/// One measured point: the pulse length at which the write error rate was
/// observed to reach `target_rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitPoint {
    pub current_a: f64,
    pub target_rate: f64,
    pub measured_time_s: f64,
    pub weight: f64,
}

/// Extracts regression points from curve rows (write-error rows only).
pub fn fit_points_from_rows(rows: &[CurveRow]) -> Vec<FitPoint> {
    rows.iter()
        .filter(|r| r.kind == "wer")
        .map(|r| FitPoint {
            current_a: r.current_a,
            target_rate: r.rate,
            measured_time_s: r.pulse_s,
            weight: 1.0,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Template device providing every quantity the space does not vary.
    /// The barrier override is cleared: during a fit the barrier must track
    /// the varying moment, anisotropy, and volume.
    pub base: DeviceParams,
    pub h_ext_z: f64,
    pub rate_opts: TimeToRateOptions,
    pub hops: usize,
    pub hop_sigma: f64,
    pub hop_temperature: f64,
    pub seed: u64,
    pub max_evals: usize,
    pub max_local_iters: usize,
}

impl FitOptions {
    pub fn new(base: DeviceParams) -> Self {
        FitOptions {
            base,
            h_ext_z: 0.0,
            rate_opts: TimeToRateOptions {
                n_order: 120,
                ..Default::default()
            },
            hops: 20,
            hop_sigma: 0.1,
            hop_temperature: 1.0,
            seed: 1,
            max_evals: 4000,
            max_local_iters: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct FitTraceEntry {
    pub eval: usize,
    pub loss: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub device: DeviceParams,
    /// Final value of every space parameter, in space order.
    pub values: Vec<(ParamName, f64)>,
    pub loss: f64,
    pub status: FitStatus,
    pub evals: usize,
    /// Accepted local minima in discovery order.
    pub trace: Vec<FitTraceEntry>,
}

fn candidate_device(
    base: &DeviceParams,
    space: &FitSpace,
    free_idx: &[usize],
    z: &[f64],
) -> DeviceParams {
    let mut dev = base.clone();
    dev.delta = None;
    for (zi, &pi) in z.iter().zip(free_idx) {
        let p = &space.params[pi];
        p.name.set(&mut dev, p.decode(*zi));
    }
    dev
}

/// Weighted log-time misfit; unreachable targets contribute the horizon
/// distance plus the squared decade deficit of the rate.
pub fn loss_for_device(
    dev: &DeviceParams,
    points: &[FitPoint],
    h_ext_z: f64,
    rate_opts: &TimeToRateOptions,
) -> Result<f64, FitError> {
    if dev.checked().is_err() {
        return Ok(f64::INFINITY);
    }
    let tau_d = dev.tau_d_s();
    let horizon_s = rate_opts.tau_max * tau_d;
    let results = exec::map_slice(points, |pt| {
        time_to_wer(dev, pt.current_a, h_ext_z, pt.target_rate, rate_opts)
    });
    let mut loss = 0.0;
    for (pt, res) in points.iter().zip(results) {
        match res {
            Ok(t_model) => {
                let d = t_model.log10() - pt.measured_time_s.log10();
                loss += pt.weight * d * d;
            }
            Err(StatsError::NoBracket { rate_at_max, .. }) => {
                let d_time = horizon_s.log10() - pt.measured_time_s.log10();
                let d_rate = (rate_at_max.max(1e-300) / pt.target_rate).log10();
                loss += pt.weight * (d_time * d_time + d_rate * d_rate);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(loss)
}

struct Budget {
    used: usize,
    max: usize,
}

impl Budget {
    fn exhausted(&self) -> bool {
        self.used >= self.max
    }
}

struct Objective<'a> {
    base: &'a DeviceParams,
    space: &'a FitSpace,
    free_idx: Vec<usize>,
    points: &'a [FitPoint],
    h_ext_z: f64,
    rate_opts: &'a TimeToRateOptions,
}

impl Objective<'_> {
    fn eval(&self, z: &[f64], budget: &mut Budget) -> Result<f64, FitError> {
        if budget.exhausted() {
            return Ok(f64::INFINITY);
        }
        budget.used += 1;
        let dev = candidate_device(self.base, self.space, &self.free_idx, z);
        loss_for_device(&dev, self.points, self.h_ext_z, self.rate_opts)
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for &pi in &self.free_idx {
            let p = &self.space.params[pi];
            lo.push(p.encode(p.lo));
            hi.push(p.encode(p.hi));
        }
        (lo, hi)
    }
}

fn project(z: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in z.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn gradient(
    obj: &Objective,
    z: &[f64],
    lo: &[f64],
    hi: &[f64],
    budget: &mut Budget,
) -> Result<Vec<f64>, FitError> {
    let mut g = vec![0.0; z.len()];
    for i in 0..z.len() {
        let h = 1e-4 * z[i].abs().max(1.0);
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[i] = (z[i] + h).min(hi[i]);
        zm[i] = (z[i] - h).max(lo[i]);
        let span = zp[i] - zm[i];
        if span <= 0.0 {
            g[i] = 0.0;
            continue;
        }
        let fp = obj.eval(&zp, budget)?;
        let fm = obj.eval(&zm, budget)?;
        g[i] = (fp - fm) / span;
    }
    Ok(g)
}

/// Projected-BFGS descent from `z`; returns the refined point and its loss.
fn local_minimize(
    obj: &Objective,
    z0: Vec<f64>,
    f0: f64,
    lo: &[f64],
    hi: &[f64],
    max_iters: usize,
    budget: &mut Budget,
) -> Result<(Vec<f64>, f64), FitError> {
    let n = z0.len();
    let mut z = z0;
    let mut f = f0;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut g = gradient(obj, &z, lo, hi, budget)?;

    for _ in 0..max_iters {
        if budget.exhausted() {
            break;
        }
        let gv = DMatrix::from_column_slice(n, 1, &g);
        let mut d: Vec<f64> = (-(&h_inv) * &gv).column(0).iter().cloned().collect();
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope.abs() < 1e-14 * (1.0 + f.abs()) {
            break;
        }

        // Armijo backtracking.
        let mut t = 1.0f64;
        let mut accepted = None;
        for _ in 0..30 {
            let mut zt: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            project(&mut zt, lo, hi);
            let ft = obj.eval(&zt, budget)?;
            if ft <= f + 1e-4 * t * slope || ft < f - 1e-16 {
                accepted = Some((zt, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((z_new, f_new)) = accepted else {
            break;
        };

        let g_new = gradient(obj, &z_new, lo, hi, budget)?;
        let s: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let s_norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm && sy > 0.0 {
            let sv = DMatrix::from_column_slice(n, 1, &s);
            let yv = DMatrix::from_column_slice(n, 1, &y);
            let rho = 1.0 / sy;
            let ident = DMatrix::<f64>::identity(n, n);
            let left = &ident - rho * (&sv * yv.transpose());
            h_inv = &left * h_inv * left.transpose() + rho * (&sv * sv.transpose());
        } else {
            h_inv = DMatrix::identity(n, n);
        }

        let df = f - f_new;
        z = z_new;
        f = f_new;
        g = g_new;

        // Projected-gradient stationarity.
        let pg = z
            .iter()
            .zip(&g)
            .zip(lo.iter().zip(hi))
            .map(|((zi, gi), (li, hi_))| {
                if (*zi <= *li && *gi > 0.0) || (*zi >= *hi_ && *gi < 0.0) {
                    0.0
                } else {
                    gi.abs()
                }
            })
            .fold(0.0f64, f64::max);
        if pg < 1e-8 || df.abs() < 1e-12 * (1.0 + f.abs()) {
            break;
        }
    }
    Ok((z, f))
}

/// Basin-hopping regression of device parameters against measured times.
pub fn fit_parameters(
    space: &FitSpace,
    points: &[FitPoint],
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints { have: points.len() });
    }
    for p in &space.params {
        if !p.frozen && !(p.lo > 0.0 && p.hi > p.lo) {
            return Err(FitError::BadSpace(format!(
                "{}: bounds ({}, {}) must be positive and ordered",
                p.name.key(),
                p.lo,
                p.hi
            )));
        }
    }
    let free_idx: Vec<usize> = space
        .params
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.frozen)
        .map(|(i, _)| i)
        .collect();

    let obj = Objective {
        base: &opts.base,
        space,
        free_idx: free_idx.clone(),
        points,
        h_ext_z: opts.h_ext_z,
        rate_opts: &opts.rate_opts,
    };
    let mut budget = Budget {
        used: 0,
        max: opts.max_evals.max(1),
    };

    let finish =
        |z: &[f64], loss: f64, status: FitStatus, evals: usize, trace: Vec<FitTraceEntry>| {
            let device = candidate_device(&opts.base, space, &free_idx, z);
            let values = space
                .params
                .iter()
                .map(|p| (p.name, p.name.get(&device)))
                .collect();
            FitResult {
                device,
                values,
                loss,
                status,
                evals,
                trace,
            }
        };

    // Everything frozen: a single diagnostic evaluation.
    if free_idx.is_empty() {
        let loss = obj.eval(&[], &mut budget)?;
        return Ok(finish(&[], loss, FitStatus::Converged, budget.used, vec![]));
    }

    let (lo, hi) = obj.bounds();
    let mut z0: Vec<f64> = free_idx
        .iter()
        .map(|&pi| {
            let p = &space.params[pi];
            p.encode(p.name.get(&opts.base))
        })
        .collect();
    project(&mut z0, &lo, &hi);

    let f0 = obj.eval(&z0, &mut budget)?;
    let (mut cur_z, mut cur_f) =
        local_minimize(&obj, z0, f0, &lo, &hi, opts.max_local_iters, &mut budget)?;
    let mut best_z = cur_z.clone();
    let mut best_f = cur_f;
    let mut trace = vec![FitTraceEntry {
        eval: budget.used,
        loss: cur_f,
        values: free_idx
            .iter()
            .zip(&cur_z)
            .map(|(&pi, &z)| space.params[pi].decode(z))
            .collect(),
    }];

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.hops {
        if budget.exhausted() {
            let status = FitStatus::BudgetExhausted;
            return Ok(finish(&best_z, best_f, status, budget.used, trace));
        }
        let mut zp: Vec<f64> = cur_z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let span = (hi[i] - lo[i]).max(1e-12);
                let n: f64 = rng.sample(rand_distr::StandardNormal);
                v + opts.hop_sigma * span * n
            })
            .collect();
        project(&mut zp, &lo, &hi);
        let fp = obj.eval(&zp, &mut budget)?;
        let (z_loc, f_loc) =
            local_minimize(&obj, zp, fp, &lo, &hi, opts.max_local_iters, &mut budget)?;

        let accept = f_loc <= cur_f || {
            let u: f64 = rng.random();
            u < ((cur_f - f_loc) / opts.hop_temperature).exp()
        };
        if accept {
            cur_z = z_loc.clone();
            cur_f = f_loc;
        }
        if f_loc < best_f {
            best_f = f_loc;
            best_z = z_loc;
            trace.push(FitTraceEntry {
                eval: budget.used,
                loss: best_f,
                values: free_idx
                    .iter()
                    .zip(&best_z)
                    .map(|(&pi, &z)| space.params[pi].decode(z))
                    .collect(),
            });
        }
    }

    let status = if budget.exhausted() {
        FitStatus::BudgetExhausted
    } else {
        FitStatus::Converged
    };
    Ok(finish(&best_z, best_f, status, budget.used, trace))
}

/// First time the deterministic fictitious-field transient crosses into the
/// switched hemisphere; `None` if it never does within `t_max_s`.
pub fn fictitious_switching_time(
    dev: &DeviceParams,
    current_a: f64,
    h_ext_z: f64,
    c_f: f64,
    dt_s: f64,
    t_max_s: f64,
) -> Result<Option<f64>, SllgsError> {
    let traj = run_transient(
        dev,
        &[Segment {
            current_a,
            h_ext_z_a_per_m: h_ext_z,
            duration_s: t_max_s,
        }],
        &TransientOptions {
            dt_s,
            record_stride: 1,
            thermal: Thermal::Fictitious { c_f },
            initial: InitialState::ThermalAverageTilt,
        },
    )?;
    let mut prev = (traj.t_s[0], traj.m[0].dot(&dev.m_p));
    for (t, m) in traj.t_s.iter().zip(&traj.m).skip(1) {
        let proj = m.dot(&dev.m_p);
        if proj < 0.0 {
            let (t0, p0) = prev;
            let frac = p0 / (p0 - proj);
            return Ok(Some(t0 + frac * (t - t0)));
        }
        prev = (*t, proj);
    }
    Ok(None)
}

#[derive(Debug, Clone)]
pub struct CalibrateOptions {
    pub dt_s: f64,
    pub rate_opts: TimeToRateOptions,
    /// Initial coefficient bracket, expanded downward (retarding) or upward
    /// as needed.
    pub bracket: (f64, f64),
    /// Relative time tolerance that ends the bisection.
    pub tol_rel: f64,
    pub max_expand: usize,
}

impl CalibrateOptions {
    pub fn for_device(dev: &DeviceParams) -> Self {
        CalibrateOptions {
            dt_s: dev.tau_d_s() / 1000.0,
            rate_opts: TimeToRateOptions::default(),
            bracket: (0.0, 20.0),
            tol_rel: 0.005,
            max_expand: 7,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Calibration {
    pub target_rate: f64,
    pub c_f: f64,
    /// Time at which the density solver reaches the target rate.
    pub fpe_time_s: f64,
    /// Switching time of the calibrated deterministic transient.
    pub sllgs_time_s: f64,
    pub rel_err: f64,
}

/// Finds the fictitious-field coefficient whose deterministic switching time
/// matches the density-solver time to the target write error rate.
pub fn calibrate_cf(
    dev: &DeviceParams,
    current_a: f64,
    h_ext_z: f64,
    target_rate: f64,
    opts: &CalibrateOptions,
) -> Result<Calibration, FitError> {
    let t_star = time_to_wer(dev, current_a, h_ext_z, target_rate, &opts.rate_opts)?;
    let t_max_s = 3.0 * t_star + 10.0 * dev.tau_d_s();
    let probe = |c: f64| -> Result<Option<f64>, FitError> {
        Ok(fictitious_switching_time(
            dev, current_a, h_ext_z, c, opts.dt_s, t_max_s,
        )?)
    };
    // Switching time decreases with c_f: find lo (switches at or after
    // t_star) and hi (switches before).
    let slow_enough = |t: Option<f64>| t.map(|v| v >= t_star).unwrap_or(true);

    let (mut lo, mut hi);
    let t_at_start = probe(opts.bracket.0)?;
    if slow_enough(t_at_start) {
        lo = opts.bracket.0;
        hi = opts.bracket.1;
        let mut t_hi = probe(hi)?;
        let mut expansions = 0;
        while slow_enough(t_hi) {
            if expansions >= opts.max_expand {
                return Err(FitError::CalibrationNoDrivingCross {
                    c_f_limit: hi,
                    target_time_s: t_star,
                });
            }
            hi *= 2.0;
            t_hi = probe(hi)?;
            expansions += 1;
        }
    } else {
        hi = opts.bracket.0;
        lo = -1.0;
        let mut t_lo = probe(lo)?;
        let mut expansions = 0;
        while !slow_enough(t_lo) {
            if expansions >= opts.max_expand {
                return Err(FitError::CalibrationNoRetardingCross {
                    c_f_limit: lo,
                    target_time_s: t_star,
                });
            }
            lo *= 2.0;
            t_lo = probe(lo)?;
            expansions += 1;
        }
    }

    let mut best = (f64::NAN, f64::INFINITY, f64::INFINITY); // (c, t, rel err)
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let t_mid = probe(mid)?;
        if let Some(t) = t_mid {
            let rel = (t - t_star).abs() / t_star;
            if rel < best.2 {
                best = (mid, t, rel);
            }
            if rel <= opts.tol_rel {
                break;
            }
        }
        if slow_enough(t_mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 * (1.0 + hi.abs()) {
            break;
        }
    }
    if !best.0.is_finite() {
        return Err(FitError::CalibrationNoDrivingCross {
            c_f_limit: hi,
            target_time_s: t_star,
        });
    }
    Ok(Calibration {
        target_rate,
        c_f: best.0,
        fpe_time_s: t_star,
        sllgs_time_s: best.1,
        rel_err: best.2,
    })
}

/// FNV-1a 64-bit hash (used to stamp the dataset a deck was fitted to).
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deck key suffix for a target rate: plain decimal at or above 1e-3
/// ("0.5"), otherwise exponent form with a two-digit exponent ("1e-06").
pub fn format_target(t: f64) -> String {
    if t >= 1e-3 {
        format!("{t}")
    } else {
        let s = format!("{t:e}");
        match s.split_once('e') {
            Some((mant, exp)) => {
                let (sign, digits) = match exp.strip_prefix('-') {
                    Some(d) => ("-", d),
                    None => ("", exp),
                };
                format!("{mant}e{sign}{digits:0>2}")
            }
            None => s,
        }
    }
}

/// Fitted device plus calibrated fictitious-field coefficients, with
/// free-form provenance metadata. Serializes to a text deck that round-trips
/// floats exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCard {
    pub device: DeviceParams,
    /// `(target_rate, c_f)` in descending target order.
    pub cf_entries: Vec<(f64, f64)>,
    pub meta: Vec<(String, String)>,
}

const DECK_DEVICE_KEYS: [&str; 8] = [
    "msat_a_per_m",
    "volume_m3",
    "alpha",
    "hk_eff_a_per_m",
    "delta",
    "temp_k",
    "pol_p",
    "eps_prime",
];

fn deck_value(card: &ModelCard, key: &str) -> f64 {
    let d = &card.device;
    match key {
        "msat_a_per_m" => d.msat_a_per_m,
        "volume_m3" => d.volume_m3,
        "alpha" => d.alpha,
        "hk_eff_a_per_m" => d.hk_eff_a_per_m,
        "delta" => d.delta_effective(),
        "temp_k" => d.temp_k,
        "pol_p" => d.pol_p,
        "eps_prime" => d.eps_prime,
        _ => unreachable!("unknown deck key {key}"),
    }
}

pub fn write_deck<W: Write>(card: &ModelCard, out: &mut W) -> std::io::Result<()> {
    for (k, v) in &card.meta {
        writeln!(out, "# meta: {k} = {v}")?;
    }
    for key in DECK_DEVICE_KEYS {
        writeln!(out, "{key} = {:.16e}", deck_value(card, key))?;
    }
    let mut entries = card.cf_entries.clone();
    entries.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (target, c_f) in entries {
        writeln!(out, "cf_wer_{} = {:.16e}", format_target(target), c_f)?;
    }
    Ok(())
}

pub fn deck_to_string(card: &ModelCard) -> String {
    let mut buf = Vec::new();
    write_deck(card, &mut buf).expect("in-memory write cannot fail");
    String::from_utf8(buf).expect("deck text is ASCII")
}

pub fn parse_deck(input: &str) -> Result<ModelCard, FitError> {
    let mut meta = Vec::new();
    let mut values: Vec<(String, f64)> = Vec::new();
    let mut cf_entries = Vec::new();

    for (ln, raw) in input.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(m) = rest.trim().strip_prefix("meta:") {
                if let Some((k, v)) = m.split_once('=') {
                    meta.push((k.trim().to_string(), v.trim().to_string()));
                }
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            FitError::DeckParse(format!("line {}: expected `key = value`", ln + 1))
        })?;
        let key = key.trim();
        let v: f64 = value.trim().parse().map_err(|e| {
            FitError::DeckParse(format!(
                "line {}: bad number {:?}: {e}",
                ln + 1,
                value.trim()
            ))
        })?;
        if let Some(target_s) = key.strip_prefix("cf_wer_") {
            let target: f64 = target_s.parse().map_err(|e| {
                FitError::DeckParse(format!("line {}: bad target {target_s:?}: {e}", ln + 1))
            })?;
            cf_entries.push((target, v));
        } else if DECK_DEVICE_KEYS.contains(&key) {
            if values.iter().any(|(k, _)| k == key) {
                return Err(FitError::DeckParse(format!(
                    "line {}: duplicate key {key}",
                    ln + 1
                )));
            }
            values.push((key.to_string(), v));
        } else {
            return Err(FitError::DeckParse(format!(
                "line {}: unknown key {key:?}",
                ln + 1
            )));
        }
    }

    let get = |key: &str| -> Result<f64, FitError> {
        values
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| FitError::DeckParse(format!("missing key {key}")))
    };

    let device = DeviceParams {
        msat_a_per_m: get("msat_a_per_m")?,
        volume_m3: get("volume_m3")?,
        alpha: get("alpha")?,
        hk_eff_a_per_m: get("hk_eff_a_per_m")?,
        temp_k: get("temp_k")?,
        pol_p: get("pol_p")?,
        eps_prime: get("eps_prime")?,
        m_p: nalgebra::Vector3::z(),
        delta: Some(get("delta")?),
    };
    cf_entries.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(ModelCard {
        device,
        cf_entries,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::reference_device;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn i_c(dev: &DeviceParams) -> f64 {
        dev.i_c_amps(dev.stt_prefactor_per_amp()).unwrap()
    }

    fn fit_base() -> DeviceParams {
        let mut dev = reference_device();
        dev.delta = None;
        dev
    }

    fn synthetic_points(dev: &DeviceParams, n_order: usize) -> Vec<FitPoint> {
        let ic = i_c(dev);
        let opts = TimeToRateOptions {
            n_order,
            ..Default::default()
        };
        let mut pts = Vec::new();
        for (mult, target) in [(1.6, 1e-2), (1.8, 1e-4), (2.0, 1e-5)] {
            let current = mult * ic;
            let t = time_to_wer(dev, current, 0.0, target, &opts).unwrap();
            pts.push(FitPoint {
                current_a: current,
                target_rate: target,
                measured_time_s: t,
                weight: 1.0,
            });
        }
        pts
    }

    #[test]
    fn fnv1a_matches_reference_digests() {
        assert_eq!(fnv1a_64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a_64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a_64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn target_formatting_is_stable() {
        assert_eq!(format_target(0.5), "0.5");
        assert_eq!(format_target(0.05), "0.05");
        assert_eq!(format_target(1e-3), "0.001");
        assert_eq!(format_target(1e-6), "1e-06");
        assert_eq!(format_target(2.5e-7), "2.5e-07");
        assert_eq!(format_target(1e-12), "1e-12");
        // And they parse back to the same value.
        for t in [0.5, 0.05, 1e-3, 1e-6, 2.5e-7, 1e-12] {
            assert_eq!(format_target(t).parse::<f64>().unwrap(), t);
        }
    }

    #[test]
    fn deck_round_trips_bit_exactly() {
        let mut dev = reference_device();
        dev.alpha = 0.012345678901234567;
        let card = ModelCard {
            device: dev,
            cf_entries: vec![(1e-6, -2.375819), (0.5, 0.8112345)],
            meta: vec![
                ("tool_version".into(), "0.1.0".into()),
                (
                    "dataset_hash".into(),
                    format!("fnv1a:{:016x}", fnv1a_64(b"x")),
                ),
                ("solver".into(), "spectral".into()),
                ("cal_current_a".into(), "4e-5".into()),
            ],
        };
        let text = deck_to_string(&card);
        let back = parse_deck(&text).unwrap();
        assert_eq!(back.meta, card.meta);
        assert_eq!(back.cf_entries, vec![(0.5, 0.8112345), (1e-6, -2.375819)]);
        assert_eq!(back.device.msat_a_per_m, card.device.msat_a_per_m);
        assert_eq!(back.device.alpha, card.device.alpha);
        assert_eq!(back.device.delta, Some(card.device.delta_effective()));
        // Emission is idempotent given the parsed card.
        assert_eq!(deck_to_string(&back), text);
    }

    #[test]
    fn deck_rejects_unknown_and_duplicate_keys() {
        let card = ModelCard {
            device: reference_device(),
            cf_entries: vec![],
            meta: vec![],
        };
        let text = deck_to_string(&card);
        let bad = format!("{text}mystery_key = 1.0\n");
        assert!(matches!(parse_deck(&bad), Err(FitError::DeckParse(_))));
        let dup = format!("{text}alpha = 2.0\n");
        assert!(matches!(parse_deck(&dup), Err(FitError::DeckParse(_))));
        assert!(matches!(
            parse_deck("alpha = 0.01\n"),
            Err(FitError::DeckParse(_))
        ));
    }

    #[test]
    fn loss_vanishes_on_the_generating_device() {
        let dev = fit_base();
        let pts = synthetic_points(&dev, 100);
        let loss = loss_for_device(
            &dev,
            &pts,
            0.0,
            &TimeToRateOptions {
                n_order: 100,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(loss < 1e-20, "self-loss {loss:e}");
    }

    #[test]
    fn unreachable_targets_pay_a_finite_penalty() {
        let dev = fit_base();
        let pts = vec![
            FitPoint {
                current_a: 0.4 * i_c(&dev),
                target_rate: 1e-6,
                measured_time_s: 1e-8,
                weight: 1.0,
            };
            3
        ];
        let loss = loss_for_device(
            &dev,
            &pts,
            0.0,
            &TimeToRateOptions {
                n_order: 80,
                tau_max: 100.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(loss.is_finite() && loss > 0.0, "loss = {loss}");
    }

    #[test]
    fn fit_rejects_thin_datasets() {
        let dev = fit_base();
        let res = fit_parameters(
            &FitSpace::default(),
            &synthetic_points(&dev, 80)[..2],
            &FitOptions::new(dev),
        );
        assert!(matches!(res, Err(FitError::TooFewPoints { have: 2 })));
    }

    #[test]
    fn frozen_space_is_a_single_evaluation() {
        let dev = fit_base();
        let pts = synthetic_points(&dev, 100);
        let space = FitSpace {
            params: vec![FitParam::frozen(ParamName::Alpha)],
        };
        let mut opts = FitOptions::new(dev);
        opts.rate_opts.n_order = 100;
        let res = fit_parameters(&space, &pts, &opts).unwrap();
        assert_eq!(res.evals, 1);
        assert_eq!(res.status, FitStatus::Converged);
        assert!(res.loss < 1e-20);
    }

    #[test]
    fn one_parameter_bowl_is_recovered() {
        let truth = fit_base();
        let pts = synthetic_points(&truth, 100);
        let mut start = truth.clone();
        start.hk_eff_a_per_m *= 1.15;
        let space = FitSpace {
            params: vec![FitParam::free(
                ParamName::HkEffAPerM,
                0.7 * truth.hk_eff_a_per_m,
                1.3 * truth.hk_eff_a_per_m,
            )],
        };
        let mut opts = FitOptions::new(start);
        opts.rate_opts.n_order = 100;
        opts.hops = 0;
        opts.max_evals = 400;
        let res = fit_parameters(&space, &pts, &opts).unwrap();
        assert_relative_eq!(
            res.device.hk_eff_a_per_m,
            truth.hk_eff_a_per_m,
            max_relative = 1e-3
        );
        assert!(res.loss < 1e-8, "loss {:e}", res.loss);
        assert!(!res.trace.is_empty());
    }

    #[test]
    fn calibration_hits_the_density_solver_time() {
        let dev = reference_device();
        let current = 1.8795 * i_c(&dev);
        let mut opts = CalibrateOptions::for_device(&dev);
        opts.rate_opts.n_order = 140;
        let easy = calibrate_cf(&dev, current, 0.0, 0.5, &opts).unwrap();
        assert!(easy.rel_err <= 0.01, "rel err {}", easy.rel_err);
        let hard = calibrate_cf(&dev, current, 0.0, 1e-4, &opts).unwrap();
        assert!(hard.rel_err <= 0.01, "rel err {}", hard.rel_err);
        // Rarer failures take longer, which needs a smaller (more retarding)
        // coefficient.
        assert!(
            hard.c_f < easy.c_f,
            "c_f(1e-4) = {} !< c_f(0.5) = {}",
            hard.c_f,
            easy.c_f
        );
        assert!(hard.fpe_time_s > easy.fpe_time_s);
    }

    #[test]
    fn calibration_is_insensitive_to_the_integration_step() {
        let dev = reference_device();
        let current = 1.8 * i_c(&dev);
        let mut opts = CalibrateOptions::for_device(&dev);
        opts.rate_opts.n_order = 120;
        let coarse = calibrate_cf(&dev, current, 0.0, 0.5, &opts).unwrap();
        opts.dt_s /= 2.0;
        let fine = calibrate_cf(&dev, current, 0.0, 0.5, &opts).unwrap();
        let shift = (coarse.c_f - fine.c_f).abs() / coarse.c_f.abs().max(1.0);
        assert!(shift < 0.02, "c_f moved by {shift:.3} on dt halving");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn deck_floats_survive_round_trips(
            msat in 1e5f64..3e6,
            vol in 1e-26f64..1e-23,
            alpha in 1e-3f64..0.2,
            hk in 1e4f64..1e6,
            temp in 4.0f64..500.0,
            pol in 0.01f64..1.0,
            epsp in -0.5f64..0.5,
            cf in -50.0f64..50.0,
            target_exp in -12i32..-3,
        ) {
            let device = DeviceParams {
                msat_a_per_m: msat,
                volume_m3: vol,
                alpha,
                hk_eff_a_per_m: hk,
                temp_k: temp,
                pol_p: pol,
                eps_prime: epsp,
                m_p: nalgebra::Vector3::z(),
                delta: Some(41.5),
            };
            let card = ModelCard {
                device,
                cf_entries: vec![(10f64.powi(target_exp), cf), (0.5, 1.25)],
                meta: vec![("solver".into(), "spectral".into())],
            };
            let back = parse_deck(&deck_to_string(&card)).unwrap();
            prop_assert_eq!(back.device.msat_a_per_m, msat);
            prop_assert_eq!(back.device.volume_m3, vol);
            prop_assert_eq!(back.device.alpha, alpha);
            prop_assert_eq!(back.device.hk_eff_a_per_m, hk);
            prop_assert_eq!(back.device.temp_k, temp);
            prop_assert_eq!(back.device.pol_p, pol);
            prop_assert_eq!(back.device.eps_prime, epsp);
            prop_assert_eq!(back.cf_entries[0], (0.5, 1.25));
            prop_assert_eq!(back.cf_entries[1], (10f64.powi(target_exp), cf));
        }
    }
}
