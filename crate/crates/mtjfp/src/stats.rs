//! Write- and read-error statistics built on the density solvers.
//!
//! A write error is a pulse that fails to switch the free layer: the run
//! starts from thermal equilibrium in the unswitched well and the error rate
//! is the probability mass still on that side when the pulse ends. A read
//! error is the mirror case: a small sense current accidentally switching the
//! state, i.e. the mass that crossed during the read. Both reduce to evolving
//! the polar-angle density and integrating a hemisphere, with either solver.
//!
//! `time_to_wer` inverts the error-rate curve: it propagates Legendre
//! coefficients over dyadically growing blocks (64 steps per block, the block
//! propagator squared between blocks) until the target rate is bracketed,
//! then refines the bracket with 64 sub-steps and a log-linear interpolation.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::device::{normalize_default, DeviceError, DeviceParams};
use crate::exec;
use crate::fvm::{self, EvolveOptions, FvmError, Grading, GridDistribution, ThetaMesh};
use crate::sllgs::{
    run_ensemble, EnsembleOptions, EnsembleResult, InitialState, Segment, SllgsError,
};
use crate::spectral::{self, SpectralError};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("rate never crossed the target: still {rate_at_max:e} at tau = {tau_max}")]
    NoBracket { tau_max: f64, rate_at_max: f64 },
    #[error(
        "{n_walks} walks expect only {expected_errors:.2} rare outcomes (need at least 5); \
         increase the walk count or move the target"
    )]
    InsufficientWalks {
        n_walks: usize,
        expected_errors: f64,
    },
    #[error("bad input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Fvm(#[from] FvmError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Sllgs(#[from] SllgsError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("csv: {0}")]
    Io(#[from] std::io::Error),
}

/// Density-solver selection for rate computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverChoice {
    Fvm { m: usize, grading: Grading },
    Spectral { n: usize },
}

impl Default for SolverChoice {
    fn default() -> Self {
        SolverChoice::Spectral {
            n: spectral::DEFAULT_ORDER,
        }
    }
}

impl SolverChoice {
    pub fn name(&self) -> &'static str {
        match self {
            SolverChoice::Fvm { .. } => "fvm",
            SolverChoice::Spectral { .. } => "spectral",
        }
    }
}

/// Unnormalized equilibrium density in `x = cos(theta)`, scaled by
/// `exp(-Delta)` so it stays in range for any barrier height.
pub fn boltzmann_x_density(delta: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| (delta * (x * x - 1.0)).exp()
}

fn cell_quadrature<F: Fn(f64) -> f64>(lo: f64, hi: f64, f: F) -> f64 {
    let (nodes, weights) = spectral::gauss_legendre(12);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

fn masses_on(mesh: &ThetaMesh, delta: f64, theta_max: f64) -> Vec<f64> {
    let f = boltzmann_x_density(delta);
    let mut p: Vec<f64> = mesh
        .faces
        .windows(2)
        .map(|w| {
            let hi = w[1].min(theta_max);
            if hi <= w[0] {
                0.0
            } else {
                cell_quadrature(w[0], hi, |t| t.sin() * f(t.cos()))
            }
        })
        .collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

/// Equilibrium cell masses over the whole sphere.
pub fn equilibrium_masses(mesh: &ThetaMesh, delta: f64) -> Vec<f64> {
    masses_on(mesh, delta, std::f64::consts::PI)
}

/// Equilibrium cell masses restricted to the unswitched well
/// (`theta < pi/2`), the starting distribution of a write or read.
pub fn initial_well_masses(mesh: &ThetaMesh, delta: f64) -> Vec<f64> {
    masses_on(mesh, delta, 0.5 * std::f64::consts::PI)
}

/// Legendre coefficients of the unswitched-well equilibrium.
pub fn initial_well_coeffs(n_max: usize, delta: f64) -> Result<DVector<f64>, SpectralError> {
    let f = boltzmann_x_density(delta);
    spectral::project_density(move |x| if x < 0.0 { 0.0 } else { f(x) }, n_max)
}

/// Unswitched probability of a coefficient vector, summed directly (not as
/// `1 - switched`) so values near the floor keep their leading digits.
pub fn unswitched_fraction(r: &DVector<f64>) -> f64 {
    // integral of P_n over [0, 1] is 1 for n = 0 and -w_n for n >= 1
    let w = spectral::switched_weights(r.len() - 1);
    let mut s = r[0];
    for n in 1..r.len() {
        s -= w[n] * r[n];
    }
    s
}

/// Error-rate kind (which hemisphere counts as the error).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Write,
    Read,
}

impl RateKind {
    pub fn label(&self) -> &'static str {
        match self {
            RateKind::Write => "wer",
            RateKind::Read => "rer",
        }
    }

    pub fn from_label(s: &str) -> Option<RateKind> {
        match s {
            "wer" => Some(RateKind::Write),
            "rer" => Some(RateKind::Read),
            _ => None,
        }
    }
}

/// One row of an error-rate curve; `solver` records provenance ("fvm",
/// "spectral", "sllgs", or "measured").
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub current_a: f64,
    pub pulse_s: f64,
    pub temp_k: f64,
    pub rate: f64,
    pub kind: String,
    pub solver: String,
}

fn hemisphere_fractions(
    dev: &DeviceParams,
    current_a: f64,
    h_ext_z: f64,
    pulse_s: f64,
    solver: SolverChoice,
) -> Result<(f64, f64), StatsError> {
    let dev = dev.checked()?;
    let nd = normalize_default(&dev, current_a, h_ext_z)?;
    let tau = nd.time_to_tau(pulse_s);
    match solver {
        SolverChoice::Spectral { n } => {
            let gen = spectral::build_generator(n, &nd);
            let r0 = initial_well_coeffs(n, nd.delta)?;
            let out = spectral::evolve(&r0, &gen, &[tau])?;
            let r = &out[0].1;
            Ok((unswitched_fraction(r), spectral::switched_fraction(r)))
        }
        SolverChoice::Fvm { m, grading } => {
            let mesh = Arc::new(fvm::build_mesh(m, grading)?);
            let p0 = initial_well_masses(&mesh, nd.delta);
            let init = GridDistribution::new(Arc::clone(&mesh), p0);
            let res = fvm::evolve(&init, &[(nd, tau)], &EvolveOptions::default())?;
            Ok((
                res.final_dist.unswitched_fraction(),
                res.final_dist.switched_fraction(),
            ))
        }
    }
}

/// Write error rate: probability the state is still unswitched after the
/// pulse.
pub fn wer_at(
    dev: &DeviceParams,
    current_a: f64,
    h_ext_z: f64,
    pulse_s: f64,
    solver: SolverChoice,
) -> Result<f64, StatsError> {
    hemisphere_fractions(dev, current_a, h_ext_z, pulse_s, solver).map(|(u, _)| u)
}

/// Read error rate: probability a read pulse switched the state.
pub fn rer_at(
    dev: &DeviceParams,
    current_a: f64,
    h_ext_z: f64,
    pulse_s: f64,
    solver: SolverChoice,
) -> Result<f64, StatsError> {
    hemisphere_fractions(dev, current_a, h_ext_z, pulse_s, solver).map(|(_, s)| s)
}

fn rate_curve(
    dev: &DeviceParams,
    currents: &[f64],
    h_ext_z: f64,
    pulse_s: f64,
    solver: SolverChoice,
    kind: RateKind,
) -> Result<Vec<CurveRow>, StatsError> {
    let results = exec::map_slice(currents, |&current_a| {
        hemisphere_fractions(dev, current_a, h_ext_z, pulse_s, solver)
    });
    let mut rows = Vec::with_capacity(currents.len());
    for (current_a, res) in currents.iter().zip(results) {
        let (unswitched, switched) = res?;
        rows.push(CurveRow {
            current_a: *current_a,
            pulse_s,
            temp_k: dev.temp_k,
            rate: match kind {
                RateKind::Write => unswitched,
                RateKind::Read => switched,
            },
            kind: kind.label().to_string(),
            solver: solver.name().to_string(),
        });
    }
    Ok(rows)
}

/// Write-error curve over a current sweep (parallel over currents).
pub fn wer_curve(
    dev: &DeviceParams,
    currents: &[f64],
    h_ext_z: f64,
    pulse_s: f64,
    solver: SolverChoice,
) -> Result<Vec<CurveRow>, StatsError> {
    rate_curve(dev, currents, h_ext_z, pulse_s, solver, RateKind::Write)
}

/// Read-error curve over a current sweep (parallel over currents).
pub fn rer_curve(
    dev: &DeviceParams,
    currents: &[f64],
    h_ext_z: f64,
    pulse_s: f64,
    solver: SolverChoice,
) -> Result<Vec<CurveRow>, StatsError> {
    rate_curve(dev, currents, h_ext_z, pulse_s, solver, RateKind::Read)
}

#[derive(Debug, Clone)]
pub struct TimeToRateOptions {
    /// Legendre truncation order.
    pub n_order: usize,
    /// First block step in reduced time.
    pub delta0_tau: f64,
    /// Give up (NoBracket) past this reduced time.
    pub tau_max: f64,
}

impl Default for TimeToRateOptions {
    fn default() -> Self {
        TimeToRateOptions {
            n_order: spectral::DEFAULT_ORDER,
            delta0_tau: 5e-4,
            tau_max: 1000.0,
        }
    }
}

/// Pulse duration (seconds) at which the write error rate first reaches
/// `target`. Fails with [`StatsError::NoBracket`] if the rate stays above the
/// target everywhere below `tau_max` (for instance below the critical
/// current, where it saturates instead of decaying).
pub fn time_to_wer(
    dev: &DeviceParams,
    current_a: f64,
    h_ext_z: f64,
    target: f64,
    opts: &TimeToRateOptions,
) -> Result<f64, StatsError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(StatsError::BadInput(format!("target rate {target}")));
    }
    let dev = dev.checked()?;
    let nd = normalize_default(&dev, current_a, h_ext_z)?;
    let gen = spectral::build_generator(opts.n_order, &nd);
    let r0 = initial_well_coeffs(opts.n_order, nd.delta)?;
    let tau_d = dev.tau_d_s();

    let log_floor = 1e-300f64;
    let mut block = spectral::propagator(&gen, opts.delta0_tau)?;
    let mut dt = opts.delta0_tau;
    let mut r = r0;
    let mut tau = 0.0f64;
    let mut wer = unswitched_fraction(&r);

    while tau < opts.tau_max {
        for _ in 0..64 {
            let r_next = &block * &r;
            let tau_next = tau + dt;
            let wer_next = unswitched_fraction(&r_next);
            if wer_next <= target {
                // Refine the bracket [tau, tau + dt] with 64 sub-steps.
                let fine = spectral::propagator(&gen, dt / 64.0)?;
                let mut rr = r.clone();
                let mut tt = tau;
                let mut ww = wer;
                for _ in 0..64 {
                    let rr_next = &fine * &rr;
                    let tt_next = tt + dt / 64.0;
                    let ww_next = unswitched_fraction(&rr_next);
                    if ww_next <= target {
                        let l0 = ww.max(log_floor).log10();
                        let l1 = ww_next.max(log_floor).log10();
                        let lt = target.log10();
                        let frac = if l0 > l1 { (l0 - lt) / (l0 - l1) } else { 1.0 };
                        return Ok((tt + frac.clamp(0.0, 1.0) * (dt / 64.0)) * tau_d);
                    }
                    rr = rr_next;
                    tt = tt_next;
                    ww = ww_next;
                }
                // Rounding landed the crossing on the block boundary itself.
                return Ok(tau_next * tau_d);
            }
            r = r_next;
            tau = tau_next;
            wer = wer_next;
            if tau >= opts.tau_max {
                break;
            }
        }
        let mut squared = &block * &block;
        for c in 0..squared.ncols() {
            squared[(0, c)] = if c == 0 { 1.0 } else { 0.0 };
        }
        block = squared;
        dt *= 2.0;
    }
    Err(StatsError::NoBracket {
        tau_max: tau,
        rate_at_max: wer,
    })
}

/// Wilson score interval for a binomial proportion `count / n` at critical
/// value `z`.
pub fn wilson_interval(count: usize, n: usize, z: f64) -> (f64, f64) {
    assert!(n > 0);
    let nf = n as f64;
    let p = count as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone)]
pub struct McValidateOptions {
    pub n_walks: usize,
    pub seed: u64,
    /// Critical value of the confidence interval (2.5758... for 99%).
    pub z: f64,
    pub dt_s: f64,
    pub solver: SolverChoice,
}

#[derive(Debug, Clone)]
pub struct McComparison {
    pub fpe_wer: f64,
    pub ensemble: EnsembleResult,
    pub ci_low: f64,
    pub ci_high: f64,
    pub inside: bool,
}

/// Checks a density-solver write error rate against an independent stochastic
/// ensemble. Refuses configurations whose expected rare-outcome count is
/// below 5, where the interval is meaningless.
pub fn mc_validate(
    dev: &DeviceParams,
    current_a: f64,
    h_ext_z: f64,
    pulse_s: f64,
    opts: &McValidateOptions,
) -> Result<McComparison, StatsError> {
    let fpe_wer = wer_at(dev, current_a, h_ext_z, pulse_s, opts.solver)?;
    let expected = opts.n_walks as f64 * fpe_wer.min(1.0 - fpe_wer);
    if expected < 5.0 {
        return Err(StatsError::InsufficientWalks {
            n_walks: opts.n_walks,
            expected_errors: expected,
        });
    }
    let ensemble = run_ensemble(
        dev,
        &[Segment {
            current_a,
            h_ext_z_a_per_m: h_ext_z,
            duration_s: pulse_s,
        }],
        &EnsembleOptions {
            dt_s: opts.dt_s,
            n_walks: opts.n_walks,
            base_seed: opts.seed,
            initial: InitialState::Boltzmann,
        },
    )?;
    let failures = ensemble.n_walks - ensemble.switched;
    let (ci_low, ci_high) = wilson_interval(failures, ensemble.n_walks, opts.z);
    let inside = fpe_wer >= ci_low && fpe_wer <= ci_high;
    Ok(McComparison {
        fpe_wer,
        ensemble,
        ci_low,
        ci_high,
        inside,
    })
}

pub const CURVE_CSV_HEADER: &str = "current_A,pulse_s,temp_K,rate,kind,solver";

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{:e},{:e},{:e},{:e},{},{}",
            r.current_a, r.pulse_s, r.temp_k, r.rate, r.kind, r.solver
        )?;
    }
    Ok(())
}

pub fn read_curve_csv<R: BufRead>(input: R) -> Result<Vec<CurveRow>, StatsError> {
    let mut rows = Vec::new();
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == CURVE_CSV_HEADER => {}
        Some((_, Ok(h))) => {
            return Err(StatsError::BadInput(format!(
                "unexpected header {h:?}, want {CURVE_CSV_HEADER:?}"
            )))
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(StatsError::BadInput("empty curve file".into())),
    }
    for (ln, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(StatsError::BadInput(format!(
                "line {}: expected 6 fields, got {}",
                ln + 1,
                parts.len()
            )));
        }
        let num = |s: &str, what: &str| -> Result<f64, StatsError> {
            s.trim().parse::<f64>().map_err(|e| {
                StatsError::BadInput(format!("line {}: bad {what} {s:?}: {e}", ln + 1))
            })
        };
        rows.push(CurveRow {
            current_a: num(parts[0], "current")?,
            pulse_s: num(parts[1], "pulse")?,
            temp_k: num(parts[2], "temperature")?,
            rate: num(parts[3], "rate")?,
            kind: parts[4].trim().to_string(),
            solver: parts[5].trim().to_string(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::reference_device;
    use approx::assert_relative_eq;

    fn i_c(dev: &DeviceParams) -> f64 {
        dev.i_c_amps(dev.stt_prefactor_per_amp()).unwrap()
    }

    #[test]
    fn equilibrium_masses_are_symmetric_and_normalized() {
        let mesh = fvm::build_mesh(128, Grading::UniformTheta).unwrap();
        let p = equilibrium_masses(&mesh, 63.0);
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        for k in 0..64 {
            assert_relative_eq!(p[k], p[127 - k], max_relative = 1e-10);
        }
    }

    #[test]
    fn initial_well_holds_all_mass_on_one_side() {
        let mesh = fvm::build_mesh(128, Grading::UniformTheta).unwrap();
        let p = initial_well_masses(&mesh, 63.0);
        let dist = GridDistribution::new(Arc::new(mesh), p);
        assert_relative_eq!(dist.total_mass(), 1.0, epsilon = 1e-13);
        assert!(dist.switched_fraction() < 1e-20);
        assert_relative_eq!(dist.unswitched_fraction(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn unswitched_and_switched_fractions_are_complementary() {
        let r = initial_well_coeffs(160, 63.0).unwrap();
        let u = unswitched_fraction(&r);
        let s = spectral::switched_fraction(&r);
        assert_relative_eq!(u + s, 1.0, epsilon = 1e-12);
        assert!(u > 1.0 - 1e-10);
    }

    #[test]
    fn zero_current_write_always_fails() {
        let dev = reference_device();
        let wer = wer_at(&dev, 0.0, 0.0, 1e-8, SolverChoice::default()).unwrap();
        assert!((wer - 1.0).abs() < 1e-10, "wer = {wer}");
    }

    #[test]
    fn small_read_current_rarely_disturbs() {
        // The analytic escape probability at i = 0.2 over 10 ns is bounded by
        // exp(-Delta (1 - i)^2) ~ 1e-18; the solver has to sit below its own
        // numeric floor, far under any reportable rate.
        let dev = reference_device();
        let rer = rer_at(&dev, 0.2 * i_c(&dev), 0.0, 1e-8, SolverChoice::default()).unwrap();
        assert!(rer.abs() < 1e-10, "rer = {rer:e}");
    }

    #[test]
    fn wer_falls_monotonically_with_current() {
        let dev = reference_device();
        let ic = i_c(&dev);
        let currents: Vec<f64> = (0..6).map(|k| (1.2 + 0.2 * k as f64) * ic).collect();
        let rows = wer_curve(
            &dev,
            &currents,
            0.0,
            1e-8,
            SolverChoice::Spectral { n: 160 },
        )
        .unwrap();
        for w in rows.windows(2) {
            assert!(
                w[1].rate < w[0].rate,
                "{} A -> {}, {} A -> {}",
                w[0].current_a,
                w[0].rate,
                w[1].current_a,
                w[1].rate
            );
        }
        assert!(rows[0].rate < 1.0 && rows[0].rate > 0.0);
    }

    #[test]
    fn both_solvers_agree_on_a_write_error() {
        let dev = reference_device();
        let current = 1.8 * i_c(&dev);
        let a = wer_at(&dev, current, 0.0, 8e-9, SolverChoice::Spectral { n: 160 }).unwrap();
        let b = wer_at(
            &dev,
            current,
            0.0,
            8e-9,
            SolverChoice::Fvm {
                m: 384,
                grading: Grading::UniformTheta,
            },
        )
        .unwrap();
        assert!((a - b).abs() < 5e-3, "spectral {a} vs fvm {b}");
    }

    #[test]
    fn time_to_wer_inverts_the_rate_curve() {
        let dev = reference_device();
        let current = 1.8795 * i_c(&dev);
        let opts = TimeToRateOptions {
            n_order: 160,
            ..Default::default()
        };
        for target in [0.5, 1e-2, 1e-6] {
            let t = time_to_wer(&dev, current, 0.0, target, &opts).unwrap();
            let wer = wer_at(&dev, current, 0.0, t, SolverChoice::Spectral { n: 160 }).unwrap();
            assert!(
                (wer / target - 1.0).abs() < 0.05,
                "target {target:e}: wer({t:e} s) = {wer:e}"
            );
        }
    }

    #[test]
    fn time_to_wer_is_monotone_in_target_and_current() {
        let dev = reference_device();
        let ic = i_c(&dev);
        let opts = TimeToRateOptions {
            n_order: 140,
            ..Default::default()
        };
        let t_easy = time_to_wer(&dev, 1.9 * ic, 0.0, 1e-2, &opts).unwrap();
        let t_hard = time_to_wer(&dev, 1.9 * ic, 0.0, 1e-6, &opts).unwrap();
        assert!(t_hard > t_easy);
        let t_slow = time_to_wer(&dev, 1.5 * ic, 0.0, 1e-6, &opts).unwrap();
        assert!(t_slow > t_hard);
    }

    #[test]
    fn subcritical_current_reports_no_bracket() {
        let dev = reference_device();
        let res = time_to_wer(
            &dev,
            0.5 * i_c(&dev),
            0.0,
            1e-6,
            &TimeToRateOptions {
                n_order: 120,
                tau_max: 200.0,
                ..Default::default()
            },
        );
        match res {
            Err(StatsError::NoBracket { rate_at_max, .. }) => {
                assert!(rate_at_max > 1e-6);
            }
            other => panic!("expected NoBracket, got {other:?}"),
        }
    }

    #[test]
    fn wilson_interval_matches_a_hand_computed_case() {
        let (lo, hi) = wilson_interval(5, 10, 1.96);
        assert_relative_eq!(lo, 0.2366, epsilon = 1e-3);
        assert_relative_eq!(hi, 0.7634, epsilon = 1e-3);
        let (lo0, hi0) = wilson_interval(0, 50, 2.5758);
        assert_eq!(lo0, 0.0);
        assert!(hi0 > 0.0 && hi0 < 0.3);
    }

    #[test]
    fn mc_validate_rejects_hopeless_statistics() {
        let dev = reference_device();
        let res = mc_validate(
            &dev,
            1.9 * i_c(&dev),
            0.0,
            2e-8,
            &McValidateOptions {
                n_walks: 100,
                seed: 1,
                z: 2.5758,
                dt_s: dev.tau_d_s() / 1000.0,
                solver: SolverChoice::Spectral { n: 160 },
            },
        );
        assert!(matches!(res, Err(StatsError::InsufficientWalks { .. })));
    }

    #[test]
    fn curve_csv_round_trips() {
        let rows = vec![
            CurveRow {
                current_a: 2.5e-5,
                pulse_s: 1e-8,
                temp_k: 300.0,
                rate: 0.037281945,
                kind: "wer".into(),
                solver: "spectral".into(),
            },
            CurveRow {
                current_a: 4.0e-6,
                pulse_s: 5e-9,
                temp_k: 310.0,
                rate: 1.25e-18,
                kind: "rer".into(),
                solver: "measured".into(),
            },
        ];
        let mut buf = Vec::new();
        write_curve_csv(&rows, &mut buf).unwrap();
        let back = read_curve_csv(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(rows, back);
    }

    #[test]
    fn curve_csv_rejects_a_wrong_header() {
        let res = read_curve_csv(std::io::Cursor::new(b"a,b,c\n1,2,3\n".as_slice()));
        assert!(matches!(res, Err(StatsError::BadInput(_))));
    }
}
