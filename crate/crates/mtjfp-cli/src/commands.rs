//! Subcommand implementations. Data goes to `--out` (default stdout);
//! progress, summaries and timings go to stderr, so piped output stays
//! machine-readable and reruns are byte-identical.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use mtjfp::device::{normalize_default, DeviceParams};
use mtjfp::fit::{
    self, fnv1a_64, format_target, CalibrateOptions, FitOptions, FitParam, FitSpace, ModelCard,
    ParamName,
};
use mtjfp::fvm::{self, EvolveOptions, GridDistribution};
use mtjfp::nalgebra::Vector3;
use mtjfp::sllgs::{self, InitialState, Segment, Thermal, TransientOptions};
use mtjfp::spectral;
use mtjfp::stats::{self, SolverChoice};

use crate::cli::{CalibrateArgs, CompareArgs, FitArgs, RateArgs, SolveFpeArgs, TransientArgs};
use crate::config::{self, pick, pick_opt, FileConfig, SolverFlags};
use crate::CliError;

fn open_out(path: &str) -> Result<Box<dyn Write>, CliError> {
    if path == "-" {
        Ok(Box::new(std::io::stdout()))
    } else {
        let f = File::create(path)
            .map_err(|e| CliError::Config(format!("cannot create {path}: {e}")))?;
        Ok(Box::new(BufWriter::new(f)))
    }
}

fn checked_device(cfg: &FileConfig) -> Result<DeviceParams, CliError> {
    let dev = cfg
        .device()
        .checked()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(w) = dev.delta_warning() {
        eprintln!("warning: {w}");
    }
    Ok(dev)
}

fn drive_values(
    cfg: &FileConfig,
    current: Option<f64>,
    field: Option<f64>,
    pulse: Option<f64>,
) -> (f64, f64, f64) {
    let empty = config::DriveSection::default();
    let d = cfg.drive.as_ref().unwrap_or(&empty);
    (
        pick(current, d.current_a, 4.0e-5),
        pick(field, d.h_ext_z_a_per_m, 0.0),
        pick(pulse, d.pulse_s, 1.0e-8),
    )
}

fn out_path<'a>(flag: &'a Option<String>, cfg: &'a FileConfig) -> &'a str {
    flag.as_deref()
        .or_else(|| cfg.output.as_ref().and_then(|o| o.out.as_deref()))
        .unwrap_or("-")
}

fn io_out(e: std::io::Error) -> CliError {
    CliError::Config(format!("write failed: {e}"))
}

pub fn solve_fpe(cfg: &FileConfig, a: &SolveFpeArgs) -> Result<(), CliError> {
    let dev = checked_device(cfg)?;
    let (current, field, pulse) = drive_values(cfg, a.current, a.field, a.pulse);
    let solver = config::solver_choice(
        cfg,
        &SolverFlags {
            kind: a.solver.as_deref(),
            order: a.order,
            cells: a.cells,
            grading: a.grading.as_deref(),
            tanh_beta: a.tanh_beta,
        },
    )
    .map_err(CliError::Config)?;
    let nd =
        normalize_default(&dev, current, field).map_err(|e| CliError::Config(e.to_string()))?;
    let tau = nd.time_to_tau(pulse);
    eprintln!(
        "drive: I = {current:e} A (i = {:.4}), H = {field:e} A/m, pulse {pulse:e} s ({tau:.3} tau_d)",
        nd.i
    );

    let mut out = open_out(out_path(&a.out, cfg))?;
    match solver {
        SolverChoice::Spectral { n } => {
            let gen = spectral::build_generator(n, &nd);
            let r0 = stats::initial_well_coeffs(n, nd.delta)?;
            let states = spectral::evolve(&r0, &gen, &[tau])?;
            let r = &states[0].1;
            eprintln!(
                "spectral (order {n}): switched {:e}, unswitched {:e}",
                spectral::switched_fraction(r),
                stats::unswitched_fraction(r)
            );
            if let Some(v) = spectral::positivity_warning(r) {
                eprintln!("warning: reconstructed density dips to {v:e}; raise --order");
            }
            spectral::write_coefficients_csv(r, &mut out).map_err(io_out)?;
        }
        SolverChoice::Fvm { m, grading } => {
            let mesh = Arc::new(fvm::build_mesh(m, grading)?);
            let p0 = stats::initial_well_masses(&mesh, nd.delta);
            let init = GridDistribution::new(mesh, p0);
            let res = fvm::evolve(&init, &[(nd, tau)], &EvolveOptions::default())?;
            eprintln!(
                "fvm ({m} cells): switched {:e}, unswitched {:e}, {} steps",
                res.final_dist.switched_fraction(),
                res.final_dist.unswitched_fraction(),
                res.steps
            );
            fvm::write_distribution_csv(&res.final_dist, &mut out).map_err(io_out)?;
        }
    }
    Ok(())
}

pub fn compare_solvers(cfg: &FileConfig, a: &CompareArgs) -> Result<(), CliError> {
    let dev = checked_device(cfg)?;
    let (current, field, pulse) = drive_values(cfg, a.current, a.field, a.pulse);
    let nd =
        normalize_default(&dev, current, field).map_err(|e| CliError::Config(e.to_string()))?;
    let order = a.order.unwrap_or(spectral::DEFAULT_ORDER);
    let cells = a.cells.unwrap_or(1024);
    let beta = a.tanh_beta.unwrap_or(fvm::DEFAULT_TANH_BETA);
    let grading = config::parse_grading(a.grading.as_deref().unwrap_or("uniform-theta"), beta)
        .map_err(CliError::Config)?;
    if a.samples == 0 {
        return Err(CliError::Config("--samples must be positive".into()));
    }

    let tau_end = nd.time_to_tau(pulse);
    let taus: Vec<f64> = (1..=a.samples)
        .map(|k| tau_end * k as f64 / a.samples as f64)
        .collect();

    let t0 = Instant::now();
    let gen = spectral::build_generator(order, &nd);
    let r0 = stats::initial_well_coeffs(order, nd.delta)?;
    let states = spectral::evolve(&r0, &gen, &taus)?;
    let spectral_ms = t0.elapsed().as_secs_f64() * 1e3;
    let sw_spectral: Vec<f64> = states
        .iter()
        .map(|(_, r)| spectral::switched_fraction(r))
        .collect();

    let t1 = Instant::now();
    let mesh = Arc::new(fvm::build_mesh(cells, grading)?);
    let p0 = stats::initial_well_masses(&mesh, nd.delta);
    let init = GridDistribution::new(mesh, p0);
    let res = fvm::evolve(
        &init,
        &[(nd, tau_end)],
        &EvolveOptions {
            sample_taus: taus.clone(),
            ..Default::default()
        },
    )?;
    let fvm_ms = t1.elapsed().as_secs_f64() * 1e3;

    let mut max_gap = 0.0f64;
    let mut out = open_out(out_path(&a.out, cfg))?;
    writeln!(out, "t_s,switched_fvm,switched_spectral,gap").map_err(io_out)?;
    for ((tau, sw_f), sw_s) in res.series.iter().zip(&sw_spectral) {
        let gap = (sw_f - sw_s).abs();
        max_gap = max_gap.max(gap);
        writeln!(
            out,
            "{:e},{:e},{:e},{:e}",
            nd.tau_to_time(*tau),
            sw_f,
            sw_s,
            gap
        )
        .map_err(io_out)?;
    }
    eprintln!(
        "spectral (order {order}): {spectral_ms:.1} ms; fvm ({cells} cells): {fvm_ms:.1} ms ({} steps); max gap {max_gap:e}",
        res.steps
    );
    Ok(())
}

fn sweep_currents(cfg: &FileConfig, a: &RateArgs) -> Result<Vec<f64>, CliError> {
    if !a.currents.is_empty() {
        return Ok(a.currents.clone());
    }
    if let Some(spec) = &a.sweep {
        return config::parse_linspace(spec).map_err(CliError::Config);
    }
    if let Some(s) = &cfg.sweep {
        if let Some(list) = &s.currents_a {
            if !list.is_empty() {
                return Ok(list.clone());
            }
        }
        if let (Some(start), Some(stop), Some(n)) = (s.start_a, s.stop_a, s.points) {
            return config::linspace(start, stop, n).map_err(CliError::Config);
        }
    }
    Err(CliError::Config(
        "no current sweep: pass --currents or --sweep, or fill [sweep] in the config".into(),
    ))
}

pub fn rate_curve(cfg: &FileConfig, a: &RateArgs, kind: stats::RateKind) -> Result<(), CliError> {
    let dev = checked_device(cfg)?;
    let currents = sweep_currents(cfg, a)?;
    let (_, field, pulse) = drive_values(cfg, None, a.field, a.pulse);
    let solver = config::solver_choice(
        cfg,
        &SolverFlags {
            kind: a.solver.as_deref(),
            order: a.order,
            cells: a.cells,
            grading: a.grading.as_deref(),
            tanh_beta: a.tanh_beta,
        },
    )
    .map_err(CliError::Config)?;

    let t0 = Instant::now();
    let rows = match kind {
        stats::RateKind::Write => stats::wer_curve(&dev, &currents, field, pulse, solver)?,
        stats::RateKind::Read => stats::rer_curve(&dev, &currents, field, pulse, solver)?,
    };
    eprintln!(
        "{} points ({}, pulse {pulse:e} s) in {:.1} ms",
        rows.len(),
        solver.name(),
        t0.elapsed().as_secs_f64() * 1e3
    );
    let mut out = open_out(out_path(&a.out, cfg))?;
    stats::write_curve_csv(&rows, &mut out).map_err(io_out)
}

fn param_name(key: &str) -> Result<ParamName, CliError> {
    Ok(match key {
        "msat_a_per_m" => ParamName::MsatAPerM,
        "hk_eff_a_per_m" => ParamName::HkEffAPerM,
        "alpha" => ParamName::Alpha,
        "pol_p" => ParamName::PolP,
        "volume_m3" => ParamName::VolumeM3,
        _ => {
            return Err(CliError::Config(format!(
                "unknown parameter {key:?} (known: msat_a_per_m, hk_eff_a_per_m, alpha, pol_p, volume_m3)"
            )))
        }
    })
}

/// "name=lo:hi", e.g. "hk_eff_a_per_m=1.2e5:2.4e5".
fn parse_free(spec: &str) -> Result<FitParam, CliError> {
    let bad = || CliError::Config(format!("free parameter {spec:?}: want name=lo:hi"));
    let (name, range) = spec.split_once('=').ok_or_else(bad)?;
    let (lo, hi) = range.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok(FitParam::free(param_name(name.trim())?, lo, hi))
}

fn fit_space(cfg: &FileConfig, a: &FitArgs) -> Result<FitSpace, CliError> {
    let mut space = FitSpace::default();
    if !a.free.is_empty() {
        for spec in &a.free {
            space.params.push(parse_free(spec)?);
        }
        return Ok(space);
    }
    if let Some(s) = &cfg.fit {
        for p in &s.param {
            let name = param_name(&p.name)?;
            if p.frozen {
                space.params.push(FitParam::frozen(name));
            } else {
                let (Some(lo), Some(hi)) = (p.lo, p.hi) else {
                    return Err(CliError::Config(format!(
                        "[[fit.param]] {}: free parameters need lo and hi",
                        p.name
                    )));
                };
                space.params.push(FitParam::free(name, lo, hi));
            }
        }
    }
    if space.params.is_empty() {
        return Err(CliError::Config(
            "no fit space: pass --free name=lo:hi or fill [[fit.param]] in the config".into(),
        ));
    }
    Ok(space)
}

pub fn fit(cfg: &FileConfig, a: &FitArgs) -> Result<(), CliError> {
    let bytes = fs::read(&a.data)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", a.data.display())))?;
    let rows = stats::read_curve_csv(&bytes[..])?;
    let points = fit::fit_points_from_rows(&rows);
    eprintln!(
        "{} rows, {} usable write-error points",
        rows.len(),
        points.len()
    );
    let space = fit_space(cfg, a)?;
    let base = checked_device(cfg)?;

    let empty = config::FitSection::default();
    let s = cfg.fit.as_ref().unwrap_or(&empty);
    let mut opts = FitOptions::new(base);
    opts.h_ext_z = pick(a.field, None, 0.0);
    opts.hops = pick(a.hops, s.hops, opts.hops);
    opts.seed = pick(a.seed, s.seed, opts.seed);
    opts.max_evals = pick(a.max_evals, s.max_evals, opts.max_evals);
    opts.rate_opts.n_order = pick(a.order, s.order, opts.rate_opts.n_order);

    let t0 = Instant::now();
    let res = fit::fit_parameters(&space, &points, &opts)?;
    for t in &res.trace {
        let vals: Vec<String> = space
            .params
            .iter()
            .zip(&t.values)
            .map(|(p, v)| format!("{} = {v:.6e}", p.name.key()))
            .collect();
        eprintln!(
            "eval {:>5}: loss {:.6e} [{}]",
            t.eval,
            t.loss,
            vals.join(", ")
        );
    }
    eprintln!(
        "{:?} after {} evals in {:.1} s; loss {:.6e}",
        res.status,
        res.evals,
        t0.elapsed().as_secs_f64(),
        res.loss
    );
    if !res.loss.is_finite() {
        return Err(CliError::Fit(
            "no feasible parameters: the loss stayed infinite over the whole search".into(),
        ));
    }

    let card = ModelCard {
        device: res.device.clone(),
        cf_entries: Vec::new(),
        meta: vec![
            (
                "tool".into(),
                format!("mtjfp {}", env!("CARGO_PKG_VERSION")),
            ),
            ("data_fnv1a".into(), format!("{:016x}", fnv1a_64(&bytes))),
            ("points".into(), points.len().to_string()),
            ("loss".into(), format!("{:e}", res.loss)),
            ("evals".into(), res.evals.to_string()),
            ("status".into(), format!("{:?}", res.status)),
        ],
    };
    let mut out = open_out(out_path(&a.out, cfg))?;
    fit::write_deck(&card, &mut out).map_err(io_out)
}

fn load_deck(path: &Path) -> Result<ModelCard, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    fit::parse_deck(&text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn calibrate(cfg: &FileConfig, a: &CalibrateArgs) -> Result<(), CliError> {
    let dev = match &a.deck {
        Some(p) => load_deck(p)?
            .device
            .checked()
            .map_err(|e| CliError::Config(e.to_string()))?,
        None => checked_device(cfg)?,
    };
    let (current, field, _) = drive_values(cfg, a.current, a.field, None);

    let empty = config::CalibrateSection::default();
    let s = cfg.calibrate.as_ref().unwrap_or(&empty);
    let targets = if !a.targets.is_empty() {
        a.targets.clone()
    } else {
        s.targets.clone().unwrap_or_default()
    };
    if targets.is_empty() {
        return Err(CliError::Config(
            "no targets: pass --targets or fill [calibrate] in the config".into(),
        ));
    }

    let mut copts = CalibrateOptions::for_device(&dev);
    if let Some(dt) = pick_opt(a.dt, s.dt_s) {
        copts.dt_s = dt;
    }
    if let Some(tol) = pick_opt(a.tol_rel, s.tol_rel) {
        copts.tol_rel = tol;
    }

    let mut entries = Vec::with_capacity(targets.len());
    for &target in &targets {
        let t0 = Instant::now();
        let cal = fit::calibrate_cf(&dev, current, field, target, &copts)?;
        eprintln!(
            "target {:>8}: c_f = {:+.6e}; solver time {:.6e} s, transient {:.6e} s (rel err {:.2e}) in {:.1} s",
            format_target(target),
            cal.c_f,
            cal.fpe_time_s,
            cal.sllgs_time_s,
            cal.rel_err,
            t0.elapsed().as_secs_f64()
        );
        entries.push((target, cal.c_f));
    }

    let card = ModelCard {
        device: dev,
        cf_entries: entries,
        meta: vec![
            (
                "tool".into(),
                format!("mtjfp {}", env!("CARGO_PKG_VERSION")),
            ),
            ("current_a".into(), format!("{current:e}")),
            ("h_ext_z_a_per_m".into(), format!("{field:e}")),
            ("dt_s".into(), format!("{:e}", copts.dt_s)),
            ("tol_rel".into(), format!("{:e}", copts.tol_rel)),
        ],
    };
    let mut out = open_out(out_path(&a.out, cfg))?;
    fit::write_deck(&card, &mut out).map_err(io_out)
}

pub fn transient(cfg: &FileConfig, a: &TransientArgs) -> Result<(), CliError> {
    let deck = a.deck.as_deref().map(load_deck).transpose()?;
    let dev = match &deck {
        Some(card) => card
            .device
            .checked()
            .map_err(|e| CliError::Config(e.to_string()))?,
        None => checked_device(cfg)?,
    };
    let (current, field, _) = drive_values(cfg, a.current, a.field, None);

    let empty = config::TransientSection::default();
    let s = cfg.transient.as_ref().unwrap_or(&empty);
    let duration = pick(a.duration, s.duration_s, 2.0e-8);
    let dt = pick(a.dt, s.dt_s, dev.tau_d_s() / 1000.0);
    let stride = pick(a.stride, s.stride, 1);
    let seed = pick(a.seed, s.seed, 42);

    let thermal_name = a
        .thermal
        .as_deref()
        .or(s.thermal.as_deref())
        .unwrap_or("none");
    let thermal = match thermal_name {
        "none" => Thermal::None,
        "stochastic" => Thermal::Stochastic { seed },
        "fictitious" => {
            let c_f = match (pick_opt(a.cf, s.c_f), &deck, &a.target) {
                (Some(c), _, _) => c,
                (None, Some(card), Some(target)) => {
                    let wanted = format_target(*target);
                    card.cf_entries
                        .iter()
                        .find(|(t, _)| format_target(*t) == wanted)
                        .map(|(_, c)| *c)
                        .ok_or_else(|| {
                            CliError::Config(format!(
                                "deck has no cf_wer_{wanted} entry (targets: {})",
                                card.cf_entries
                                    .iter()
                                    .map(|(t, _)| format_target(*t))
                                    .collect::<Vec<_>>()
                                    .join(", ")
                            ))
                        })?
                }
                _ => {
                    return Err(CliError::Config(
                        "fictitious thermal needs --cf, or --deck with --target".into(),
                    ))
                }
            };
            Thermal::Fictitious { c_f }
        }
        _ => {
            return Err(CliError::Config(format!(
                "unknown thermal {thermal_name:?} (known: none, fictitious, stochastic)"
            )))
        }
    };

    let initial_name = a
        .initial
        .as_deref()
        .or(s.initial.as_deref())
        .unwrap_or("tilt");
    let initial = match initial_name {
        "tilt" => InitialState::ThermalAverageTilt,
        "boltzmann" => InitialState::Boltzmann,
        "fixed" => {
            let m0 =
                a.m0.clone()
                    .or_else(|| s.m0.map(|v| v.to_vec()))
                    .ok_or_else(|| CliError::Config("initial \"fixed\" needs --m0 x,y,z".into()))?;
            if m0.len() != 3 {
                return Err(CliError::Config(
                    "--m0 wants exactly three components".into(),
                ));
            }
            let v = Vector3::new(m0[0], m0[1], m0[2]);
            if (v.norm() - 1.0).abs() > 1e-6 {
                return Err(CliError::Config(format!(
                    "--m0 must be a unit vector (|m0| = {})",
                    v.norm()
                )));
            }
            InitialState::Fixed(v.normalize())
        }
        _ => {
            return Err(CliError::Config(format!(
                "unknown initial {initial_name:?} (known: tilt, boltzmann, fixed)"
            )))
        }
    };

    let traj = sllgs::run_transient(
        &dev,
        &[Segment {
            current_a: current,
            h_ext_z_a_per_m: field,
            duration_s: duration,
        }],
        &TransientOptions {
            dt_s: dt,
            record_stride: stride,
            thermal,
            initial,
        },
    )?;
    eprintln!(
        "{} over {duration:e} s (dt {dt:e} s): final m_z {:.6}, {} records",
        if traj.switched {
            "switched"
        } else {
            "not switched"
        },
        traj.final_m.z,
        traj.t_s.len()
    );
    let mut out = open_out(out_path(&a.out, cfg))?;
    sllgs::write_trajectory_csv(&traj, &mut out).map_err(io_out)
}
