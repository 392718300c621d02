//! Finite-volume Fokker-Planck solver for the polar-angle density.
//!
//! The solver evolves the sine-weighted density `P(theta) = rho(theta) sin(theta)`
//! so cell values are probability masses that sum to one. In these variables
//! the dimensionless equation is the conservation law
//!
//! ```text
//! dP/dtau = -dJ/dtheta,
//! J = U_eff P - D dP/dtheta,
//! U_eff(theta) = sin(theta) (i - h - cos(theta)) + cot(theta) / (2 Delta),
//! D = 1 / (2 Delta),
//! ```
//!
//! whose stationary state is `P ~ sin(theta) exp(Delta cos^2 theta)` at
//! `i = h = 0`. Faces use Scharfetter-Gummel exponential fitting, which makes
//! that balance exact per face up to a midpoint quadrature of the drift. Pole
//! faces carry zero flux; every interior flux coefficient is added to exactly
//! two matrix entries with opposite signs, so operator column sums vanish
//! bitwise and time stepping conserves total mass to rounding. Time stepping
//! is Crank-Nicolson (exposed weight in [0.5, 1.0]) with a Thomas solve.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::device::NormalizedDrive;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FvmError {
    #[error("bad mesh grading: {0}")]
    BadGrading(String),
    #[error("drift evaluated at a pole (theta = {theta})")]
    PoleEvaluation { theta: f64 },
    #[error("tridiagonal solve hit a zero pivot at row {row}")]
    SolverSingular { row: usize },
    #[error("negative mass {mass:e} at theta = {theta} exceeds the clip window")]
    NegativeMass { theta: f64, mass: f64 },
    #[error("Crank-Nicolson weight {weight} outside [0.5, 1.0]")]
    InvalidWeight { weight: f64 },
    #[error("sample at tau = {tau} outside the schedule span {total}")]
    SampleOutOfRange { tau: f64, total: f64 },
    #[error("non-finite value produced in {what}")]
    NonFinite { what: &'static str },
}

/// Mesh point-placement rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grading {
    /// Equal spacing in theta.
    UniformTheta,
    /// Equal spacing in cos(theta).
    UniformCos,
    /// tanh clustering toward both poles; `beta` controls the strength.
    Tanh { beta: f64 },
}

pub const DEFAULT_TANH_BETA: f64 = 3.0;

/// Cell-centered mesh on (0, pi). `faces` has `m + 1` entries with
/// `faces[0] = 0` and `faces[m] = pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMesh {
    pub faces: Vec<f64>,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

impl ThetaMesh {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Face positions for a given grading; used by [`build_mesh`] and unit-testable
/// at small `m` where the full constructor's size guard would reject.
fn grading_faces(m: usize, grading: Grading) -> Result<Vec<f64>, FvmError> {
    let mut faces = Vec::with_capacity(m + 1);
    match grading {
        Grading::UniformTheta => {
            for k in 0..=m {
                faces.push(k as f64 * PI / m as f64);
            }
        }
        Grading::UniformCos => {
            for k in 0..=m {
                let x = 1.0 - 2.0 * k as f64 / m as f64;
                faces.push(x.clamp(-1.0, 1.0).acos());
            }
        }
        Grading::Tanh { beta } => {
            if !beta.is_finite() || beta <= 0.0 {
                return Err(FvmError::BadGrading(format!("tanh beta = {beta}")));
            }
            let scale = beta.tanh();
            for k in 0..=m {
                let s = k as f64 / m as f64;
                faces.push(0.5 * PI * (1.0 + (beta * (2.0 * s - 1.0)).tanh() / scale));
            }
        }
    }
    faces[0] = 0.0;
    faces[m] = PI;
    Ok(faces)
}

/// Builds a mesh with at least 8 cells.
pub fn build_mesh(m: usize, grading: Grading) -> Result<ThetaMesh, FvmError> {
    if m < 8 {
        return Err(FvmError::BadGrading(format!("m = {m} below the minimum 8")));
    }
    let faces = grading_faces(m, grading)?;
    let mut centers = Vec::with_capacity(m);
    let mut widths = Vec::with_capacity(m);
    for k in 0..m {
        let w = faces[k + 1] - faces[k];
        if w <= 1e-14 {
            return Err(FvmError::BadGrading(format!(
                "degenerate cell {k} (width {w:e})"
            )));
        }
        centers.push(0.5 * (faces[k] + faces[k + 1]));
        widths.push(w);
    }
    Ok(ThetaMesh {
        faces,
        centers,
        widths,
    })
}

/// Probability masses on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDistribution {
    pub mesh: Arc<ThetaMesh>,
    pub p: Vec<f64>,
}

impl GridDistribution {
    pub fn new(mesh: Arc<ThetaMesh>, p: Vec<f64>) -> Self {
        assert_eq!(mesh.len(), p.len(), "mass vector must match the mesh");
        GridDistribution { mesh, p }
    }

    pub fn total_mass(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Probability of the switched hemisphere (theta > pi/2). A cell that
    /// straddles pi/2 contributes the overlapping fraction of its mass.
    pub fn switched_fraction(&self) -> f64 {
        let half = 0.5 * PI;
        let mut s = 0.0;
        for (k, &m) in self.p.iter().enumerate() {
            let a = self.mesh.faces[k];
            let b = self.mesh.faces[k + 1];
            if a >= half {
                s += m;
            } else if b > half {
                s += m * (b - half) / (b - a);
            }
        }
        s
    }

    /// Probability of the unswitched hemisphere (theta < pi/2), summed
    /// directly so tiny values are not lost to cancellation against 1.
    pub fn unswitched_fraction(&self) -> f64 {
        let half = 0.5 * PI;
        let mut s = 0.0;
        for (k, &m) in self.p.iter().enumerate() {
            let a = self.mesh.faces[k];
            let b = self.mesh.faces[k + 1];
            if b <= half {
                s += m;
            } else if a < half {
                s += m * (half - a) / (b - a);
            }
        }
        s
    }

    pub fn l1_distance(&self, other: &GridDistribution) -> f64 {
        assert_eq!(self.p.len(), other.p.len());
        self.p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// Angular density `rho(theta) = P / sin(theta)` at cell centers.
    pub fn rho_density(&self) -> Vec<f64> {
        self.p
            .iter()
            .enumerate()
            .map(|(k, &m)| m / (self.mesh.widths[k] * self.mesh.centers[k].sin()))
            .collect()
    }
}

/// Effective drift `U_eff` and diffusion `D` entering the face flux.
pub fn drift_diffusion(theta: f64, drive: &NormalizedDrive) -> Result<(f64, f64), FvmError> {
    if !(theta > 0.0 && theta < PI) {
        return Err(FvmError::PoleEvaluation { theta });
    }
    let d = 1.0 / (2.0 * drive.delta);
    let (sin_t, cos_t) = theta.sin_cos();
    let v = sin_t * (drive.i - drive.h - cos_t);
    Ok((v + d * cos_t / sin_t, d))
}

/// Bernoulli function `B(z) = z / (exp(z) - 1)`, series branch for small `z`.
pub fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - 0.5 * z + z2 / 12.0 - z2 * z2 / 720.0
    } else {
        z / (z.exp() - 1.0)
    }
}

/// Scharfetter-Gummel flux through one face given the adjacent point values:
/// `J = (d / h) * (B(-pe) p_left - B(pe) p_right)` with `pe = u_eff h / d`.
pub fn sg_flux(u_eff: f64, d: f64, h: f64, p_left: f64, p_right: f64) -> f64 {
    let pe = u_eff * h / d;
    let b = bernoulli(pe);
    // B(-z) = B(z) + z
    (d / h) * ((b + pe) * p_left - b * p_right)
}

/// Tridiagonal drift-diffusion generator acting on cell masses.
#[derive(Debug, Clone)]
pub struct FvmOperator {
    pub mesh: Arc<ThetaMesh>,
    /// Coupling of cell k to cell k-1; index 0 unused.
    lower: Vec<f64>,
    diag: Vec<f64>,
    /// Coupling of cell k to cell k+1; last index unused.
    upper: Vec<f64>,
    max_abs_u: f64,
    h_min: f64,
}

/// Assembles the generator for one drive. Pole faces carry zero flux.
pub fn assemble(mesh: &Arc<ThetaMesh>, drive: &NormalizedDrive) -> Result<FvmOperator, FvmError> {
    let m = mesh.len();
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut max_abs_u: f64 = 0.0;
    let mut h_min = f64::INFINITY;

    for k in 1..m {
        let theta_f = mesh.faces[k];
        let h = mesh.centers[k] - mesh.centers[k - 1];
        let (u_eff, d) = drift_diffusion(theta_f, drive)?;
        max_abs_u = max_abs_u.max(u_eff.abs());
        h_min = h_min.min(h);

        let pe = u_eff * h / d;
        let b = bernoulli(pe);
        let g = d / h;
        // J_k = c_left * m_{k-1} - c_right * m_k  (masses, not point values)
        let c_left = g * (b + pe) / mesh.widths[k - 1];
        let c_right = g * b / mesh.widths[k];

        // dm_{k-1}/dtau -= J_k ; dm_k/dtau += J_k. Each coefficient enters
        // twice with opposite signs, so mass exchange between neighbours
        // cancels up to the rounding of the accumulated diagonal.
        diag[k - 1] -= c_left;
        upper[k - 1] += c_right;
        lower[k] += c_left;
        diag[k] -= c_right;
    }

    Ok(FvmOperator {
        mesh: Arc::clone(mesh),
        lower,
        diag,
        upper,
        max_abs_u,
        h_min,
    })
}

impl FvmOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let m = p.len();
        let mut out = vec![0.0; m];
        for k in 0..m {
            let mut acc = self.diag[k] * p[k];
            if k > 0 {
                acc += self.lower[k] * p[k - 1];
            }
            if k + 1 < m {
                acc += self.upper[k] * p[k + 1];
            }
            out[k] = acc;
        }
        out
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let m = self.len();
        let mut sums = vec![0.0; m];
        for k in 0..m {
            sums[k] += self.diag[k];
            if k > 0 {
                sums[k - 1] += self.lower[k];
            }
            if k + 1 < m {
                sums[k + 1] += self.upper[k];
            }
        }
        sums
    }

    /// Largest step for which the explicit Crank-Nicolson half keeps
    /// non-negative masses non-negative: `w_explicit * dtau * |diag| <= 1`.
    pub fn positivity_dtau(&self, cn_weight: f64) -> f64 {
        let max_diag = self.diag.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let w_expl = 1.0 - cn_weight;
        if max_diag * w_expl <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / (w_expl * max_diag)
        }
    }

    /// Default accuracy-driven step: `min(0.1, 0.25 h_min / max |U_eff|)`.
    pub fn auto_dtau(&self) -> f64 {
        if self.max_abs_u < 1e-12 {
            0.1
        } else {
            (0.25 * self.h_min / self.max_abs_u).min(0.1)
        }
    }
}

/// Solves a tridiagonal system in place. `lower[0]` and `upper[n-1]` are unused.
fn thomas_solve(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
) -> Result<(), FvmError> {
    let n = diag.len();
    let mut c_prime = vec![0.0; n];
    let mut d = diag[0];
    if d.abs() < f64::MIN_POSITIVE {
        return Err(FvmError::SolverSingular { row: 0 });
    }
    c_prime[0] = upper[0] / d;
    rhs[0] /= d;
    for k in 1..n {
        let m = lower[k];
        d = diag[k] - m * c_prime[k - 1];
        if d.abs() < f64::MIN_POSITIVE {
            return Err(FvmError::SolverSingular { row: k });
        }
        if k + 1 < n {
            c_prime[k] = upper[k] / d;
        }
        rhs[k] = (rhs[k] - m * rhs[k - 1]) / d;
    }
    for k in (0..n - 1).rev() {
        rhs[k] -= c_prime[k] * rhs[k + 1];
    }
    Ok(())
}

/// Mass clip window: values in [NEG_MASS_FLOOR, 0) are zeroed and the total
/// renormalized; anything below is an error.
pub const NEG_MASS_FLOOR: f64 = -1e-12;

/// One theta-weighted Crank-Nicolson step:
/// `(I - w dtau A) p' = (I + (1 - w) dtau A) p`.
pub fn step_cn(
    dist: &GridDistribution,
    op: &FvmOperator,
    dtau: f64,
    cn_weight: f64,
) -> Result<GridDistribution, FvmError> {
    if !(0.5..=1.0).contains(&cn_weight) {
        return Err(FvmError::InvalidWeight { weight: cn_weight });
    }
    let m = dist.p.len();
    assert_eq!(op.len(), m, "operator and distribution mesh sizes differ");

    let mass_before: f64 = dist.p.iter().sum();
    let w_ex = (1.0 - cn_weight) * dtau;
    let w_im = cn_weight * dtau;

    let mut rhs = vec![0.0; m];
    for (k, r) in rhs.iter_mut().enumerate() {
        let mut acc = dist.p[k] + w_ex * op.diag[k] * dist.p[k];
        if k > 0 {
            acc += w_ex * op.lower[k] * dist.p[k - 1];
        }
        if k + 1 < m {
            acc += w_ex * op.upper[k] * dist.p[k + 1];
        }
        *r = acc;
    }

    let lower: Vec<f64> = op.lower.iter().map(|&v| -w_im * v).collect();
    let diag: Vec<f64> = op.diag.iter().map(|&v| 1.0 - w_im * v).collect();
    let upper: Vec<f64> = op.upper.iter().map(|&v| -w_im * v).collect();
    thomas_solve(&lower, &diag, &upper, &mut rhs)?;

    let mut clipped = false;
    for (k, v) in rhs.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(FvmError::NonFinite { what: "step_cn" });
        }
        if *v < 0.0 {
            if *v < NEG_MASS_FLOOR {
                return Err(FvmError::NegativeMass {
                    theta: dist.mesh.centers[k],
                    mass: *v,
                });
            }
            *v = 0.0;
            clipped = true;
        }
    }
    if clipped {
        let total: f64 = rhs.iter().sum();
        if total > 0.0 {
            let scale = mass_before / total;
            for v in &mut rhs {
                *v *= scale;
            }
        }
    }

    Ok(GridDistribution {
        mesh: Arc::clone(&dist.mesh),
        p: rhs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtPolicy {
    /// `min(0.1, 0.25 h_min / max |U_eff|)` per drive segment.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub dt_policy: DtPolicy,
    pub cn_weight: f64,
    /// Absolute sample times (in tau, measured from the schedule start) at
    /// which the switched fraction is recorded. Must be sorted ascending.
    pub sample_taus: Vec<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            dt_policy: DtPolicy::Auto,
            cn_weight: 0.5,
            sample_taus: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolveResult {
    pub final_dist: GridDistribution,
    /// `(tau, switched_fraction)` at the requested samples.
    pub series: Vec<(f64, f64)>,
    pub steps: usize,
}

/// Evolves a distribution through a piecewise-constant drive schedule
/// `(drive, duration_tau)`, landing exactly on each requested sample time.
pub fn evolve(
    init: &GridDistribution,
    schedule: &[(NormalizedDrive, f64)],
    opts: &EvolveOptions,
) -> Result<EvolveResult, FvmError> {
    let total: f64 = schedule.iter().map(|(_, d)| d).sum();
    for w in opts.sample_taus.windows(2) {
        if w[1] < w[0] {
            return Err(FvmError::BadGrading("sample times not sorted".into()));
        }
    }
    if let Some(&last) = opts.sample_taus.last() {
        if last > total * (1.0 + 1e-12) + 1e-300 {
            return Err(FvmError::SampleOutOfRange { tau: last, total });
        }
    }

    let mut dist = init.clone();
    let mut series = Vec::with_capacity(opts.sample_taus.len());
    let mut samples = opts.sample_taus.iter().copied().peekable();
    let mut tau = 0.0f64;
    let mut steps = 0usize;

    while let Some(&s) = samples.peek() {
        if s <= tau {
            series.push((s, dist.switched_fraction()));
            samples.next();
        } else {
            break;
        }
    }

    for (drive, duration) in schedule {
        if *duration < 0.0 || !duration.is_finite() {
            return Err(FvmError::BadGrading(format!("segment duration {duration}")));
        }
        if *duration == 0.0 {
            continue;
        }
        let op = assemble(&dist.mesh, drive)?;
        let dtau_base = match opts.dt_policy {
            DtPolicy::Auto => op.auto_dtau(),
            DtPolicy::Fixed(dt) => {
                if dt <= 0.0 || !dt.is_finite() {
                    return Err(FvmError::BadGrading(format!("fixed dtau {dt}")));
                }
                dt
            }
        };
        let seg_end = tau + duration;
        while tau < seg_end * (1.0 - 1e-15) {
            let next_sample = samples.peek().copied().filter(|&s| s < seg_end);
            let stop = next_sample.unwrap_or(seg_end).min(seg_end);
            let span = stop - tau;
            if span <= 0.0 {
                // Sample coincides with the current time.
                if let Some(s) = next_sample {
                    series.push((s, dist.switched_fraction()));
                    samples.next();
                }
                continue;
            }
            let n = (span / dtau_base).ceil().max(1.0) as usize;
            let dt = span / n as f64;
            for _ in 0..n {
                dist = step_cn(&dist, &op, dt, opts.cn_weight)?;
                steps += 1;
            }
            tau = stop;
            if let Some(s) = next_sample {
                series.push((s, dist.switched_fraction()));
                samples.next();
            }
        }
        tau = seg_end;
        while let Some(&s) = samples.peek() {
            if s <= tau * (1.0 + 1e-15) {
                series.push((s, dist.switched_fraction()));
                samples.next();
            } else {
                break;
            }
        }
    }

    // Anything left is (numerically) the schedule end.
    for s in samples {
        series.push((s, dist.switched_fraction()));
    }

    Ok(EvolveResult {
        final_dist: dist,
        series,
        steps,
    })
}

/// Writes a distribution snapshot as `theta_rad,p_mass,rho_density`.
pub fn write_distribution_csv<W: std::io::Write>(
    dist: &GridDistribution,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "theta_rad,p_mass,rho_density")?;
    let rho = dist.rho_density();
    for (k, &m) in dist.p.iter().enumerate() {
        writeln!(out, "{:e},{:e},{:e}", dist.mesh.centers[k], m, rho[k])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{normalize_default, reference_device, NormalizedDrive};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn drive(i: f64, h: f64, delta: f64) -> NormalizedDrive {
        NormalizedDrive {
            i,
            h,
            delta,
            i_c_amps: 1.0,
            tau_d_s: 1.0,
        }
    }

    /// Cell masses of sin(theta) exp(Delta cos^2 theta) via per-cell
    /// Gauss-Legendre quadrature; independent oracle for equilibrium tests.
    fn boltzmann_masses(mesh: &ThetaMesh, delta: f64) -> Vec<f64> {
        // 8-point Gauss-Legendre on [-1, 1].
        let nodes = [
            -0.9602898564975363,
            -0.7966664774136267,
            -0.525532409916329,
            -0.18343464249564978,
            0.18343464249564978,
            0.525532409916329,
            0.7966664774136267,
            0.9602898564975363,
        ];
        let weights = [
            0.10122853629037669,
            0.22238103445337434,
            0.31370664587788705,
            0.362683783378362,
            0.362683783378362,
            0.31370664587788705,
            0.22238103445337434,
            0.10122853629037669,
        ];
        let mut p: Vec<f64> = mesh
            .faces
            .windows(2)
            .map(|f| {
                let half = 0.5 * (f[1] - f[0]);
                let mid = 0.5 * (f[0] + f[1]);
                let mut acc = 0.0;
                for (x, w) in nodes.iter().zip(weights) {
                    let t: f64 = mid + half * x;
                    // exp offset by -delta to stay in range for large delta
                    acc += w * t.sin() * (delta * (t.cos().powi(2) - 1.0)).exp();
                }
                acc * half
            })
            .collect();
        let total: f64 = p.iter().sum();
        for v in &mut p {
            *v /= total;
        }
        p
    }

    #[test]
    fn uniform_theta_faces_m4() {
        let faces = grading_faces(4, Grading::UniformTheta).unwrap();
        let expect = [0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0, PI];
        for (f, e) in faces.iter().zip(expect) {
            assert_relative_eq!(*f, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn uniform_cos_faces_m2() {
        let faces = grading_faces(2, Grading::UniformCos).unwrap();
        assert_eq!(faces[0], 0.0);
        assert_relative_eq!(faces[1], PI / 2.0, epsilon = 1e-15);
        assert_eq!(faces[2], PI);
    }

    #[test]
    fn tanh_mesh_resolves_the_thermal_well() {
        let mesh = build_mesh(
            512,
            Grading::Tanh {
                beta: DEFAULT_TANH_BETA,
            },
        )
        .unwrap();
        let delta: f64 = 63.0;
        let cut = 3.0 / (2.0 * delta).sqrt();
        let inside = mesh.centers.iter().filter(|&&t| t < cut).count();
        assert!(inside >= 30, "only {inside} cells below theta = {cut}");
    }

    #[test]
    fn build_mesh_rejects_tiny_m() {
        assert!(matches!(
            build_mesh(4, Grading::UniformTheta),
            Err(FvmError::BadGrading(_))
        ));
    }

    #[test]
    fn mesh_faces_monotone_and_bounded() {
        for grading in [
            Grading::UniformTheta,
            Grading::UniformCos,
            Grading::Tanh { beta: 3.0 },
        ] {
            let mesh = build_mesh(257, grading).unwrap();
            assert_eq!(mesh.faces[0], 0.0);
            assert_eq!(*mesh.faces.last().unwrap(), PI);
            for w in mesh.faces.windows(2) {
                assert!(w[1] > w[0]);
            }
        }
    }

    #[test]
    fn drift_vanishes_on_the_equilibrium_density() {
        // J = U_eff P - D dP/dtheta with P = sin exp(Delta cos^2) is zero
        // analytically at i = h = 0; check with the analytic derivative.
        let d63 = drive(0.0, 0.0, 63.0);
        for &theta in &[0.05f64, 0.3, 1.0, PI / 2.0, 2.2, 3.0] {
            let (u, d) = drift_diffusion(theta, &d63).unwrap();
            let (s, c) = theta.sin_cos();
            let scale = (63.0 * (c * c - 1.0)).exp();
            let p = s * scale;
            let dp = (c - 2.0 * 63.0 * s * s * c) * scale;
            let j = u * p - d * dp;
            assert!(
                j.abs() < 1e-12 * (u.abs() * p).max(d),
                "flux {j:e} at theta {theta}"
            );
        }
    }

    #[test]
    fn drift_rejects_poles() {
        let d = drive(0.0, 0.0, 10.0);
        assert!(matches!(
            drift_diffusion(0.0, &d),
            Err(FvmError::PoleEvaluation { .. })
        ));
        assert!(matches!(
            drift_diffusion(PI, &d),
            Err(FvmError::PoleEvaluation { .. })
        ));
    }

    #[test]
    fn bernoulli_branches_agree_and_satisfy_the_reflection_identity() {
        assert_eq!(bernoulli(0.0), 1.0);
        for &z in &[9.9e-5f64, 1.01e-4, 0.5, 3.0, -2.0, -9.9e-5] {
            let direct = if z.abs() > 0.0 {
                z / (z.exp() - 1.0)
            } else {
                1.0
            };
            assert_relative_eq!(bernoulli(z), direct, max_relative = 1e-11);
            assert_relative_eq!(bernoulli(-z), bernoulli(z) + z, max_relative = 1e-12);
        }
    }

    #[test]
    fn flux_reduces_to_central_difference_at_small_pe() {
        let (d, h) = (0.01, 1e-3);
        let (pl, pr) = (0.8, 1.1);
        for &u in &[1e-6f64, -1e-6, 1e-5] {
            let j = sg_flux(u, d, h, pl, pr);
            let central = u * 0.5 * (pl + pr) + d * (pl - pr) / h;
            let pe = u * h / d;
            assert!(
                (j - central).abs() <= 10.0 * pe * pe * (j.abs().max(central.abs())) + 1e-16,
                "u = {u}: j = {j}, central = {central}"
            );
        }
    }

    #[test]
    fn flux_upwinds_at_large_pe() {
        let (d, h) = (0.01, 1.0);
        let u = 0.4; // pe = 40
        let j = sg_flux(u, d, h, 0.7, 1.3);
        let upwind = u * 0.7;
        assert_relative_eq!(j, upwind, max_relative = 1e-15);
    }

    #[test]
    fn operator_columns_sum_to_zero() {
        let mesh = Arc::new(build_mesh(173, Grading::Tanh { beta: 3.0 }).unwrap());
        let op = assemble(&mesh, &drive(1.5, -0.2, 63.0)).unwrap();
        let scale = op.diag.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        for (k, s) in op.column_sums().iter().enumerate() {
            assert!(s.abs() <= 1e-14 * scale, "column {k} sums to {s:e}");
        }
    }

    #[test]
    fn step_is_identity_for_a_zero_operator() {
        let mesh = Arc::new(build_mesh(16, Grading::UniformTheta).unwrap());
        let op = FvmOperator {
            mesh: Arc::clone(&mesh),
            lower: vec![0.0; 16],
            diag: vec![0.0; 16],
            upper: vec![0.0; 16],
            max_abs_u: 0.0,
            h_min: 0.1,
        };
        let p: Vec<f64> = (0..16).map(|k| (k + 1) as f64 / 136.0).collect();
        let dist = GridDistribution::new(mesh, p.clone());
        let out = step_cn(&dist, &op, 0.3, 0.5).unwrap();
        for (a, b) in out.p.iter().zip(&p) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn backward_step_recovers_the_state() {
        let mesh = Arc::new(build_mesh(96, Grading::UniformTheta).unwrap());
        let dist = GridDistribution::new(Arc::clone(&mesh), boltzmann_masses(&mesh, 20.0));
        let op = assemble(&mesh, &drive(1.2, 0.0, 20.0)).unwrap();
        let dt = 1e-3;
        let fwd = step_cn(&dist, &op, dt, 0.5).unwrap();
        let back = step_cn(&fwd, &op, -dt, 0.5).unwrap();
        for (a, b) in back.p.iter().zip(&dist.p) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn equilibrium_is_nearly_stationary_for_one_step() {
        // Build the state whose face fluxes vanish identically for this
        // operator: m_k / m_{k-1} = exp(pe_k) * w_k / w_{k-1}, which uses
        // B(-z)/B(z) = exp(z). One step then only moves rounding noise.
        let mesh = Arc::new(build_mesh(512, Grading::Tanh { beta: 3.0 }).unwrap());
        let nd = drive(0.0, 0.0, 63.0);
        let mut p = vec![0.0; mesh.len()];
        p[0] = 1.0;
        for k in 1..mesh.len() {
            let h = mesh.centers[k] - mesh.centers[k - 1];
            let (u_eff, d) = drift_diffusion(mesh.faces[k], &nd).unwrap();
            p[k] = p[k - 1] * (u_eff * h / d).exp() * mesh.widths[k] / mesh.widths[k - 1];
        }
        let total: f64 = p.iter().sum();
        for v in &mut p {
            *v /= total;
        }
        let dist = GridDistribution::new(Arc::clone(&mesh), p);
        let op = assemble(&mesh, &nd).unwrap();
        let out = step_cn(&dist, &op, 0.01, 0.5).unwrap();
        let drift: f64 = out.l1_distance(&dist);
        assert!(drift < 1e-10, "one-step L1 drift {drift:e}");
    }

    #[test]
    fn long_run_stays_on_the_equilibrium() {
        let mesh = Arc::new(build_mesh(512, Grading::Tanh { beta: 3.0 }).unwrap());
        let exact = GridDistribution::new(Arc::clone(&mesh), boltzmann_masses(&mesh, 63.0));
        let res = evolve(
            &exact,
            &[(drive(0.0, 0.0, 63.0), 50.0)],
            &EvolveOptions {
                dt_policy: DtPolicy::Fixed(0.05),
                ..Default::default()
            },
        )
        .unwrap();
        let err = res.final_dist.l1_distance(&exact);
        assert!(err < 1e-3, "L1 error {err:e}");
        assert_relative_eq!(res.final_dist.total_mass(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn mass_conserved_over_many_steps() {
        let mesh = Arc::new(build_mesh(128, Grading::UniformTheta).unwrap());
        let mut dist = GridDistribution::new(Arc::clone(&mesh), boltzmann_masses(&mesh, 63.0));
        let op = assemble(&mesh, &drive(1.8, 0.0, 63.0)).unwrap();
        let dt = op.auto_dtau();
        for _ in 0..2000 {
            dist = step_cn(&dist, &op, dt, 0.5).unwrap();
        }
        assert!((dist.total_mass() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn positivity_holds_below_the_bound() {
        let mesh = Arc::new(build_mesh(64, Grading::UniformTheta).unwrap());
        let op = assemble(&mesh, &drive(2.0, 0.3, 40.0)).unwrap();
        let dt = 0.99 * op.positivity_dtau(0.5);
        let mut p = vec![0.0; 64];
        p[5] = 0.7;
        p[40] = 0.3;
        let dist = GridDistribution::new(Arc::clone(&mesh), p);
        let out = step_cn(&dist, &op, dt, 0.5).unwrap();
        assert!(out.p.iter().all(|&v| v >= NEG_MASS_FLOOR));
    }

    #[test]
    fn switched_fraction_splits_a_straddling_cell() {
        let mesh = Arc::new(build_mesh(9, Grading::UniformTheta).unwrap());
        // Cell 4 spans [4pi/9, 5pi/9] and straddles pi/2.
        let mut p = vec![0.0; 9];
        p[4] = 1.0;
        let dist = GridDistribution::new(mesh, p);
        assert_relative_eq!(dist.switched_fraction(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn evolve_zero_duration_is_identity() {
        let mesh = Arc::new(build_mesh(32, Grading::UniformTheta).unwrap());
        let dist = GridDistribution::new(Arc::clone(&mesh), boltzmann_masses(&mesh, 10.0));
        let res = evolve(
            &dist,
            &[(drive(1.0, 0.0, 10.0), 0.0)],
            &EvolveOptions::default(),
        )
        .unwrap();
        assert_eq!(res.final_dist.p, dist.p);
        assert_eq!(res.steps, 0);
    }

    #[test]
    fn evolve_records_requested_samples() {
        let mesh = Arc::new(build_mesh(64, Grading::UniformTheta).unwrap());
        let dist = GridDistribution::new(Arc::clone(&mesh), boltzmann_masses(&mesh, 30.0));
        let samples = vec![0.0, 0.5, 1.0, 2.0];
        let res = evolve(
            &dist,
            &[(drive(1.5, 0.0, 30.0), 2.0)],
            &EvolveOptions {
                sample_taus: samples.clone(),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(res.series.len(), samples.len());
        for ((tau, s), want) in res.series.iter().zip(&samples) {
            assert_eq!(tau, want);
            assert!((0.0..=1.0).contains(s));
        }
        // Switching drive: fraction grows along the run.
        assert!(res.series.last().unwrap().1 > res.series[0].1);
    }

    #[test]
    fn evolve_rejects_out_of_range_samples() {
        let mesh = Arc::new(build_mesh(32, Grading::UniformTheta).unwrap());
        let dist = GridDistribution::new(Arc::clone(&mesh), boltzmann_masses(&mesh, 10.0));
        let res = evolve(
            &dist,
            &[(drive(1.0, 0.0, 10.0), 1.0)],
            &EvolveOptions {
                sample_taus: vec![2.0],
                ..Default::default()
            },
        );
        assert!(matches!(res, Err(FvmError::SampleOutOfRange { .. })));
    }

    #[test]
    fn refinement_improves_the_switched_fraction() {
        // First-order-or-better convergence toward a fine reference.
        let d = drive(1.8, 0.0, 63.0);
        let run = |m: usize| -> f64 {
            let mesh = Arc::new(build_mesh(m, Grading::UniformTheta).unwrap());
            let dist = GridDistribution::new(Arc::clone(&mesh), boltzmann_masses(&mesh, 63.0));
            let hemi: Vec<f64> = dist
                .p
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    if mesh.centers[k] < PI / 2.0 {
                        2.0 * v
                    } else {
                        0.0
                    }
                })
                .collect();
            let init = GridDistribution::new(Arc::clone(&mesh), hemi);
            let res = evolve(&init, &[(d, 4.0)], &EvolveOptions::default()).unwrap();
            res.final_dist.switched_fraction()
        };
        let reference = run(1024);
        let e128 = (run(128) - reference).abs();
        let e256 = (run(256) - reference).abs();
        assert!(
            e256 < e128 / 1.8,
            "no convergence: e128 = {e128:e}, e256 = {e256:e}"
        );
    }

    #[test]
    fn reference_device_drive_round_trip() {
        let dev = reference_device();
        let nd = normalize_default(&dev, 4e-5, 0.0).unwrap();
        assert_relative_eq!(nd.i, 1.8795, max_relative = 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn column_sums_vanish_for_random_drives(
            i in -3.0f64..3.0,
            h in -1.0f64..1.0,
            delta in 5.0f64..120.0,
            m in 16usize..200,
        ) {
            let mesh = Arc::new(build_mesh(m, Grading::UniformTheta).unwrap());
            let op = assemble(&mesh, &drive(i, h, delta)).unwrap();
            let scale = op.diag.iter().fold(1.0f64, |a, d| a.max(d.abs()));
            for s in op.column_sums() {
                prop_assert!(s.abs() <= 1e-14 * scale);
            }
        }

        #[test]
        fn one_step_conserves_mass(
            i in -3.0f64..3.0,
            delta in 5.0f64..120.0,
        ) {
            let mesh = Arc::new(build_mesh(64, Grading::UniformTheta).unwrap());
            let dist = GridDistribution::new(Arc::clone(&mesh), boltzmann_masses(&mesh, delta));
            let op = assemble(&mesh, &drive(i, 0.0, delta)).unwrap();
            let out = step_cn(&dist, &op, op.auto_dtau(), 0.5).unwrap();
            prop_assert!((out.total_mass() - 1.0).abs() < 1e-12);
        }
    }
}
