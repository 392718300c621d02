//! Spectral solver for the polar-angle density in `x = cos(theta)`.
//!
//! The density is expanded in Legendre polynomials, `rho(x) = sum r_n P_n(x)`,
//! which turns the drift-diffusion equation
//!
//! ```text
//! drho/dtau = d/dx [ (1 - x^2) ( (c - x) rho + D drho/dx ) ],
//! c = i - h,  D = 1 / (2 Delta),
//! ```
//!
//! into a linear ODE `dr/dtau = A r` with a pentadiagonal generator `A`. The
//! generator is built by composing the exact Legendre shift identities for
//! `x f` and `d/dx[(1 - x^2) f]` on a padded index range, so truncation does
//! not corrupt the trailing columns; an independent Gauss-Legendre Galerkin
//! quadrature of the same operator serves as a cross-check. Row 0 vanishes
//! identically, so `r_0 = 1/2` (unit mass) is conserved exactly.
//!
//! Time evolution uses a scaling-and-squaring Pade(13) matrix exponential;
//! the propagator row that transports `r_0` is re-pinned to the exact unit
//! row afterward so long squaring chains cannot leak mass.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::device::NormalizedDrive;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("coefficient vector is not unit mass (r_0 = {r0}, expected 0.5)")]
    NotNormalized { r0: f64 },
    #[error("matrix exponential failed: {0}")]
    ExpmFailure(&'static str),
    #[error("bad spectral input: {0}")]
    BadInput(String),
}

/// Default truncation order (highest retained Legendre degree).
pub const DEFAULT_ORDER: usize = 200;

/// Padding added to the operator dimension while composing shift identities,
/// so products of banded factors are exact on the retained block.
const COMPOSE_PAD: usize = 4;

/// Legendre values `P_0..P_n` at `x` by the three-term recurrence.
pub fn legendre_values(x: f64, n: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n == 0 {
        return p;
    }
    p.push(x);
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
        p.push(next);
    }
    p
}

/// Values, first, and second derivatives of `P_0..P_n` at `x`, using
/// `P'_{n+1} = P'_{n-1} + (2n+1) P_n` and its derivative.
pub fn legendre_tables(x: f64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = legendre_values(x, n);
    let mut q = vec![0.0; n + 1];
    let mut r = vec![0.0; n + 1];
    if n >= 1 {
        q[1] = 1.0;
    }
    for k in 1..n {
        let c = 2.0 * k as f64 + 1.0;
        q[k + 1] = q[k - 1] + c * p[k];
        r[k + 1] = r[k - 1] + c * q[k];
    }
    (p, q, r)
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration from the
/// Chebyshev-like initial guess. Nodes ascend.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1);
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    let half = k / 2;
    for i in 0..k.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        // Newton on P_k(x) = 0.
        for _ in 0..100 {
            let p = legendre_values(x, k);
            // (1 - x^2) P_k' = k (P_{k-1} - x P_k)
            let dp = k as f64 * (p[k - 1] - x * p[k]) / (1.0 - x * x);
            let dx = p[k] / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let p = legendre_values(x, k);
        let dp = k as f64 * (p[k - 1] - x * p[k]) / (1.0 - x * x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // The guess walks down from x near +1; store ascending.
        nodes[k - 1 - i] = x;
        weights[k - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if k % 2 == 1 {
        nodes[half] = 0.0;
        let p = legendre_values(0.0, k);
        let dp = k as f64 * p[k - 1];
        weights[half] = 2.0 / (dp * dp);
    }
    (nodes, weights)
}

/// Coefficient matrix of `f -> x f` on degrees `0..dim-1`.
fn x_matrix(dim: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        let nf = n as f64;
        if n + 1 < dim {
            a[(n + 1, n)] = (nf + 1.0) / (2.0 * nf + 1.0);
        }
        if n >= 1 {
            a[(n - 1, n)] = nf / (2.0 * nf + 1.0);
        }
    }
    a
}

/// Coefficient matrix of `f -> d/dx[(1 - x^2) f]` on degrees `0..dim-1`:
/// `P_n -> n(n-1)/(2n+1) P_{n-1} - (n+1)(n+2)/(2n+1) P_{n+1}`.
fn stretch_derivative_matrix(dim: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        let nf = n as f64;
        if n >= 1 {
            a[(n - 1, n)] = nf * (nf - 1.0) / (2.0 * nf + 1.0);
        }
        if n + 1 < dim {
            a[(n + 1, n)] = -(nf + 1.0) * (nf + 2.0) / (2.0 * nf + 1.0);
        }
    }
    a
}

/// Drift-diffusion generator on coefficients of degree `0..=n_max`.
pub fn build_generator(n_max: usize, drive: &NormalizedDrive) -> DMatrix<f64> {
    let c = drive.i - drive.h;
    let d = 1.0 / (2.0 * drive.delta);
    let dim = n_max + 1 + COMPOSE_PAD;

    let x = x_matrix(dim);
    let t = stretch_derivative_matrix(dim);
    // drift: T (c I - X); diffusion: D d/dx[(1-x^2) d/dx] P_n = -D n(n+1) P_n
    let mut a = &t * (DMatrix::identity(dim, dim) * c - &x);
    for n in 0..dim {
        let nf = n as f64;
        a[(n, n)] -= d * nf * (nf + 1.0);
    }
    a.view((0, 0), (n_max + 1, n_max + 1)).into_owned()
}

/// Same generator by Galerkin quadrature,
/// `A_{mn} = (2m+1)/2 * integral of P_m L[P_n]`, with the operator expanded as
/// `L[f] = a_0 f + a_1 f' + a_2 f''` and all polynomial values taken from the
/// recurrence tables. Shares no structure with [`build_generator`].
pub fn quadrature_generator(n_max: usize, drive: &NormalizedDrive) -> DMatrix<f64> {
    let c = drive.i - drive.h;
    let d = 1.0 / (2.0 * drive.delta);
    let n = n_max + 1;
    // Integrand degree is at most 2 n_max + 2.
    let k = n_max + 3;
    let (nodes, weights) = gauss_legendre(k);

    let mut a = DMatrix::zeros(n, n);
    for (x, w) in nodes.iter().zip(&weights) {
        let (p, q, r) = legendre_tables(*x, n_max);
        let one_m_x2 = 1.0 - x * x;
        let a0 = -2.0 * x * (c - x) - one_m_x2;
        let a1 = -2.0 * x * d + one_m_x2 * (c - x);
        let a2 = one_m_x2 * d;
        for col in 0..n {
            let lpn = a0 * p[col] + a1 * q[col] + a2 * r[col];
            for row in 0..n {
                a[(row, col)] += w * p[row] * lpn;
            }
        }
    }
    for row in 0..n {
        let scale = (2.0 * row as f64 + 1.0) / 2.0;
        for col in 0..n {
            a[(row, col)] *= scale;
        }
    }
    a
}

/// Galerkin projection `r_n = (2n+1)/2 * integral of f P_n` using `k`-point
/// Gauss-Legendre quadrature.
pub fn project_fn<F: Fn(f64) -> f64>(f: F, n_max: usize, k: usize) -> Vec<f64> {
    let (nodes, weights) = gauss_legendre(k);
    let mut r = vec![0.0; n_max + 1];
    for (x, w) in nodes.iter().zip(&weights) {
        let p = legendre_values(*x, n_max);
        let fv = f(*x) * w;
        for (rn, pn) in r.iter_mut().zip(&p) {
            *rn += fv * pn;
        }
    }
    for (n, rn) in r.iter_mut().enumerate() {
        *rn *= (2.0 * n as f64 + 1.0) / 2.0;
    }
    r
}

/// Projects a (possibly unnormalized) density and rescales so `r_0 = 1/2`.
pub fn project_density<F: Fn(f64) -> f64>(
    f: F,
    n_max: usize,
) -> Result<DVector<f64>, SpectralError> {
    let k = (2 * (n_max + 1)).max(1024);
    let mut r = project_fn(f, n_max, k);
    let r0 = r[0];
    if !(r0.is_finite() && r0 > 0.0) {
        return Err(SpectralError::BadInput(format!(
            "projected mass coefficient r_0 = {r0}"
        )));
    }
    let scale = 0.5 / r0;
    for v in &mut r {
        *v *= scale;
    }
    Ok(DVector::from_vec(r))
}

pub fn check_normalized(r: &DVector<f64>) -> Result<(), SpectralError> {
    let r0 = r[0];
    if (2.0 * r0 - 1.0).abs() > 1e-6 {
        return Err(SpectralError::NotNormalized { r0 });
    }
    Ok(())
}

/// Reconstructs `rho(x)` at the given abscissae.
pub fn reconstruct(r: &DVector<f64>, xs: &[f64]) -> Vec<f64> {
    let n_max = r.len() - 1;
    xs.iter()
        .map(|&x| {
            let p = legendre_values(x, n_max);
            p.iter().zip(r.iter()).map(|(pn, rn)| pn * rn).sum()
        })
        .collect()
}

/// Most negative reconstructed value on a 1024-point grid, when it dips below
/// the tolerance `-1e-6`; `None` means the expansion is effectively positive.
pub fn positivity_warning(r: &DVector<f64>) -> Option<f64> {
    let xs: Vec<f64> = (0..1024).map(|k| -1.0 + 2.0 * k as f64 / 1023.0).collect();
    let vals = reconstruct(r, &xs);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-6 {
        Some(min)
    } else {
        None
    }
}

/// Weights of the switched-hemisphere functional,
/// `P(x < 0) = sum w_n r_n` with `w_0 = 1` and
/// `w_n = (P_{n+1}(0) - P_{n-1}(0)) / (2n+1)` for `n >= 1`.
pub fn switched_weights(n_max: usize) -> Vec<f64> {
    let p0 = legendre_values(0.0, n_max + 1);
    let mut w = vec![0.0; n_max + 1];
    w[0] = 1.0;
    for n in 1..=n_max {
        w[n] = (p0[n + 1] - p0[n - 1]) / (2.0 * n as f64 + 1.0);
    }
    w
}

/// Switched probability of a coefficient vector.
pub fn switched_fraction(r: &DVector<f64>) -> f64 {
    switched_weights(r.len() - 1)
        .iter()
        .zip(r.iter())
        .map(|(w, rn)| w * rn)
        .sum()
}

/// Pade(13) scaling-and-squaring threshold (Higham 2005).
const PADE13_THETA: f64 = 5.371_920_351_148_152;

const PADE13_B: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for c in 0..a.ncols() {
        let s: f64 = a.column(c).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Matrix exponential by Pade(13) with scaling and squaring.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>, SpectralError> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(SpectralError::ExpmFailure("matrix not square"));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(SpectralError::ExpmFailure("non-finite input"));
    }
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * 0.5f64.powi(s);

    let b = &PADE13_B;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (b[13] * &a6 + b[11] * &a4 + b[9] * &a2)
        + b[7] * &a6
        + b[5] * &a4
        + b[3] * &a2
        + b[1] * &ident;
    let u = &scaled * u_inner;
    let v = &a6 * (b[12] * &a6 + b[10] * &a4 + b[8] * &a2)
        + b[6] * &a6
        + b[4] * &a4
        + b[2] * &a2
        + b[0] * &ident;

    let lhs = &v - &u;
    let rhs = &v + &u;
    let lu = lhs.lu();
    let mut e = lu
        .solve(&rhs)
        .ok_or(SpectralError::ExpmFailure("Pade solve singular"))?;
    for _ in 0..s {
        e = &e * &e;
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::ExpmFailure("non-finite result"));
    }
    Ok(e)
}

/// Propagator `exp(tau A)` with the mass row pinned to the exact unit row.
pub fn propagator(gen: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>, SpectralError> {
    if !tau.is_finite() {
        return Err(SpectralError::ExpmFailure("non-finite tau"));
    }
    let mut e = expm(&(gen * tau))?;
    for c in 0..e.ncols() {
        e[(0, c)] = if c == 0 { 1.0 } else { 0.0 };
    }
    Ok(e)
}

/// Evolves coefficients through ascending sample times, reusing the propagator
/// across equal gaps. Returns `(tau, coefficients)` at each sample.
pub fn evolve(
    r0: &DVector<f64>,
    gen: &DMatrix<f64>,
    sample_taus: &[f64],
) -> Result<Vec<(f64, DVector<f64>)>, SpectralError> {
    check_normalized(r0)?;
    let mut out = Vec::with_capacity(sample_taus.len());
    let mut r = r0.clone();
    let mut tau = 0.0f64;
    let mut cached: Option<(f64, DMatrix<f64>)> = None;
    for &s in sample_taus {
        if s < tau {
            return Err(SpectralError::BadInput(format!(
                "sample times not ascending at tau = {s}"
            )));
        }
        let dt = s - tau;
        if dt > 0.0 {
            let reuse = matches!(&cached, Some((d, _)) if *d == dt);
            if !reuse {
                cached = Some((dt, propagator(gen, dt)?));
            }
            let (_, e) = cached.as_ref().unwrap();
            r = e * &r;
        }
        tau = s;
        out.push((s, r.clone()));
    }
    Ok(out)
}

/// Writes coefficients as `n,r_n` CSV rows.
pub fn write_coefficients_csv<W: std::io::Write>(
    r: &DVector<f64>,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "n,r_n")?;
    for (n, v) in r.iter().enumerate() {
        writeln!(out, "{n},{v:e}")?;
    }
    Ok(())
}
