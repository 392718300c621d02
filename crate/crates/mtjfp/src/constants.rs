//! Physical constants (SI, CODATA 2018).

use std::f64::consts::PI;

/// Electron gyromagnetic ratio, rad s^-1 T^-1.
pub const GAMMA: f64 = 1.760_859_644e11;

/// Vacuum permeability, T m A^-1.
pub const MU_0: f64 = 4.0e-7 * PI;

/// Boltzmann constant, J K^-1.
pub const K_B: f64 = 1.380_649e-23;

/// Reduced Planck constant, J s.
pub const H_BAR: f64 = 1.054_571_817e-34;

/// Elementary charge, C.
pub const Q_E: f64 = 1.602_176_634e-19;
