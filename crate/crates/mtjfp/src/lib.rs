//! Switching statistics for perpendicular spin-torque magnetic tunnel
//! junctions.
//!
//! The crate models a macrospin free layer driven by spin-transfer torque and
//! thermal agitation, and computes the quantities that matter for memory
//! design: write error rates, read disturb rates, switching-time curves, and
//! device parameters regressed from measurements. Three solvers cover the
//! accuracy/cost trade-offs:
//!
//! - [`fvm`]: a conservative finite-volume discretization of the polar-angle
//!   density with exponentially fitted fluxes; robust for any drive,
//!   conserves probability to rounding.
//! - [`spectral`]: a Legendre-coefficient expansion of the same density with
//!   an exact pentadiagonal generator and matrix-exponential propagation;
//!   spectrally accurate and extremely fast for long pulses.
//! - [`sllgs`]: direct stochastic trajectories of the magnetization, the
//!   ground truth the density solvers are validated against, plus a
//!   calibrated deterministic "fictitious thermal field" mode for fast
//!   worst-case transients.
//!
//! [`stats`] turns solver output into error rates and inverse problems
//! ("how long until the write error rate reaches 1e-6?"), [`fit`] regresses
//! device parameters from measured curves and calibrates the fictitious
//! field, and [`device`] holds the parameter set and the reduced units shared
//! by everything else.
//!
//! The `parallel` feature (on by default) distributes ensembles and sweeps
//! with rayon; results are bitwise identical for any worker count.

pub mod constants;
pub mod device;
mod exec;
pub mod fit;
pub mod fvm;
pub mod sllgs;
pub mod spectral;
pub mod stats;

pub use device::{DeviceParams, NormalizedDrive};

/// Re-exported so downstream crates can name the vector types appearing in
/// this crate's interfaces without pinning their own copy of the dependency.
pub use nalgebra;
