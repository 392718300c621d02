//! Device parameters and drive normalization for a perpendicular macrospin.
//!
//! Public interfaces speak SI (A/m, m^3, K, s, A). Solvers work in the
//! dimensionless frame carried by [`NormalizedDrive`]:
//!
//! * reduced current `i = I / I_c` with `I_c = alpha * Hk_eff / k_stt`, where
//!   `k_stt` is the damping-like STT field per ampere,
//!   `k_stt = hbar * P / (2 q mu0 Ms V)` by default;
//! * reduced field `h = H_ext_z / Hk_eff`;
//! * thermal stability `Delta = mu0 * Ms * Hk_eff * V / (2 kB T)` unless an
//!   explicit override is stored on the device;
//! * time in units of the damping time `tau_d = 1 / (alpha * gamma' * Hk_eff)`
//!   with `gamma' = gamma * mu0 / (1 + alpha^2)`.

use nalgebra::Vector3;
use thiserror::Error;

use crate::constants::{GAMMA, H_BAR, K_B, MU_0, Q_E};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("non-physical {field}: {value}")]
    NonPhysical { field: &'static str, value: f64 },
    #[error("pinned-layer direction must be a unit vector (|m_p| = {norm})")]
    PinnedLayerNotUnit { norm: f64 },
    #[error("critical current is zero or undefined (STT prefactor {k_stt} A/m per A)")]
    ZeroCriticalCurrent { k_stt: f64 },
}

/// Macrospin device description. Construct with a struct literal and validate
/// through [`DeviceParams::checked`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceParams {
    /// Saturation magnetization, A/m.
    pub msat_a_per_m: f64,
    /// Free-layer volume, m^3.
    pub volume_m3: f64,
    /// Gilbert damping (dimensionless).
    pub alpha: f64,
    /// Effective perpendicular anisotropy field, A/m.
    pub hk_eff_a_per_m: f64,
    /// Temperature, K.
    pub temp_k: f64,
    /// Spin polarization entering the STT prefactor, (0, 1].
    pub pol_p: f64,
    /// Field-like torque coefficient, expressed as the ratio of the
    /// field-like to the damping-like STT amplitude.
    pub eps_prime: f64,
    /// Pinned-layer unit direction.
    pub m_p: Vector3<f64>,
    /// Optional thermal-stability override; when set it wins over the value
    /// derived from (Ms, Hk_eff, V, T).
    pub delta: Option<f64>,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            msat_a_per_m: 1.0e6,
            volume_m3: 1.0e-24,
            alpha: 0.01,
            hk_eff_a_per_m: 1.0e5,
            temp_k: 300.0,
            pol_p: 0.5,
            eps_prime: 0.0,
            m_p: Vector3::z(),
            delta: None,
        }
    }
}

impl DeviceParams {
    /// Validates physical ranges and the pinned-layer norm, returning a copy
    /// that callers can rely on downstream.
    pub fn checked(&self) -> Result<Self, DeviceError> {
        let positive: [(&'static str, f64); 5] = [
            ("msat_a_per_m", self.msat_a_per_m),
            ("volume_m3", self.volume_m3),
            ("alpha", self.alpha),
            ("hk_eff_a_per_m", self.hk_eff_a_per_m),
            ("temp_k", self.temp_k),
        ];
        for (field, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(DeviceError::NonPhysical { field, value });
            }
        }
        if !self.pol_p.is_finite() || self.pol_p <= 0.0 || self.pol_p > 1.0 {
            return Err(DeviceError::NonPhysical {
                field: "pol_p",
                value: self.pol_p,
            });
        }
        if !self.eps_prime.is_finite() {
            return Err(DeviceError::NonPhysical {
                field: "eps_prime",
                value: self.eps_prime,
            });
        }
        if let Some(d) = self.delta {
            if !d.is_finite() || d <= 0.0 {
                return Err(DeviceError::NonPhysical {
                    field: "delta",
                    value: d,
                });
            }
        }
        let norm = self.m_p.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(DeviceError::PinnedLayerNotUnit { norm });
        }
        Ok(self.clone())
    }

    /// `gamma' = gamma * mu0 / (1 + alpha^2)`, m A^-1 s^-1.
    pub fn gamma_prime(&self) -> f64 {
        gamma_prime(self.alpha)
    }

    /// Damping time `tau_d = 1 / (alpha * gamma' * Hk_eff)`, s.
    pub fn tau_d_s(&self) -> f64 {
        1.0 / (self.alpha * self.gamma_prime() * self.hk_eff_a_per_m)
    }

    /// Thermal stability derived from the stored geometry:
    /// `mu0 * Ms * Hk_eff * V / (2 kB T)`.
    pub fn delta_derived(&self) -> f64 {
        MU_0 * self.msat_a_per_m * self.hk_eff_a_per_m * self.volume_m3 / (2.0 * K_B * self.temp_k)
    }

    /// Effective thermal stability: the override when present, else derived.
    pub fn delta_effective(&self) -> f64 {
        self.delta.unwrap_or_else(|| self.delta_derived())
    }

    /// Consistency warning when a stored override deviates more than 20% from
    /// the derived value. The override still wins.
    pub fn delta_warning(&self) -> Option<String> {
        let stored = self.delta?;
        let derived = self.delta_derived();
        let dev = (stored - derived).abs() / derived;
        (dev > 0.20).then(|| {
            format!(
                "delta override {stored} deviates {:.0}% from derived {derived:.3}",
                dev * 100.0
            )
        })
    }

    /// Default damping-like STT field per ampere,
    /// `hbar * P / (2 q mu0 Ms V)` in (A/m)/A.
    pub fn stt_prefactor_per_amp(&self) -> f64 {
        H_BAR * self.pol_p / (2.0 * Q_E * MU_0 * self.msat_a_per_m * self.volume_m3)
    }

    /// Critical current for a given STT prefactor, A.
    pub fn i_c_amps(&self, k_stt_per_amp: f64) -> Result<f64, DeviceError> {
        if !k_stt_per_amp.is_finite() || k_stt_per_amp <= 0.0 {
            return Err(DeviceError::ZeroCriticalCurrent {
                k_stt: k_stt_per_amp,
            });
        }
        Ok(self.alpha * self.hk_eff_a_per_m / k_stt_per_amp)
    }
}

/// Effective gyromagnetic prefactor `gamma * mu0 / (1 + alpha^2)`, m A^-1 s^-1.
pub fn gamma_prime(alpha: f64) -> f64 {
    GAMMA * MU_0 / (1.0 + alpha * alpha)
}

/// Dimensionless drive and time scales consumed by the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedDrive {
    /// Reduced current `I / I_c`.
    pub i: f64,
    /// Reduced easy-axis field `H_ext_z / Hk_eff`.
    pub h: f64,
    /// Thermal stability.
    pub delta: f64,
    /// Critical current, A.
    pub i_c_amps: f64,
    /// Damping time, s.
    pub tau_d_s: f64,
}

impl NormalizedDrive {
    pub fn time_to_tau(&self, t_s: f64) -> f64 {
        time_to_tau(t_s, self.tau_d_s)
    }

    pub fn tau_to_time(&self, tau: f64) -> f64 {
        tau_to_time(tau, self.tau_d_s)
    }
}

/// Builds the dimensionless drive from SI inputs. `k_stt_per_amp` is the
/// damping-like STT field per ampere (see [`DeviceParams::stt_prefactor_per_amp`]).
pub fn normalize(
    params: &DeviceParams,
    current_a: f64,
    h_ext_z_a_per_m: f64,
    k_stt_per_amp: f64,
) -> Result<NormalizedDrive, DeviceError> {
    let i_c = params.i_c_amps(k_stt_per_amp)?;
    Ok(NormalizedDrive {
        i: current_a / i_c,
        h: h_ext_z_a_per_m / params.hk_eff_a_per_m,
        delta: params.delta_effective(),
        i_c_amps: i_c,
        tau_d_s: params.tau_d_s(),
    })
}

/// Convenience: normalize with the device's own STT prefactor.
pub fn normalize_default(
    params: &DeviceParams,
    current_a: f64,
    h_ext_z_a_per_m: f64,
) -> Result<NormalizedDrive, DeviceError> {
    normalize(
        params,
        current_a,
        h_ext_z_a_per_m,
        params.stt_prefactor_per_amp(),
    )
}

pub fn time_to_tau(t_s: f64, tau_d_s: f64) -> f64 {
    t_s / tau_d_s
}

pub fn tau_to_time(tau: f64, tau_d_s: f64) -> f64 {
    tau * tau_d_s
}

/// Disc free layer (50 nm diameter, 1 nm thick) used by the examples, the
/// shipped config and large parts of the test-suite.
pub fn reference_device() -> DeviceParams {
    DeviceParams {
        msat_a_per_m: 1.2e6,
        volume_m3: 0.25 * std::f64::consts::PI * 50e-9 * 50e-9 * 1e-9,
        alpha: 0.01,
        hk_eff_a_per_m: 177_415.0,
        temp_k: 300.0,
        pol_p: 0.75,
        eps_prime: 0.0,
        m_p: Vector3::z(),
        delta: Some(63.0),
    }
    .checked()
    .expect("reference device is valid")
}
