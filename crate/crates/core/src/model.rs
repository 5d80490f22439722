//! Physical constants, unit conversions and the parameter records shared by
//! every other module.
//!
//! All rates are angular (rad/s) and stored as plain `f64`. Hz-valued inputs
//! enter through [`crate::config`], which multiplies by 2π exactly once.

use serde::{Deserialize, Serialize};

use crate::distribution::LineShape;
use crate::error::{ensure_finite, ensure_non_negative, ensure_positive, Error, Result};

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// CODATA values and the NV gyromagnetic ratio.
pub mod constants {
    /// Reduced Planck constant, J·s.
    pub const HBAR: f64 = 1.054_571_817e-34;
    /// Boltzmann constant, J/K.
    pub const K_B: f64 = 1.380_649e-23;
    /// Bohr magneton, J/T.
    pub const MU_B: f64 = 9.274_010_078_3e-24;
    /// NV electron g-factor.
    pub const G_E: f64 = 2.003;
    /// NV electron gyromagnetic ratio, Hz/T.
    pub const GAMMA_E: f64 = 28.0e9;
    /// Vacuum permeability, T·m/A.
    pub const MU_0: f64 = 1.256_637_062_12e-6;
    /// Room temperature used for amplifier noise figures, K.
    pub const T_REF: f64 = 290.0;
}

pub fn hz(f: f64) -> f64 {
    TWO_PI * f
}

pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    1e-3 * 10f64.powf(p_dbm / 10.0)
}

pub fn watts_to_dbm(p_w: f64) -> f64 {
    10.0 * (p_w / 1e-3).log10()
}

/// Photon flux |β|² (photons/s) carried by power `p_w` at angular frequency `omega`.
pub fn power_to_flux(p_w: f64, omega: f64) -> Result<f64> {
    ensure_non_negative("power", p_w)?;
    ensure_positive("omega", omega)?;
    Ok(p_w / (constants::HBAR * omega))
}

/// Inverse of [`power_to_flux`].
pub fn flux_to_power(flux: f64, omega: f64) -> Result<f64> {
    ensure_non_negative("flux", flux)?;
    ensure_positive("omega", omega)?;
    Ok(flux * constants::HBAR * omega)
}

/// Microwave resonator seen through one coupling port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    /// Resonance, rad/s.
    pub omega_c: f64,
    /// Internal loss rate, rad/s.
    pub kappa_c: f64,
    /// Port coupling rate, rad/s.
    pub kappa_c1: f64,
    /// Mode volume, m³.
    pub mode_volume: f64,
}

impl CavityParams {
    pub fn new(omega_c: f64, kappa_c: f64, kappa_c1: f64, mode_volume: f64) -> Result<Self> {
        let c = CavityParams {
            omega_c,
            kappa_c,
            kappa_c1,
            mode_volume,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("cavity.f_c_hz", self.omega_c)?;
        ensure_non_negative("cavity.kappa_c_hz", self.kappa_c)?;
        ensure_non_negative("cavity.kappa_c1_hz", self.kappa_c1)?;
        ensure_positive("cavity.V_cm3", self.mode_volume)?;
        if self.kappa() <= 0.0 {
            return Err(Error::invalid(
                "cavity.kappa_c_hz",
                "total linewidth kappa_c + kappa_c1 must be > 0",
            ));
        }
        Ok(())
    }

    /// Total linewidth κ = κ_c + κ_c1.
    pub fn kappa(&self) -> f64 {
        self.kappa_c + self.kappa_c1
    }

    /// Unloaded quality factor ω_c/κ_c.
    pub fn q_unloaded(&self) -> f64 {
        self.omega_c / self.kappa_c
    }

    pub fn q_loaded(&self) -> f64 {
        self.omega_c / self.kappa()
    }

    /// Same resonator with unloaded Q set to `q`, port coupling rescaled to
    /// keep κ_c1/κ_c fixed.
    pub fn with_q_unloaded(&self, q: f64) -> Result<Self> {
        ensure_positive("q", q)?;
        let ratio = self.kappa_c1 / self.kappa_c;
        let kappa_c = self.omega_c / q;
        CavityParams::new(self.omega_c, kappa_c, ratio * kappa_c, self.mode_volume)
    }
}

/// Inhomogeneously broadened spin ensemble with optional hyperfine structure.
///
/// Each hyperfine sub-ensemble couples with the full collective `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinEnsembleParams {
    /// Collective coupling per sub-ensemble, rad/s.
    pub g: f64,
    /// Single-spin coupling, rad/s.
    pub g_s: f64,
    /// Inhomogeneous FWHM Γ, rad/s. Zero means homogeneous.
    pub fwhm: f64,
    /// Intrinsic polarization loss, rad/s.
    pub gamma_0: f64,
    /// Optical pumping (repolarization) rate, rad/s.
    pub gamma_p: f64,
    /// Hyperfine splitting, rad/s.
    pub a_zz: f64,
    pub n_hyperfine: usize,
    pub lineshape: LineShape,
}

impl SpinEnsembleParams {
    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("spins.g_hz", self.g)?;
        ensure_positive("spins.g_s_hz", self.g_s)?;
        ensure_non_negative("spins.gamma_fwhm_hz", self.fwhm)?;
        ensure_non_negative("spins.gamma_0_hz", self.gamma_0)?;
        ensure_non_negative("spins.gamma_p_hz", self.gamma_p)?;
        ensure_non_negative("spins.A_zz_hz", self.a_zz)?;
        if self.gamma() <= 0.0 {
            return Err(Error::invalid(
                "spins.gamma_p_hz",
                "gamma_0 + gamma_p must be > 0",
            ));
        }
        if self.n_hyperfine == 0 {
            return Err(Error::invalid("spins.n_hyperfine", "must be >= 1"));
        }
        if self.gamma_0 > 0.1 * self.gamma_p * (1.0 + 1e-9) {
            log::warn!(
                "gamma_0 ({:.3e}) is not small against gamma_p ({:.3e}); \
                 polarization will be poor",
                self.gamma_0,
                self.gamma_p
            );
        }
        Ok(())
    }

    /// Homogeneous linewidth γ = γ_0 + γ_p.
    pub fn gamma(&self) -> f64 {
        self.gamma_0 + self.gamma_p
    }

    /// Spins per hyperfine sub-ensemble, (g/g_s)².
    pub fn n_spins(&self) -> f64 {
        (self.g / self.g_s).powi(2)
    }

    /// Line-centre offsets from ω_s, rad/s, symmetric about zero.
    pub fn line_offsets(&self) -> Vec<f64> {
        let mid = (self.n_hyperfine as f64 - 1.0) / 2.0;
        (0..self.n_hyperfine)
            .map(|k| (k as f64 - mid) * self.a_zz)
            .collect()
    }

    pub fn with_gamma_p(&self, gamma_p: f64) -> Self {
        SpinEnsembleParams { gamma_p, ..*self }
    }

    /// Keep only the sub-ensemble at ω_s.
    pub fn single_line(&self) -> Self {
        SpinEnsembleParams {
            n_hyperfine: 1,
            ..*self
        }
    }
}

/// Coherent drive: input amplitude and detunings.
///
/// `delta` = ω_d − ω_c, `delta_s` = ω_s − ω_c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    /// Input amplitude |β_in|, √(photons/s).
    pub beta_in: f64,
    pub delta: f64,
    pub delta_s: f64,
}

impl DriveParams {
    pub fn new(beta_in: f64, delta: f64, delta_s: f64) -> Result<Self> {
        ensure_non_negative("drive.beta_in", beta_in)?;
        ensure_finite("drive.delta_hz", delta)?;
        ensure_finite("drive.delta_s_hz", delta_s)?;
        Ok(DriveParams {
            beta_in,
            delta,
            delta_s,
        })
    }

    /// Drive of power `p_w` at ω_d = ω_c + `delta`.
    pub fn from_power(cavity: &CavityParams, p_w: f64, delta: f64, delta_s: f64) -> Result<Self> {
        let flux = power_to_flux(p_w, cavity.omega_c + delta)?;
        DriveParams::new(flux.sqrt(), delta, delta_s)
    }

    pub fn from_dbm(cavity: &CavityParams, p_dbm: f64, delta: f64, delta_s: f64) -> Result<Self> {
        Self::from_power(cavity, dbm_to_watts(p_dbm), delta, delta_s)
    }

    pub fn resonant(cavity: &CavityParams, p_w: f64) -> Result<Self> {
        Self::from_power(cavity, p_w, 0.0, 0.0)
    }

    pub fn flux(&self) -> f64 {
        self.beta_in * self.beta_in
    }

    pub fn power_w(&self, cavity: &CavityParams) -> f64 {
        self.flux() * constants::HBAR * (cavity.omega_c + self.delta)
    }

    pub fn with_flux(&self, flux: f64) -> Self {
        DriveParams {
            beta_in: flux.max(0.0).sqrt(),
            ..*self
        }
    }
}

/// Resonator plus spin ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub cavity: CavityParams,
    pub spins: SpinEnsembleParams,
}

impl Device {
    pub fn new(cavity: CavityParams, spins: SpinEnsembleParams) -> Result<Self> {
        cavity.validate()?;
        spins.validate()?;
        Ok(Device { cavity, spins })
    }

    /// Built-in preset for the characterized device.
    pub fn paper_device() -> Self {
        crate::config::DeviceConfig::paper_device()
            .to_device()
            .expect("built-in preset is valid")
    }

    pub fn with_gamma_p(&self, gamma_p: f64) -> Self {
        Device {
            spins: self.spins.with_gamma_p(gamma_p),
            ..*self
        }
    }

    pub fn single_line(&self) -> Self {
        Device {
            spins: self.spins.single_line(),
            ..*self
        }
    }

    pub fn with_fwhm(&self, fwhm: f64) -> Self {
        Device {
            spins: SpinEnsembleParams { fwhm, ..self.spins },
            ..*self
        }
    }
}
