//! Output voltage noise: Johnson–Nyquist baths seen through the cavity,
//! spin refrigeration, source phase noise and amplifier added noise.
//!
//! The reflected noise at a given frequency is a passive mixture of three
//! baths, the input port, the cavity's internal loss and the spin ensemble,
//! with weights that sum to one:
//!
//! ```text
//! F_port = |r|²,  F_cav = κ_c1 κ_c / |D|²,  F_spin = κ_c1 κ_s / |D|²
//! ```
//!
//! where `D = (κ + κ_s)/2 + iΔ_eff` is built from the resonant hyperfine
//! line with saturation-corrected `g_eff` and `Γ_1`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_non_negative, ensure_positive, Error, Result};
use crate::model::{constants, hz, power_to_flux, Device, DriveParams};
use crate::nonlinear::{select_branch, solve_occupancy, BranchSelection, SteadyStateSolution};

/// Calibrated system temperature at the detuned baseline, K.
pub const SYSTEM_TEMPERATURE: f64 = 407.0;
/// Detuning of the spin line used as the uncooled reference.
pub const COOLING_REFERENCE_DETUNING_HZ: f64 = 5e6;
/// Offset from the carrier at which cooling depth is evaluated.
pub const COOLING_OFFSET_HZ: f64 = 15e3;

/// Source phase noise as (offset Hz, dBc/Hz) pairs, interpolated log-log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseNoiseSpectrum {
    points: Vec<(f64, f64)>,
}

impl PhaseNoiseSpectrum {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("noise.phase_noise_spec", "must contain at least one point"));
        }
        for (i, &(f, l)) in points.iter().enumerate() {
            ensure_positive("noise.phase_noise_spec.offset_hz", f)?;
            ensure_finite("noise.phase_noise_spec.dbc_hz", l)?;
            if i > 0 && f <= points[i - 1].0 {
                return Err(Error::invalid(
                    "noise.phase_noise_spec",
                    "offsets must be strictly increasing",
                ));
            }
        }
        Ok(PhaseNoiseSpectrum { points })
    }

    pub fn flat(dbc_hz: f64) -> Result<Self> {
        Self::new(vec![(1.0, dbc_hz)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Level in dBc/Hz at `offset_hz`, extrapolating the end slopes.
    pub fn dbc_at(&self, offset_hz: f64) -> f64 {
        let p = &self.points;
        if p.len() == 1 {
            return p[0].1;
        }
        let x = offset_hz.abs().max(f64::MIN_POSITIVE).log10();
        let n = p.len();
        let i = if offset_hz < p[0].0 {
            log::warn!("phase noise: offset {offset_hz} Hz below table, extrapolating");
            0
        } else if offset_hz > p[n - 1].0 {
            log::warn!("phase noise: offset {offset_hz} Hz above table, extrapolating");
            n - 2
        } else {
            p.windows(2).position(|w| offset_hz <= w[1].0).unwrap_or(n - 2)
        };
        let (x0, y0) = (p[i].0.log10(), p[i].1);
        let (x1, y1) = (p[i + 1].0.log10(), p[i + 1].1);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn linear_at(&self, offset_hz: f64) -> f64 {
        10f64.powf(self.dbc_at(offset_hz) / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEnvironment {
    pub t_port: f64,
    pub t_cavity: f64,
    pub t_ambient: f64,
    pub amp_noise_figure_db: f64,
    pub power_gain_db: f64,
    pub r_ohm: f64,
    #[serde(default)]
    pub phase_noise: Option<PhaseNoiseSpectrum>,
    /// Replaces the pump-derived spin temperature when set.
    #[serde(default)]
    pub t_spin_override: Option<f64>,
}

impl Default for NoiseEnvironment {
    fn default() -> Self {
        Self::reference()
    }
}

impl NoiseEnvironment {
    /// 0.8 dB amplifier, 36.5 dB gain, 50 Ω; baths chosen so the detuned
    /// baseline sits at 407 K including the amplifier.
    pub fn reference() -> Self {
        let nf = 0.8;
        let t_amp = amplifier_temperature(nf);
        NoiseEnvironment {
            t_port: SYSTEM_TEMPERATURE - t_amp,
            t_cavity: SYSTEM_TEMPERATURE - t_amp,
            t_ambient: 300.0,
            amp_noise_figure_db: nf,
            power_gain_db: 36.5,
            r_ohm: 50.0,
            phase_noise: None,
            t_spin_override: None,
        }
    }

    /// Thermal baths at 407 K, perfectly cold spins, no amplifier or
    /// phase noise.
    pub fn bare() -> Self {
        NoiseEnvironment {
            t_port: SYSTEM_TEMPERATURE,
            t_cavity: SYSTEM_TEMPERATURE,
            t_ambient: 300.0,
            amp_noise_figure_db: 0.0,
            power_gain_db: 0.0,
            r_ohm: 50.0,
            phase_noise: None,
            t_spin_override: Some(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("noise.t_port", self.t_port)?;
        ensure_positive("noise.t_cavity", self.t_cavity)?;
        ensure_positive("noise.t_ambient", self.t_ambient)?;
        ensure_non_negative("noise.amp_noise_figure_db", self.amp_noise_figure_db)?;
        ensure_finite("noise.power_gain_db", self.power_gain_db)?;
        ensure_positive("noise.r_ohm", self.r_ohm)?;
        if let Some(t) = self.t_spin_override {
            ensure_non_negative("noise.t_spin_override", t)?;
        }
        if let Some(p) = &self.phase_noise {
            PhaseNoiseSpectrum::new(p.points.clone())?;
        }
        Ok(())
    }

    pub fn t_amp(&self) -> f64 {
        amplifier_temperature(self.amp_noise_figure_db)
    }

    pub fn gain(&self) -> f64 {
        10f64.powf(self.power_gain_db / 10.0)
    }

    pub fn t_spin(&self, device: &Device) -> f64 {
        self.t_spin_override
            .unwrap_or_else(|| spin_noise_temperature(device, self.t_ambient))
    }

    pub fn with_power_gain_db(&self, g: f64) -> Self {
        NoiseEnvironment {
            power_gain_db: g,
            ..self.clone()
        }
    }
}

/// Input-referred amplifier temperature for a noise figure in dB.
pub fn amplifier_temperature(nf_db: f64) -> f64 {
    constants::T_REF * (10f64.powf(nf_db / 10.0) - 1.0)
}

/// k_B T R.
pub fn johnson_psd(t: f64, r_ohm: f64) -> f64 {
    constants::K_B * t * r_ohm
}

/// T_ambient·γ_0/(γ_0 + γ_p).
pub fn spin_noise_temperature(device: &Device, t_ambient: f64) -> f64 {
    let s = &device.spins;
    let total = s.gamma_0 + s.gamma_p;
    if total > 0.0 {
        t_ambient * s.gamma_0 / total
    } else {
        t_ambient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelFractions {
    pub port: f64,
    pub cavity: f64,
    pub spin: f64,
}

impl ChannelFractions {
    pub fn sum(&self) -> f64 {
        self.port + self.cavity + self.spin
    }
}

/// Bath weights at noise detuning `delta` (noise frequency − ω_c) for a
/// resonant line at `delta_s` saturated to factor `chi`.
pub fn channel_fractions(device: &Device, delta: f64, delta_s: f64, chi: f64) -> ChannelFractions {
    let s = &device.spins;
    let c = &device.cavity;
    let gamma_1 = s.fwhm + s.gamma() * chi;
    let g_eff2 = s.g * s.g / chi;
    let sigma = if g_eff2 > 0.0 {
        g_eff2 / Complex64::new(0.5 * gamma_1, delta - delta_s)
    } else {
        Complex64::new(0.0, 0.0)
    };
    let kappa_s = 2.0 * sigma.re;
    let d = Complex64::new(0.5 * (c.kappa() + kappa_s), delta + sigma.im);
    let d2 = d.norm_sqr();
    let r = Complex64::new(-1.0, 0.0) + c.kappa_c1 / d;
    ChannelFractions {
        port: r.norm_sqr(),
        cavity: c.kappa_c1 * c.kappa_c / d2,
        spin: c.kappa_c1 * kappa_s / d2,
    }
}

/// Fractions at the saturation state of a solved steady state.
pub fn channel_fractions_for(
    device: &Device,
    delta: f64,
    delta_s: f64,
    sol: &SteadyStateSolution,
) -> ChannelFractions {
    channel_fractions(device, delta, delta_s, sol.chi)
}

/// k_B R Σ F_i T_i at the device plane.
pub fn thermal_psd(env: &NoiseEnvironment, f: &ChannelFractions, t_spin: f64) -> f64 {
    constants::K_B * env.r_ohm * (f.port * env.t_port + f.cavity * env.t_cavity + f.spin * t_spin)
}

/// Source phase noise converted to voltage at the device plane.
pub fn phase_noise_psd(
    env: &NoiseEnvironment,
    device: &Device,
    drive: &DriveParams,
    r: Complex64,
    offset_hz: f64,
) -> Result<f64> {
    let Some(spec) = &env.phase_noise else {
        return Ok(0.0);
    };
    let omega = device.cavity.omega_c + drive.delta;
    let carrier = constants::HBAR * omega * drive.flux() * env.r_ohm;
    Ok(spec.linear_at(offset_hz) * carrier * r.norm_sqr())
}

/// Output-plane PSD components, V²/Hz (gain applied).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub offset_hz: f64,
    pub thermal_port: f64,
    pub thermal_cavity: f64,
    pub thermal_spin: f64,
    pub phase: f64,
    pub amplifier: f64,
    pub total: f64,
    pub fractions: ChannelFractions,
    pub gain: f64,
}

impl NoiseBudget {
    pub fn device_plane_total(&self) -> f64 {
        self.total / self.gain
    }
}

/// Assemble the budget from a solved steady state.
pub fn noise_budget_for(
    device: &Device,
    drive: &DriveParams,
    env: &NoiseEnvironment,
    sol: &SteadyStateSolution,
    offset_hz: f64,
) -> Result<NoiseBudget> {
    let f = channel_fractions_for(device, drive.delta + hz(offset_hz), drive.delta_s, sol);
    let kr = constants::K_B * env.r_ohm;
    let gain = env.gain();
    let thermal_port = gain * kr * f.port * env.t_port;
    let thermal_cavity = gain * kr * f.cavity * env.t_cavity;
    let thermal_spin = gain * kr * f.spin * env.t_spin(device);
    let phase = gain * phase_noise_psd(env, device, drive, sol.r, offset_hz)?;
    let amplifier = gain * kr * env.t_amp();
    Ok(NoiseBudget {
        offset_hz,
        thermal_port,
        thermal_cavity,
        thermal_spin,
        phase,
        amplifier,
        total: thermal_port + thermal_cavity + thermal_spin + phase + amplifier,
        fractions: f,
        gain,
    })
}

pub fn noise_budget(
    device: &Device,
    drive: &DriveParams,
    env: &NoiseEnvironment,
    offset_hz: f64,
    sel: BranchSelection,
) -> Result<NoiseBudget> {
    env.validate()?;
    let sols = solve_occupancy(device, drive)?;
    let sol = select_branch(&sols, sel).ok_or_else(|| Error::NoRoot("no stable root".into()))?;
    noise_budget_for(device, drive, env, sol, offset_hz)
}

/// Budgets at several carrier offsets for one drive.
pub fn noise_spectrum(
    device: &Device,
    drive: &DriveParams,
    env: &NoiseEnvironment,
    offsets_hz: &[f64],
    sel: BranchSelection,
) -> Result<Vec<NoiseBudget>> {
    env.validate()?;
    let sols = solve_occupancy(device, drive)?;
    let sol = *select_branch(&sols, sel).ok_or_else(|| Error::NoRoot("no stable root".into()))?;
    offsets_hz
        .par_iter()
        .map(|&f| noise_budget_for(device, drive, env, &sol, f))
        .collect()
}

/// Noise suppression in dB of the spin-resonant configuration relative to
/// spins detuned by 5 MHz, at a 15 kHz offset and resonant drive.
/// Positive values mean the spins cool the output.
pub fn cooling_depth(device: &Device, power_w: f64, env: &NoiseEnvironment) -> Result<f64> {
    let on = DriveParams::resonant(&device.cavity, power_w)?;
    let off = DriveParams {
        delta_s: hz(COOLING_REFERENCE_DETUNING_HZ),
        ..on
    };
    let sel = BranchSelection::FollowFromBelow;
    let n_on = noise_budget(device, &on, env, COOLING_OFFSET_HZ, sel)?;
    let n_off = noise_budget(device, &off, env, COOLING_OFFSET_HZ, sel)?;
    Ok(10.0 * (n_off.total / n_on.total).log10())
}

/// Input flux helper for the phase-noise crossover.
pub fn carrier_flux(device: &Device, power_w: f64) -> Result<f64> {
    power_to_flux(power_w, device.cavity.omega_c)
}
