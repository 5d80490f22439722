//! Declarative device configuration in ordinary Hz.
//!
//! This is the only place where Hz values are multiplied by 2π. The preset
//! is stored in this form so that serializing it reproduces the input
//! values exactly.

use serde::{Deserialize, Serialize};

use crate::design::GsCalibration;
use crate::distribution::LineShape;
use crate::error::{Error, Result};
use crate::model::{dbm_to_watts, hz, CavityParams, Device, DriveParams, SpinEnsembleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    pub f_c_hz: f64,
    pub kappa_c_hz: f64,
    pub kappa_c1_hz: f64,
    #[serde(rename = "V_cm3")]
    pub v_cm3: f64,
}

/// Spin block. Give either `g_hz` (optionally with `g_s_hz`) or `g_s_hz` with `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_s_hz: Option<f64>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    pub gamma_fwhm_hz: f64,
    pub gamma_p_hz: f64,
    pub gamma_0_hz: f64,
    #[serde(rename = "A_zz_hz")]
    pub a_zz_hz: f64,
    #[serde(default = "default_n_hyperfine")]
    pub n_hyperfine: usize,
    #[serde(default)]
    pub lineshape: LineShape,
}

fn default_n_hyperfine() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub power_dbm: f64,
    #[serde(default)]
    pub delta_hz: f64,
    #[serde(default)]
    pub delta_s_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub cavity: CavityConfig,
    pub spins: SpinConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveConfig>,
}

impl DeviceConfig {
    /// Fitted parameters of the characterized device.
    pub fn paper_device() -> Self {
        DeviceConfig {
            cavity: CavityConfig {
                f_c_hz: 2.87e9,
                kappa_c_hz: 130e3,
                kappa_c1_hz: 125e3,
                v_cm3: 1.7,
            },
            spins: SpinConfig {
                g_hz: Some(190e3),
                g_s_hz: None,
                n: None,
                gamma_fwhm_hz: 330e3,
                gamma_p_hz: 30e3,
                gamma_0_hz: 3e3,
                a_zz_hz: 2.1e6,
                n_hyperfine: 3,
                lineshape: LineShape::Lorentzian,
            },
            drive: Some(DriveConfig {
                power_dbm: -30.0,
                delta_hz: 0.0,
                delta_s_hz: 0.0,
            }),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::invalid(json_error_key(&e), e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_device(&self) -> Result<Device> {
        let c = &self.cavity;
        let cavity = CavityParams::new(
            hz(c.f_c_hz),
            hz(c.kappa_c_hz),
            hz(c.kappa_c1_hz),
            c.v_cm3 * 1e-6,
        )?;
        let s = &self.spins;
        let (g, g_s) = match (s.g_hz, s.g_s_hz, s.n) {
            (Some(g), Some(gs), None) => (hz(g), hz(gs)),
            (Some(g), None, None) => {
                let gs = GsCalibration::reference().g_s_for_volume(cavity.mode_volume);
                (hz(g), gs)
            }
            (None, Some(gs), Some(n)) => {
                if !(n > 0.0) {
                    return Err(Error::invalid("spins.N", format!("must be > 0, got {n}")));
                }
                (hz(gs) * n.sqrt(), hz(gs))
            }
            (Some(_), _, Some(_)) => {
                return Err(Error::invalid(
                    "spins.N",
                    "N is derived from g and g_s; do not give it together with g_hz",
                ))
            }
            (None, Some(_), None) => {
                return Err(Error::invalid("spins.N", "g_s_hz requires N (or give g_hz)"))
            }
            (None, None, _) => {
                return Err(Error::invalid("spins.g_hz", "give g_hz or g_s_hz with N"))
            }
        };
        let spins = SpinEnsembleParams {
            g,
            g_s,
            fwhm: hz(s.gamma_fwhm_hz),
            gamma_0: hz(s.gamma_0_hz),
            gamma_p: hz(s.gamma_p_hz),
            a_zz: hz(s.a_zz_hz),
            n_hyperfine: s.n_hyperfine,
            lineshape: s.lineshape,
        };
        Device::new(cavity, spins)
    }

    pub fn to_drive(&self, device: &Device) -> Result<Option<DriveParams>> {
        match &self.drive {
            None => Ok(None),
            Some(d) => {
                if !d.power_dbm.is_finite() {
                    return Err(Error::invalid("drive.power_dbm", "must be finite"));
                }
                DriveParams::from_power(
                    &device.cavity,
                    dbm_to_watts(d.power_dbm),
                    hz(d.delta_hz),
                    hz(d.delta_s_hz),
                )
                .map(Some)
            }
        }
    }
}

/// Best-effort extraction of the offending key from a serde error message.
pub fn json_error_key(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `", "duplicate field `"] {
        if let Some(i) = msg.find(marker) {
            let rest = &msg[i + marker.len()..];
            if let Some(j) = rest.find('`') {
                return rest[..j].to_string();
            }
        }
    }
    "config".to_string()
}
