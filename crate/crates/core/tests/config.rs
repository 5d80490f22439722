use cqed_core::config::*;
use cqed_core::distribution::LineShape;
use cqed_core::model::{hz, Device};
use cqed_core::Error;
use proptest::prelude::*;

fn key_of(e: Error) -> String {
    match e {
        Error::InvalidParameter { key, .. } => key,
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn preset_matches_device_preset() {
    let d = DeviceConfig::paper_device().to_device().unwrap();
    assert_eq!(d, Device::paper_device());
    assert!((d.cavity.kappa() - hz(255e3)).abs() < 1e-9);
    assert_eq!(d.spins.n_hyperfine, 3);
}

#[test]
fn unknown_key_names_the_key() {
    let mut v: serde_json::Value = serde_json::from_str(&DeviceConfig::paper_device().to_json()).unwrap();
    v["cavity"]["q_factor"] = 1.0.into();
    let e = DeviceConfig::from_json(&v.to_string()).unwrap_err();
    assert_eq!(key_of(e), "q_factor");
}

#[test]
fn missing_key_names_the_key() {
    let mut v: serde_json::Value = serde_json::from_str(&DeviceConfig::paper_device().to_json()).unwrap();
    v["spins"].as_object_mut().unwrap().remove("gamma_p_hz");
    let e = DeviceConfig::from_json(&v.to_string()).unwrap_err();
    assert_eq!(key_of(e), "gamma_p_hz");
}

#[test]
fn negative_values_rejected_by_key() {
    let mut c = DeviceConfig::paper_device();
    c.cavity.kappa_c_hz = -1.0;
    assert_eq!(key_of(c.to_device().unwrap_err()), "cavity.kappa_c_hz");
    let mut c = DeviceConfig::paper_device();
    c.spins.gamma_p_hz = 0.0;
    c.spins.gamma_0_hz = 0.0;
    assert_eq!(key_of(c.to_device().unwrap_err()), "spins.gamma_p_hz");
}

#[test]
fn coupling_from_spin_count() {
    let mut c = DeviceConfig::paper_device();
    c.spins.g_hz = None;
    c.spins.g_s_hz = Some(0.01);
    c.spins.n = Some(4e14);
    let d = c.to_device().unwrap();
    assert!((d.spins.g - hz(0.01 * 2e7)).abs() < 1e-6);
    c.spins.g_hz = Some(190e3);
    assert_eq!(key_of(c.to_device().unwrap_err()), "spins.N");
}

fn config_strategy() -> impl Strategy<Value = DeviceConfig> {
    (
        (1e8..1e11f64, 1e2..1e7f64, 1e2..1e7f64, 1e-3..1e3f64),
        (1e2..1e7f64, 1e-3..1e2f64, 0.0..1e7f64, 1e2..1e6f64, 0.0..1e4f64, 0.0..1e8f64, 1usize..5, any::<bool>()),
        proptest::option::of((-80.0..20.0f64, -1e7..1e7f64, -1e7..1e7f64)),
    )
        .prop_map(|((fc, kc, kc1, v), (g, gs, fw, gp, g0, azz, nh, gauss), drive)| DeviceConfig {
            cavity: CavityConfig { f_c_hz: fc, kappa_c_hz: kc, kappa_c1_hz: kc1, v_cm3: v },
            spins: SpinConfig {
                g_hz: Some(g),
                g_s_hz: Some(gs),
                n: None,
                gamma_fwhm_hz: fw,
                gamma_p_hz: gp,
                gamma_0_hz: g0,
                a_zz_hz: azz,
                n_hyperfine: nh,
                lineshape: if gauss { LineShape::Gaussian } else { LineShape::Lorentzian },
            },
            drive: drive.map(|(p, d, ds)| DriveConfig { power_dbm: p, delta_hz: d, delta_s_hz: ds }),
        })
}

proptest! {
    #[test]
    fn json_round_trip_is_exact(c in config_strategy()) {
        let back = DeviceConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_device().unwrap(), c.to_device().unwrap());
    }
}
