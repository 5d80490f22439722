use cqed_core::model::{constants, dbm_to_watts, hz, Device, DriveParams};
use cqed_core::noise::*;
use cqed_core::nonlinear::BranchSelection;
use num_complex::Complex64;
use proptest::prelude::*;

#[test]
fn resonant_fractions_match_oracle() {
    let d = Device::paper_device();
    let f = channel_fractions(&d, 0.0, 0.0, 1.0);
    // κ_s = 4g²/(Γ+γ), D = (κ+κ_s)/2, from raw kHz values
    let (k1, kc, g, tot): (f64, f64, f64, f64) = (125.0, 130.0, 190.0, 363.0);
    let ks = 4.0 * g * g / tot;
    let dd = 0.5 * (k1 + kc + ks);
    assert!((f.port - (1.0 - k1 / dd).powi(2)).abs() < 1e-12);
    assert!((f.cavity - k1 * kc / (dd * dd)).abs() < 1e-12);
    assert!((f.spin - k1 * ks / (dd * dd)).abs() < 1e-12);
    // frozen from the oracle
    assert!((f.port - 0.380_728_552_142_419_6).abs() < 1e-12);
    assert!((f.cavity - 0.152_531_027_842_785_2).abs() < 1e-12);
    assert!((f.spin - 0.466_740_420_014_795_15).abs() < 1e-12);
}

#[test]
fn amplifier_and_johnson_values() {
    assert!((amplifier_temperature(0.8) - 58.656_686_039_049_75).abs() < 1e-6);
    assert!((johnson_psd(407.0, 50.0) - 2.809_620_715e-19).abs() < 1e-30);
    assert_eq!(amplifier_temperature(0.0), 0.0);
}

#[test]
fn reference_environment_baseline_is_system_temperature() {
    let env = NoiseEnvironment::reference();
    let d = Device::paper_device();
    let far = channel_fractions(&d, 0.0, hz(1e9), 1.0);
    let t = thermal_psd(&env, &far, 0.0) / (constants::K_B * env.r_ohm) + env.t_amp();
    assert!((t - SYSTEM_TEMPERATURE).abs() < 1e-3);
}

#[test]
fn bare_cooling_depth_low_power() {
    let d = Device::paper_device();
    let c = cooling_depth(&d, dbm_to_watts(-40.0), &NoiseEnvironment::bare()).unwrap();
    assert!((c - 2.73).abs() <= 0.05, "{c}");
}

#[test]
fn cooling_quenches_above_threshold() {
    let d = Device::paper_device();
    let env = NoiseEnvironment::reference();
    let c: Vec<f64> = [-40.0, -10.0, 0.0, 10.0]
        .iter()
        .map(|&p| cooling_depth(&d, dbm_to_watts(p), &env).unwrap())
        .collect();
    assert!(c.windows(2).all(|w| w[1] < w[0]), "{c:?}");
}

#[test]
fn cooling_independent_of_gain() {
    let d = Device::paper_device();
    let p = dbm_to_watts(-30.0);
    let a = cooling_depth(&d, p, &NoiseEnvironment::reference()).unwrap();
    let b = cooling_depth(&d, p, &NoiseEnvironment::reference().with_power_gain_db(0.0)).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn phase_noise_vanishes_without_carrier_or_reflection() {
    let d = Device::paper_device();
    let env = NoiseEnvironment {
        phase_noise: Some(PhaseNoiseSpectrum::flat(-130.0).unwrap()),
        ..NoiseEnvironment::reference()
    };
    let drive = DriveParams::resonant(&d.cavity, 0.0).unwrap();
    assert_eq!(phase_noise_psd(&env, &d, &drive, Complex64::new(0.5, 0.0), 15e3).unwrap(), 0.0);
    let drive = DriveParams::resonant(&d.cavity, 1e-6).unwrap();
    assert_eq!(phase_noise_psd(&env, &d, &drive, Complex64::new(0.0, 0.0), 15e3).unwrap(), 0.0);
    let a = phase_noise_psd(&env, &d, &drive, Complex64::new(0.5, 0.0), 15e3).unwrap();
    let drive2 = DriveParams::resonant(&d.cavity, 2e-6).unwrap();
    let b = phase_noise_psd(&env, &d, &drive2, Complex64::new(0.5, 0.0), 15e3).unwrap();
    assert!((b / a - 2.0).abs() < 1e-12);
}

#[test]
fn phase_noise_interpolates_log_frequency() {
    let p = PhaseNoiseSpectrum::new(vec![(1e3, -100.0), (1e5, -140.0)]).unwrap();
    assert!((p.dbc_at(1e4) - (-120.0)).abs() < 1e-12);
    assert!(PhaseNoiseSpectrum::new(vec![]).is_err());
    assert!(PhaseNoiseSpectrum::new(vec![(1e3, -100.0), (1e3, -110.0)]).is_err());
}

#[test]
fn spectrum_matches_single_budgets() {
    let d = Device::paper_device();
    let env = NoiseEnvironment::reference();
    let drive = DriveParams::from_dbm(&d.cavity, -20.0, 0.0, 0.0).unwrap();
    let offs = [1e3, 15e3, 100e3];
    let sel = BranchSelection::FollowFromBelow;
    let spec = noise_spectrum(&d, &drive, &env, &offs, sel).unwrap();
    for (b, &o) in spec.iter().zip(&offs) {
        let one = noise_budget(&d, &drive, &env, o, sel).unwrap();
        assert_eq!(b.total, one.total);
    }
}

fn device_strategy() -> impl Strategy<Value = Device> {
    (1e3..1e6f64, 1e3..1e6f64, 0.0..1e6f64, 0.0..2e6f64, 1e2..1e5f64, 0.0..1e4f64).prop_map(
        |(kc, kc1, g, fw, gp, g0)| {
            let mut d = Device::paper_device();
            d.cavity.kappa_c = hz(kc);
            d.cavity.kappa_c1 = hz(kc1);
            d.spins.g = hz(g);
            d.spins.fwhm = hz(fw);
            d.spins.gamma_p = hz(gp);
            d.spins.gamma_0 = hz(g0);
            d
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fractions_sum_to_one(
        d in device_strategy(),
        delta in -1e7..1e7f64,
        ds in -1e7..1e7f64,
        chi in 1.0..1e3f64,
    ) {
        let f = channel_fractions(&d, delta, ds, chi);
        prop_assert!((f.sum() - 1.0).abs() < 1e-12, "sum {}", f.sum());
        prop_assert!(f.port >= 0.0 && f.cavity >= 0.0 && f.spin >= 0.0);
    }

    #[test]
    fn equilibrium_null(
        d in device_strategy(),
        delta in -1e7..1e7f64,
        ds in -1e7..1e7f64,
        chi in 1.0..1e3f64,
        t in 1.0..1e3f64,
    ) {
        let env = NoiseEnvironment { t_port: t, t_cavity: t, ..NoiseEnvironment::reference() };
        let f = channel_fractions(&d, delta, ds, chi);
        let psd = thermal_psd(&env, &f, t);
        prop_assert!((psd / johnson_psd(t, env.r_ohm) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thermal_noise_monotone_in_spin_temperature(
        d in device_strategy(),
        delta in -1e7..1e7f64,
        t1 in 0.0..500.0f64,
        dt in 1e-3..500.0f64,
    ) {
        let env = NoiseEnvironment::reference();
        let f = channel_fractions(&d, delta, 0.0, 1.0);
        prop_assert!(thermal_psd(&env, &f, t1 + dt) >= thermal_psd(&env, &f, t1));
    }
}
