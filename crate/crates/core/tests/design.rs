use cqed_core::design::*;
use cqed_core::model::{hz, Device};
use cqed_core::sensitivity::OptimizerOptions;
use proptest::prelude::*;

fn fast_opts() -> DesignOptions {
    DesignOptions {
        optimizer: OptimizerOptions { grid_p: 16, grid_gamma_p: 4, refine_passes: 1, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn reference_spin_count_and_calibration() {
    // 4 ppm · 1.76e23 cm⁻³ · 0.0081 cm³ / 12
    let n = 4e-6 * 1.76e23 * 0.0081 / 12.0;
    assert!((spin_count(REFERENCE_RHO_PPM, REFERENCE_VD_M3) / n - 1.0).abs() < 1e-12);
    let cal = GsCalibration::reference();
    assert!((cal.g_s0 - hz(190e3) / n.sqrt()).abs() < 1e-12 * cal.g_s0);
    assert!((cal.volume_for_g_s(cal.g_s_for_volume(3e-7)) / 3e-7 - 1.0).abs() < 1e-12);
    assert!((linewidth_from_density(4.0) - hz(330e3)).abs() < 1e-6);
}

#[test]
fn reference_diamond_rebuilds_preset() {
    let t = Device::paper_device();
    let d = device_for_diamond(&t, &t.cavity, &GsCalibration::reference(), 4.0, REFERENCE_VD_M3).unwrap();
    assert!((d.spins.g / t.spins.g - 1.0).abs() < 1e-12);
    assert!((d.spins.fwhm / t.spins.fwhm - 1.0).abs() < 1e-12);
    assert!(polarization_feasible(4.0, REFERENCE_VD_M3, REFERENCE_ASPECT_RATIO));
}

#[test]
fn overfilled_cavity_rejected() {
    let t = Device::paper_device();
    let v = t.cavity.mode_volume * 1.01;
    assert!(device_for_diamond(&t, &t.cavity, &GsCalibration::reference(), 1.0, v).is_err());
}

#[test]
fn current_device_cell_matches_direct_optimum() {
    let t = Device::paper_device();
    let opts = fast_opts();
    let design = DiamondDesign { rho_ppm: 4.0, vd_m3: REFERENCE_VD_M3, aspect_ratio: REFERENCE_ASPECT_RATIO };
    let cell = diamond_cell(&t, &t.cavity, &GsCalibration::reference(), &design, &opts).unwrap();
    let direct = opts.optimize(&t).unwrap();
    assert!((cell.eta / direct.eta - 1.0).abs() < 1e-9);
    assert!(cell.feasible);
}

#[test]
fn infeasible_cells_use_clipped_density() {
    let t = Device::paper_device();
    let vd = 1e-6;
    let design = DiamondDesign { rho_ppm: 10.0, vd_m3: vd, aspect_ratio: REFERENCE_ASPECT_RATIO };
    assert!(!design.feasible());
    let rho = design.clipped_density();
    assert!((rho - max_density(vd, REFERENCE_ASPECT_RATIO)).abs() < 1e-15);
    assert!(polarization_feasible(rho, vd, REFERENCE_ASPECT_RATIO));
    let cell = diamond_cell(&t, &t.cavity, &GsCalibration::reference(), &design, &fast_opts()).unwrap();
    assert!(!cell.feasible);
    assert_eq!(cell.rho_used_ppm, rho);
}

#[test]
fn small_diamond_map_nests_and_is_deterministic() {
    let t = Device::paper_device();
    let opts = fast_opts();
    let rho = [0.1, 1.0, 4.0, 10.0];
    let vd = [1e-9, REFERENCE_VD_M3, 1e-7, 1e-6];
    let a = sensitivity_map_diamond(&t, &t.cavity, &rho, &vd, &opts).unwrap();
    let b = sensitivity_map_diamond(&t, &t.cavity, &rho, &vd, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cells.len(), 16);
    let cur = a.cell(1, 2);
    assert_eq!((cur.vd_m3, cur.y), (REFERENCE_VD_M3, 4.0));
    let etas = a.eta();
    let lo = etas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = etas.iter().cloned().fold(0.0, f64::max);
    let levels = [lo * 1.5, (lo * hi).sqrt(), hi * 0.7];
    assert!(regions_nested(&a, &levels));
    let contours = a.contours(&levels);
    assert_eq!(contours.len(), 3);
    assert!(contours.iter().all(|c| !c.polylines.is_empty()));
}

#[test]
fn bad_axes_rejected() {
    let t = Device::paper_device();
    let o = fast_opts();
    assert!(sensitivity_map_diamond(&t, &t.cavity, &[], &[1e-9], &o).is_err());
    assert!(sensitivity_map_diamond(&t, &t.cavity, &[1.0, 0.5], &[1e-9], &o).is_err());
    assert!(sensitivity_map_cavity(&t, &[1e4], &[-1.0], &o).is_err());
}

#[test]
fn marching_squares_traces_circle() {
    let g: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
    let z: Vec<f64> = g.iter().flat_map(|&y| g.iter().map(move |&x| x * x + y * y)).collect();
    let lines = marching_squares(&g, &g, &z, 1.0);
    assert_eq!(lines.len(), 1);
    let pl = &lines[0];
    assert!(pl.len() > 20);
    assert_eq!(pl.first(), pl.last());
    for &(x, y) in pl {
        assert!(((x * x + y * y).sqrt() - 1.0).abs() < 0.02);
    }
}

proptest! {
    #[test]
    fn clipped_density_always_feasible(rho in 1e-3..1e3f64, vd in 1e-10..1e-5f64, ar in 0.5..10.0f64) {
        let d = DiamondDesign { rho_ppm: rho, vd_m3: vd, aspect_ratio: ar };
        prop_assert!(polarization_feasible(d.clipped_density(), vd, ar));
        prop_assert!(d.clipped_density() <= rho);
        prop_assert_eq!(d.feasible(), d.clipped_density() == rho || polarization_feasible(rho, vd, ar));
    }

    #[test]
    fn coupling_scales_inverse_root_volume(v in 1e-9..1e-4f64, k in 1.1..100.0f64) {
        let c = GsCalibration::reference();
        let r = c.g_s_for_volume(v) / c.g_s_for_volume(v * k);
        prop_assert!((r - k.sqrt()).abs() < 1e-12 * k.sqrt());
    }
}
