//! Design-space maps: sensitivity against diamond volume and NV density,
//! and against cavity quality factor and single-spin coupling.
//!
//! Each cell builds an ensemble from the density model, optimizes the
//! operating point over microwave power and pump rate, and records η.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CavityConfig, DeviceConfig, DriveConfig, SpinConfig};
use crate::error::{ensure_positive, Error, Result};
use crate::model::{hz, watts_to_dbm, CavityParams, Device, TWO_PI};
use crate::noise::NoiseEnvironment;
use crate::nonlinear::golden_min;
use crate::sensitivity::{optimize_operating_point, OperatingPoint, OptimizerOptions};

/// Carbon atoms per cm³.
pub const CARBON_DENSITY_CM3: f64 = 1.76e23;
/// Fraction of NVs aligned with the bias field.
pub const ORIENTATION_FRACTION: f64 = 0.25;
/// Fraction in one hyperfine sub-ensemble.
pub const HYPERFINE_FRACTION: f64 = 1.0 / 3.0;
/// Inhomogeneous width per ppm of NV density, Hz.
pub const LINEWIDTH_PER_PPM_HZ: f64 = 82.5e3;
/// Pump-limited ρ·V_d at aspect ratio 2.2, cm³·ppm.
pub const POLARIZATION_LIMIT_CM3_PPM: f64 = 0.49;
pub const REFERENCE_ASPECT_RATIO: f64 = 2.2;
/// Reference diamond: 3 × 3 × 0.9 mm at 4 ppm.
pub const REFERENCE_RHO_PPM: f64 = 4.0;
pub const REFERENCE_VD_M3: f64 = 3e-3 * 3e-3 * 0.9e-3;

/// Spins per hyperfine sub-ensemble for density `rho_ppm` in volume `vd_m3`.
pub fn spin_count(rho_ppm: f64, vd_m3: f64) -> f64 {
    rho_ppm * 1e-6 * CARBON_DENSITY_CM3 * vd_m3 * 1e6 * ORIENTATION_FRACTION * HYPERFINE_FRACTION
}

/// Γ = 2π·82.5 kHz·ρ.
pub fn linewidth_from_density(rho_ppm: f64) -> f64 {
    hz(LINEWIDTH_PER_PPM_HZ) * rho_ppm
}

/// Largest density the pump can polarize in `vd_m3` at `aspect_ratio`.
pub fn max_density(vd_m3: f64, aspect_ratio: f64) -> f64 {
    POLARIZATION_LIMIT_CM3_PPM * (aspect_ratio / REFERENCE_ASPECT_RATIO) / (vd_m3 * 1e6)
}

pub fn polarization_feasible(rho_ppm: f64, vd_m3: f64, aspect_ratio: f64) -> bool {
    rho_ppm * vd_m3 * 1e6 <= POLARIZATION_LIMIT_CM3_PPM * (aspect_ratio / REFERENCE_ASPECT_RATIO) * (1.0 + 1e-12)
}

/// Single-spin coupling calibrated on a reference device and scaled with
/// mode volume as 1/√V.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsCalibration {
    /// rad/s at mode volume `v0`.
    pub g_s0: f64,
    /// m³.
    pub v0: f64,
    pub n_ref: f64,
}

impl GsCalibration {
    /// g_s0 = g/√N for the characterized device.
    pub fn reference() -> Self {
        calibrate_gs(hz(190e3), REFERENCE_RHO_PPM, REFERENCE_VD_M3, 1.7e-6)
    }

    pub fn g_s_for_volume(&self, v: f64) -> f64 {
        self.g_s0 * (self.v0 / v).sqrt()
    }

    /// Mode volume at which the coupling equals `g_s`.
    pub fn volume_for_g_s(&self, g_s: f64) -> f64 {
        self.v0 * (self.g_s0 / g_s).powi(2)
    }
}

pub fn calibrate_gs(g: f64, rho_ppm: f64, vd_m3: f64, v: f64) -> GsCalibration {
    let n = spin_count(rho_ppm, vd_m3);
    GsCalibration {
        g_s0: g / n.sqrt(),
        v0: v,
        n_ref: n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiamondDesign {
    pub rho_ppm: f64,
    pub vd_m3: f64,
    pub aspect_ratio: f64,
}

impl DiamondDesign {
    pub fn fill(&self, cavity: &CavityParams) -> f64 {
        self.vd_m3 / cavity.mode_volume
    }

    pub fn feasible(&self) -> bool {
        polarization_feasible(self.rho_ppm, self.vd_m3, self.aspect_ratio)
    }

    /// Density clipped to the polarization constraint.
    pub fn clipped_density(&self) -> f64 {
        self.rho_ppm.min(max_density(self.vd_m3, self.aspect_ratio))
    }
}

/// Device holding diamond `rho_ppm`, `vd_m3` in `cavity`; other spin
/// parameters are taken from `template`.
pub fn device_for_diamond(
    template: &Device,
    cavity: &CavityParams,
    cal: &GsCalibration,
    rho_ppm: f64,
    vd_m3: f64,
) -> Result<Device> {
    ensure_positive("rho_ppm", rho_ppm)?;
    ensure_positive("vd_m3", vd_m3)?;
    if vd_m3 > cavity.mode_volume * (1.0 + 1e-12) {
        return Err(Error::invalid("vd_m3", "diamond volume exceeds the mode volume (fill > 1)"));
    }
    let g_s = cal.g_s_for_volume(cavity.mode_volume);
    let n = spin_count(rho_ppm, vd_m3);
    let mut spins = template.spins;
    spins.g_s = g_s;
    spins.g = g_s * n.sqrt();
    spins.fwhm = linewidth_from_density(rho_ppm);
    Device::new(*cavity, spins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub aspect_ratio: f64,
    pub gamma_p_min: f64,
    /// Pump-rate ceiling, rad/s.
    pub gamma_p_cap: f64,
    pub power_bounds_w: (f64, f64),
    pub optimizer: OptimizerOptions,
    pub env: NoiseEnvironment,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            aspect_ratio: REFERENCE_ASPECT_RATIO,
            gamma_p_min: TWO_PI * 1e3,
            gamma_p_cap: TWO_PI * 30e3,
            power_bounds_w: (1e-12, 10.0),
            optimizer: OptimizerOptions::default(),
            env: NoiseEnvironment::reference(),
        }
    }
}

impl DesignOptions {
    pub fn optimize(&self, device: &Device) -> Result<OperatingPoint> {
        optimize_operating_point(
            device,
            &self.env,
            self.power_bounds_w,
            (self.gamma_p_min, self.gamma_p_cap),
            &self.optimizer,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    /// x = V_d (m³), y = ρ (ppm).
    Diamond,
    /// x = Q, y = g_s (rad/s).
    Cavity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignCell {
    pub x: f64,
    pub y: f64,
    /// T/√Hz.
    pub eta: f64,
    pub feasible: bool,
    pub bistable: bool,
    pub rho_used_ppm: f64,
    pub vd_m3: f64,
    pub power_w: f64,
    pub gamma_p: f64,
}

/// Row-major map: `cells[iy * x_grid.len() + ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMap {
    pub kind: MapKind,
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub cells: Vec<DesignCell>,
}

impl DesignMap {
    pub fn cell(&self, ix: usize, iy: usize) -> &DesignCell {
        &self.cells[iy * self.x_grid.len() + ix]
    }

    pub fn eta(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.eta).collect()
    }

    /// Cells with η ≤ `level`.
    pub fn region(&self, level: f64) -> Vec<bool> {
        self.cells.iter().map(|c| c.eta <= level).collect()
    }

    /// Contour polylines in (x, y) at each level, traced on log η over log axes.
    pub fn contours(&self, levels: &[f64]) -> Vec<Contour> {
        let lx: Vec<f64> = self.x_grid.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = self.y_grid.iter().map(|v| v.ln()).collect();
        let z: Vec<f64> = self.cells.iter().map(|c| c.eta.ln()).collect();
        levels
            .iter()
            .map(|&lev| Contour {
                level: lev,
                polylines: marching_squares(&lx, &ly, &z, lev.ln())
                    .into_iter()
                    .map(|pl| pl.into_iter().map(|(a, b)| (a.exp(), b.exp())).collect())
                    .collect(),
            })
            .collect()
    }
}

/// Whether every lower-level region is contained in each higher one.
pub fn regions_nested(map: &DesignMap, levels: &[f64]) -> bool {
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).all(|w| {
        let (a, b) = (map.region(w[0]), map.region(w[1]));
        a.iter().zip(&b).all(|(&ia, &ib)| !ia || ib)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub level: f64,
    pub polylines: Vec<Vec<(f64, f64)>>,
}

pub const DEFAULT_CONTOUR_LEVELS: [f64; 4] = [2e-15, 10e-15, 100e-15, 1000e-15];

fn check_axis(key: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(key, "grid is empty"));
    }
    for (i, &x) in v.iter().enumerate() {
        ensure_positive(key, x)?;
        if i > 0 && x <= v[i - 1] {
            return Err(Error::invalid(key, "grid must be strictly increasing"));
        }
    }
    Ok(())
}

/// η over diamond volume and density in a fixed cavity.
pub fn sensitivity_map_diamond(
    template: &Device,
    cavity: &CavityParams,
    rho_grid: &[f64],
    vd_grid: &[f64],
    opts: &DesignOptions,
) -> Result<DesignMap> {
    check_axis("rho_grid", rho_grid)?;
    check_axis("vd_grid", vd_grid)?;
    let cal = GsCalibration::reference();
    let idx: Vec<(usize, usize)> = (0..rho_grid.len())
        .flat_map(|iy| (0..vd_grid.len()).map(move |ix| (ix, iy)))
        .collect();
    let cells = idx
        .par_iter()
        .map(|&(ix, iy)| {
            let design = DiamondDesign {
                rho_ppm: rho_grid[iy],
                vd_m3: vd_grid[ix],
                aspect_ratio: opts.aspect_ratio,
            };
            diamond_cell(template, cavity, &cal, &design, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DesignMap {
        kind: MapKind::Diamond,
        x_grid: vd_grid.to_vec(),
        y_grid: rho_grid.to_vec(),
        cells,
    })
}

/// One diamond-map cell; infeasible designs are evaluated at the clipped
/// density.
pub fn diamond_cell(
    template: &Device,
    cavity: &CavityParams,
    cal: &GsCalibration,
    design: &DiamondDesign,
    opts: &DesignOptions,
) -> Result<DesignCell> {
    let rho = design.clipped_density();
    let dev = device_for_diamond(template, cavity, cal, rho, design.vd_m3)?;
    let op = opts.optimize(&dev)?;
    Ok(DesignCell {
        x: design.vd_m3,
        y: design.rho_ppm,
        eta: op.eta,
        feasible: design.feasible(),
        bistable: op.bistable,
        rho_used_ppm: rho,
        vd_m3: design.vd_m3,
        power_w: op.power_w,
        gamma_p: op.gamma_p,
    })
}

/// Best design at unit filling in `cavity`, optimizing the density up to
/// the polarization limit.
pub fn best_density(
    template: &Device,
    cavity: &CavityParams,
    cal: &GsCalibration,
    opts: &DesignOptions,
) -> Result<(DesignCell, OperatingPoint)> {
    let vd = cavity.mode_volume;
    let rho_max = max_density(vd, opts.aspect_ratio);
    let eval = |lr: f64| -> f64 {
        device_for_diamond(template, cavity, cal, lr.exp(), vd)
            .and_then(|d| opts.optimize(&d))
            .map(|o| o.eta.ln())
            .unwrap_or(f64::INFINITY)
    };
    let (lo, hi) = ((rho_max * 1e-3).ln(), rho_max.ln());
    let mut lr = golden_min(eval, lo, hi, 1e-4);
    if eval(hi) <= eval(lr) {
        lr = hi;
    }
    let rho = lr.exp().min(rho_max);
    let dev = device_for_diamond(template, cavity, cal, rho, vd)?;
    let op = opts.optimize(&dev)?;
    Ok((
        DesignCell {
            x: cavity.q_unloaded(),
            y: dev.spins.g_s,
            eta: op.eta,
            feasible: true,
            bistable: op.bistable,
            rho_used_ppm: rho,
            vd_m3: vd,
            power_w: op.power_w,
            gamma_p: op.gamma_p,
        },
        op,
    ))
}

/// η over unloaded Q and single-spin coupling at unit filling. The mode
/// volume follows from the coupling; the coupling ratio κ_c1/κ_c is kept.
pub fn sensitivity_map_cavity(
    template: &Device,
    q_grid: &[f64],
    gs_grid: &[f64],
    opts: &DesignOptions,
) -> Result<DesignMap> {
    check_axis("q_grid", q_grid)?;
    check_axis("gs_grid", gs_grid)?;
    let cal = GsCalibration::reference();
    let idx: Vec<(usize, usize)> = (0..gs_grid.len())
        .flat_map(|iy| (0..q_grid.len()).map(move |ix| (ix, iy)))
        .collect();
    let cells = idx
        .par_iter()
        .map(|&(ix, iy)| {
            let v = cal.volume_for_g_s(gs_grid[iy]);
            let mut cav = template.cavity.with_q_unloaded(q_grid[ix])?;
            cav.mode_volume = v;
            let (mut cell, _) = best_density(template, &cav, &cal, opts)?;
            cell.x = q_grid[ix];
            cell.y = gs_grid[iy];
            Ok(cell)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DesignMap {
        kind: MapKind::Cavity,
        x_grid: q_grid.to_vec(),
        y_grid: gs_grid.to_vec(),
        cells,
    })
}

/// Best feasible diamond filling the given cavity: density optimized up to
/// the polarization boundary.
pub fn optimal_diamond(template: &Device, opts: &DesignOptions) -> Result<(DesignCell, OperatingPoint)> {
    let cav = template.cavity;
    let (mut cell, op) = best_density(template, &cav, &GsCalibration::reference(), opts)?;
    cell.x = cell.vd_m3;
    cell.y = cell.rho_used_ppm;
    Ok((cell, op))
}

/// Configuration for the optimal diamond, driven at its optimal power.
pub fn optimal_diamond_config(opts: &DesignOptions) -> Result<DeviceConfig> {
    let base = DeviceConfig::paper_device();
    let template = base.to_device()?;
    let (cell, op) = optimal_diamond(&template, opts)?;
    let dev = device_for_diamond(
        &template,
        &template.cavity,
        &GsCalibration::reference(),
        cell.rho_used_ppm,
        cell.vd_m3,
    )?;
    Ok(DeviceConfig {
        cavity: CavityConfig { ..base.cavity },
        spins: SpinConfig {
            g_hz: Some(dev.spins.g / TWO_PI),
            g_s_hz: Some(dev.spins.g_s / TWO_PI),
            n: None,
            gamma_fwhm_hz: dev.spins.fwhm / TWO_PI,
            gamma_p_hz: op.gamma_p / TWO_PI,
            ..base.spins
        },
        drive: Some(DriveConfig {
            power_dbm: watts_to_dbm(op.power_w),
            delta_hz: 0.0,
            delta_s_hz: 0.0,
        }),
    })
}

/// Edge identifier: (ix, iy, horizontal?) with the lower-left corner.
type EdgeId = (usize, usize, bool);

/// Isolines of `z` (row-major, `z[iy * nx + ix]`) at `level`.
pub fn marching_squares(x: &[f64], y: &[f64], z: &[f64], level: f64) -> Vec<Vec<(f64, f64)>> {
    let (nx, ny) = (x.len(), y.len());
    if nx < 2 || ny < 2 {
        return Vec::new();
    }
    let at = |ix: usize, iy: usize| z[iy * nx + ix];
    let point = |e: EdgeId| -> (f64, f64) {
        let (ix, iy, horiz) = e;
        let (x0, y0, z0) = (x[ix], y[iy], at(ix, iy));
        let (x1, y1, z1) = if horiz { (x[ix + 1], y[iy], at(ix + 1, iy)) } else { (x[ix], y[iy + 1], at(ix, iy + 1)) };
        let t = if z1 != z0 { ((level - z0) / (z1 - z0)).clamp(0.0, 1.0) } else { 0.5 };
        (x0 + t * (x1 - x0), y0 + t * (y1 - y0))
    };
    let mut segs: Vec<(EdgeId, EdgeId)> = Vec::new();
    for iy in 0..ny - 1 {
        for ix in 0..nx - 1 {
            let v = [at(ix, iy), at(ix + 1, iy), at(ix + 1, iy + 1), at(ix, iy + 1)];
            if v.iter().any(|c| !c.is_finite()) {
                continue;
            }
            let b: Vec<bool> = v.iter().map(|&c| c > level).collect();
            let case = (b[0] as u8) | (b[1] as u8) << 1 | (b[2] as u8) << 2 | (b[3] as u8) << 3;
            let bottom = (ix, iy, true);
            let right = (ix + 1, iy, false);
            let top = (ix, iy + 1, true);
            let left = (ix, iy, false);
            let center_high = 0.25 * v.iter().sum::<f64>() > level;
            match case {
                0 | 15 => {}
                1 | 14 => segs.push((left, bottom)),
                2 | 13 => segs.push((bottom, right)),
                3 | 12 => segs.push((left, right)),
                4 | 11 => segs.push((right, top)),
                6 | 9 => segs.push((bottom, top)),
                7 | 8 => segs.push((left, top)),
                5 => {
                    if center_high {
                        segs.push((left, top));
                        segs.push((bottom, right));
                    } else {
                        segs.push((left, bottom));
                        segs.push((right, top));
                    }
                }
                10 => {
                    if center_high {
                        segs.push((left, bottom));
                        segs.push((right, top));
                    } else {
                        segs.push((left, top));
                        segs.push((bottom, right));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    join_segments(segs).into_iter().map(|chain| chain.into_iter().map(point).collect()).collect()
}

fn join_segments(segs: Vec<(EdgeId, EdgeId)>) -> Vec<Vec<EdgeId>> {
    use std::collections::BTreeMap;
    let mut adj: BTreeMap<EdgeId, Vec<usize>> = BTreeMap::new();
    for (k, &(a, b)) in segs.iter().enumerate() {
        adj.entry(a).or_default().push(k);
        adj.entry(b).or_default().push(k);
    }
    let mut used = vec![false; segs.len()];
    let mut out = Vec::new();
    let walk = |start: EdgeId, first: usize, used: &mut Vec<bool>| -> Vec<EdgeId> {
        let mut chain = vec![start];
        let mut cur = start;
        let mut seg = Some(first);
        while let Some(k) = seg {
            used[k] = true;
            let (a, b) = segs[k];
            cur = if a == cur { b } else { a };
            chain.push(cur);
            seg = adj[&cur].iter().copied().find(|&j| !used[j]);
        }
        chain
    };
    // Open chains start at edges touched by a single segment.
    let starts: Vec<EdgeId> = adj.iter().filter(|(_, v)| v.len() == 1).map(|(e, _)| *e).collect();
    for e in starts {
        if let Some(&k) = adj[&e].iter().find(|&&k| !used[k]) {
            out.push(walk(e, k, &mut used));
        }
    }
    for k in 0..segs.len() {
        if !used[k] {
            out.push(walk(segs[k].0, k, &mut used));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_spin_count() {
        let n = spin_count(4.0, REFERENCE_VD_M3);
        assert!((n * 12.0 / 5.70e15 - 1.0).abs() < 2e-3);
        assert!((n / 4.75e14 - 1.0).abs() < 2e-3);
    }

    #[test]
    fn linewidth_law() {
        assert!((linewidth_from_density(4.0) - hz(330e3)).abs() < 1e-6);
        assert!((linewidth_from_density(1.0) - hz(82.5e3)).abs() < 1e-9);
    }

    #[test]
    fn feasibility() {
        assert!(polarization_feasible(4.0, 8.1e-9, 2.2));
        assert!(polarization_feasible(0.49, 1e-6, 2.2));
        assert!(!polarization_feasible(1.0, 1.7e-6, 2.2));
        assert!(polarization_feasible(1.0, 1.7e-6, 2.2 * 1.7 / 0.49));
    }

    #[test]
    fn coupling_scalings() {
        let cal = GsCalibration::reference();
        assert!((cal.g_s_for_volume(cal.v0 / 2.0) / cal.g_s0 - 2f64.sqrt()).abs() < 1e-12);
        let t = Device::paper_device();
        let a = device_for_diamond(&t, &t.cavity, &cal, 4.0, 8.1e-9).unwrap();
        let b = device_for_diamond(&t, &t.cavity, &cal, 4.0, 16.2e-9).unwrap();
        assert!((b.spins.g / a.spins.g - 2f64.sqrt()).abs() < 1e-12);
        assert!((a.spins.g / hz(190e3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overfilled_cavity_rejected() {
        let t = Device::paper_device();
        assert!(device_for_diamond(&t, &t.cavity, &GsCalibration::reference(), 1.0, 2e-6).is_err());
    }

    #[test]
    fn marching_squares_circle() {
        let g: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let z: Vec<f64> = g.iter().flat_map(|&y| g.iter().map(move |&x| x * x + y * y)).collect();
        let lines = marching_squares(&g, &g, &z, 1.0);
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        assert_eq!(l.first(), l.last());
        for &(x, y) in l {
            assert!(((x * x + y * y).sqrt() - 1.0).abs() < 0.01);
        }
    }
}
