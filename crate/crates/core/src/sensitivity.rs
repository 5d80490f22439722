//! Signal transduction, field conversion, sensitivity and operating-point
//! optimization.
//!
//! The signal is the probe voltage times the resonant quadrature slope,
//! `S = √(ħωR)·β_in·|∂Im r/∂ω_s|`, expressed per ordinary Hz of spin shift.
//! Signal and noise are both referred to the amplifier output, so the chain
//! gain cancels in `η = √L/(S·A)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::model::{constants, dbm_to_watts, power_to_flux, Device, DriveParams, TWO_PI};
use crate::noise::{noise_budget_for, NoiseEnvironment, COOLING_OFFSET_HZ};
use crate::nonlinear::{
    golden_min, quadrature_slope, select_branch, solve_resonant, stable_count, BranchSelection, SaturationModel,
    SpinQuadrature, SteadyStateSolution, SteadyStateSolver,
};

/// Spin-frequency shift per unit field along [100].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConversion {
    /// Hz/T.
    pub a_hz: f64,
}

impl Default for FieldConversion {
    fn default() -> Self {
        FieldConversion {
            a_hz: constants::GAMMA_E / 3f64.sqrt(),
        }
    }
}

impl FieldConversion {
    pub fn field_to_frequency(&self, b_t: f64) -> f64 {
        self.a_hz * b_t
    }

    pub fn frequency_to_field(&self, f_hz: f64) -> f64 {
        f_hz / self.a_hz
    }
}

/// Probe voltage √(ħωR)·β_in at the device plane.
pub fn probe_voltage(device: &Device, drive: &DriveParams, r_ohm: f64) -> f64 {
    let omega = device.cavity.omega_c + drive.delta;
    (constants::HBAR * omega * r_ohm).sqrt() * drive.beta_in
}

/// Device-plane signal in V per Hz of spin shift for a resonant solution.
pub fn signal(device: &Device, drive: &DriveParams, r_ohm: f64, sol: &SteadyStateSolution) -> f64 {
    probe_voltage(device, drive, r_ohm) * TWO_PI * quadrature_slope(device, sol)
}

/// Resonant device-plane signal at power `p_w`.
pub fn signal_at(device: &Device, p_w: f64, r_ohm: f64, sel: Option<BranchSelection>) -> Result<f64> {
    let drive = DriveParams::resonant(&device.cavity, p_w)?;
    let sols = solve_resonant(device, drive.flux())?;
    let sol = crate::nonlinear::select_branch_strict(&sols, sel)?;
    Ok(signal(device, &drive, r_ohm, sol))
}

/// Same quantity from a central difference of Im r in the spin detuning,
/// through the general self-consistent solver on the resonant line.
pub fn signal_finite_difference(device: &Device, p_w: f64, r_ohm: f64, step: f64) -> Result<f64> {
    let single = device.single_line();
    let solver = SteadyStateSolver::new(SaturationModel::Effective, SpinQuadrature::Analytic);
    let drive = DriveParams::resonant(&device.cavity, p_w)?;
    let im_r = |ds: f64| -> Result<f64> {
        let d = DriveParams { delta_s: ds, ..drive };
        let sols = solver.solve(&single, &d)?;
        let s = select_branch(&sols, BranchSelection::FollowFromBelow)
            .ok_or_else(|| Error::NoRoot("no stable root".into()))?;
        Ok(s.r.im)
    };
    let slope = (im_r(step)? - im_r(-step)?) / (2.0 * step);
    Ok(probe_voltage(device, &drive, r_ohm) * TWO_PI * slope.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub power_w: f64,
    pub gamma_p: f64,
    pub delta: f64,
    pub delta_s: f64,
    /// Output-plane signal, V/Hz.
    pub s: f64,
    /// Output-plane noise at the evaluation offset, V²/Hz.
    pub l: f64,
    /// T/√Hz.
    pub eta: f64,
    pub alpha_sq: f64,
    pub chi: f64,
    pub gain: f64,
    pub bistable: bool,
    pub on_boundary: bool,
}

impl OperatingPoint {
    pub fn device_plane_signal(&self) -> f64 {
        self.s / self.gain.sqrt()
    }
}

pub fn sensitivity_at(op: &OperatingPoint, conv: &FieldConversion) -> Result<f64> {
    if !(op.s > 0.0) {
        return Err(Error::ZeroSignal);
    }
    Ok(op.l.sqrt() / (op.s * conv.a_hz))
}

/// Resonant operating point at power `p_w` and pump rate `gamma_p`.
pub fn evaluate_operating_point(
    device: &Device,
    env: &NoiseEnvironment,
    p_w: f64,
    gamma_p: f64,
    sel: BranchSelection,
) -> Result<OperatingPoint> {
    let dev = device.with_gamma_p(gamma_p);
    let drive = DriveParams::resonant(&dev.cavity, p_w)?;
    let sols = solve_resonant(&dev, drive.flux())?;
    let sol = select_branch(&sols, sel).ok_or_else(|| Error::NoRoot("no stable root".into()))?;
    let gain = env.gain();
    let s = gain.sqrt() * signal(&dev, &drive, env.r_ohm, sol);
    let l = noise_budget_for(&dev, &drive, env, sol, COOLING_OFFSET_HZ)?.total;
    let mut op = OperatingPoint {
        power_w: p_w,
        gamma_p,
        delta: 0.0,
        delta_s: 0.0,
        s,
        l,
        eta: f64::NAN,
        alpha_sq: sol.alpha_sq,
        chi: sol.chi,
        gain,
        bistable: stable_count(&sols) > 1,
        on_boundary: false,
    };
    op.eta = sensitivity_at(&op, &FieldConversion::default())?;
    Ok(op)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub grid_p: usize,
    pub grid_gamma_p: usize,
    pub refine_passes: usize,
    pub sel: BranchSelection,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            grid_p: 50,
            grid_gamma_p: 50,
            refine_passes: 2,
            sel: BranchSelection::FollowFromBelow,
        }
    }
}

pub fn default_power_bounds() -> (f64, f64) {
    (dbm_to_watts(-50.0), dbm_to_watts(0.0))
}

pub fn default_gamma_p_bounds() -> (f64, f64) {
    (TWO_PI * 1e3, TWO_PI * 30e3)
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 || lo == hi {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Minimize η over power and pump rate: log grid, then golden-section
/// refinement along each axis.
pub fn optimize_operating_point(
    device: &Device,
    env: &NoiseEnvironment,
    p_bounds: (f64, f64),
    gamma_p_bounds: (f64, f64),
    opts: &OptimizerOptions,
) -> Result<OperatingPoint> {
    env.validate()?;
    for (k, (lo, hi)) in [("power_bounds", p_bounds), ("gamma_p_bounds", gamma_p_bounds)] {
        ensure_positive(k, lo)?;
        ensure_positive(k, hi)?;
        if !(hi >= lo) || !hi.is_finite() {
            return Err(Error::invalid(k, "upper bound must be finite and ≥ lower bound"));
        }
    }
    let ps = log_grid(p_bounds.0, p_bounds.1, opts.grid_p);
    let gs = log_grid(gamma_p_bounds.0, gamma_p_bounds.1, opts.grid_gamma_p);
    let cells: Vec<(usize, usize)> = (0..gs.len()).flat_map(|j| (0..ps.len()).map(move |i| (i, j))).collect();
    let etas: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            evaluate_operating_point(device, env, ps[i], gs[j], opts.sel)
                .map(|o| o.eta)
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let best = (0..etas.len())
        .min_by(|&a, &b| etas[a].total_cmp(&etas[b]))
        .ok_or_else(|| Error::invalid("grid", "empty optimization grid"))?;
    if !etas[best].is_finite() {
        return Err(Error::NoRoot("no valid operating point on the grid".into()));
    }
    let (bi, bj) = cells[best];
    let (mut lp, mut lg) = (ps[bi].ln(), gs[bj].ln());
    let eta = |lp: f64, lg: f64| -> f64 {
        evaluate_operating_point(device, env, lp.exp(), lg.exp(), opts.sel)
            .map(|o| o.eta)
            .unwrap_or(f64::INFINITY)
    };
    let step = |v: &[f64]| if v.len() > 1 { (v[1] / v[0]).ln() } else { 0.0 };
    let (dp, dg) = (step(&ps), step(&gs));
    let (lp_lo, lp_hi) = (p_bounds.0.ln(), p_bounds.1.ln());
    let (lg_lo, lg_hi) = (gamma_p_bounds.0.ln(), gamma_p_bounds.1.ln());
    for _ in 0..opts.refine_passes {
        if dp > 0.0 {
            let cur = eta(lp, lg);
            let cand = golden_min(|x| eta(x, lg), (lp - dp).max(lp_lo), (lp + dp).min(lp_hi), 1e-6);
            if eta(cand, lg) <= cur {
                lp = cand;
            }
        }
        if dg > 0.0 {
            let cur = eta(lp, lg);
            let cand = golden_min(|x| eta(lp, x), (lg - dg).max(lg_lo), (lg + dg).min(lg_hi), 1e-6);
            if eta(lp, cand) <= cur {
                lg = cand;
            }
        }
    }
    let mut op = evaluate_operating_point(device, env, lp.exp(), lg.exp(), opts.sel)?;
    let near = |x: f64, b: f64, d: f64| d > 0.0 && (x - b).abs() < 1e-3 * d;
    op.on_boundary = near(lp, lp_lo, dp) || near(lp, lp_hi, dp) || near(lg, lg_lo, dg) || near(lg, lg_hi, dg);
    if op.on_boundary {
        log::warn!("optimum lies on the search boundary");
    }
    Ok(op)
}

/// Power maximizing the device-plane signal at fixed pump rate.
pub fn signal_peak(device: &Device, r_ohm: f64, p_bounds: (f64, f64)) -> Result<(f64, f64)> {
    let s = |lp: f64| {
        signal_at(device, lp.exp(), r_ohm, Some(BranchSelection::FollowFromBelow)).unwrap_or(0.0)
    };
    let grid = log_grid(p_bounds.0, p_bounds.1, 201);
    let vals: Vec<f64> = grid.par_iter().map(|p| s(p.ln())).collect();
    let i = (0..vals.len()).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let d = (grid[1] / grid[0]).ln();
    let lo = (grid[i].ln() - d).max(p_bounds.0.ln());
    let hi = (grid[i].ln() + d).min(p_bounds.1.ln());
    let lp = golden_min(|x| -s(x), lo, hi, 1e-9);
    Ok((lp.exp(), s(lp)))
}

/// Empirical low-frequency magnetic background, (Hz, T/√Hz) pairs
/// interpolated log-log and extrapolated along the end slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbientFieldSpectrum {
    points: Vec<(f64, f64)>,
}

impl AmbientFieldSpectrum {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("ambient", "needs at least two points"));
        }
        for (i, &(f, b)) in points.iter().enumerate() {
            ensure_positive("ambient.f_hz", f)?;
            ensure_positive("ambient.t_sqrthz", b)?;
            if i > 0 && f <= points[i - 1].0 {
                return Err(Error::invalid("ambient", "frequencies must be strictly increasing"));
            }
        }
        Ok(AmbientFieldSpectrum { points })
    }

    /// Laboratory background with ≈ 2 pT/√Hz total at 15 Hz.
    pub fn laboratory() -> Self {
        AmbientFieldSpectrum {
            points: vec![
                (1.0, 6e-12),
                (15.0, 1.91e-12),
                (100.0, 4e-13),
                (1e3, 2e-14),
                (3e3, 1e-15),
            ],
        }
    }

    pub fn at(&self, f_hz: f64) -> f64 {
        let p = &self.points;
        let n = p.len();
        let i = if f_hz <= p[0].0 {
            0
        } else if f_hz >= p[n - 1].0 {
            n - 2
        } else {
            p.windows(2).position(|w| f_hz <= w[1].0).unwrap()
        };
        let (x0, y0) = (p[i].0.ln(), p[i].1.ln());
        let (x1, y1) = (p[i + 1].0.ln(), p[i + 1].1.ln());
        (y0 + (y1 - y0) * (f_hz.max(f64::MIN_POSITIVE).ln() - x0) / (x1 - x0)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub f_hz: f64,
    pub eta: f64,
    pub eta_noise: f64,
    pub eta_ambient: f64,
}

/// η(f) = √(L(f) + (S·A·B_amb(f))²)/(S·A) at a fixed operating point.
pub fn broadband_spectrum(
    device: &Device,
    op: &OperatingPoint,
    env: &NoiseEnvironment,
    ambient: Option<&AmbientFieldSpectrum>,
    f_grid: &[f64],
    sel: BranchSelection,
) -> Result<Vec<SpectrumPoint>> {
    let dev = device.with_gamma_p(op.gamma_p);
    let drive = DriveParams::resonant(&dev.cavity, op.power_w)?;
    let sols = solve_resonant(&dev, power_to_flux(op.power_w, dev.cavity.omega_c)?)?;
    let sol = *select_branch(&sols, sel).ok_or_else(|| Error::NoRoot("no stable root".into()))?;
    let conv = FieldConversion::default();
    let sa = op.s * conv.a_hz;
    if !(sa > 0.0) {
        return Err(Error::ZeroSignal);
    }
    f_grid
        .par_iter()
        .map(|&f| {
            ensure_positive("f_hz", f)?;
            let l = noise_budget_for(&dev, &drive, env, &sol, f)?.total;
            let eta_noise = l.sqrt() / sa;
            let eta_ambient = ambient.map(|a| a.at(f)).unwrap_or(0.0);
            Ok(SpectrumPoint {
                f_hz: f,
                eta: eta_noise.hypot(eta_ambient),
                eta_noise,
                eta_ambient,
            })
        })
        .collect()
}
