//! Saturable steady state of the driven cavity–spin system.
//!
//! Two saturation models are provided:
//!
//! * [`SaturationModel::Effective`] replaces each spin by a Lorentzian of
//!   width γχ weighted by 1/χ, so a Lorentzian line of FWHM Γ becomes
//!   `g_eff² / (Γ_1/2 + iδ)` with `Γ_1 = Γ + γχ` and `g_eff² = g²/χ`. At
//!   resonance this is the closed-form occupancy equation with the effective
//!   cooperativity `C_α`. It is the model used for signal, noise and design.
//! * [`SaturationModel::Bloch`] uses the exact steady state of the equations
//!   of motion: inversion `w_j` from [`spin_inversion`] over a
//!   `γ/2 + iΔ_j` denominator. Time integration converges to these roots.
//!
//! Both reduce to the linear response as |α|² → 0 and coincide at
//! resonance when γ_p = γ.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::distribution::{quadrature_bins, replicate_over_lines, InhomogeneousDistribution, LineShape, SpinBin};
use crate::error::{Error, Result};
use crate::linear::{check_grid, reflection_from_self_energy, ReflectionPoint};
use crate::model::{constants, flux_to_power, power_to_flux, Device, DriveParams};

/// Bins used when no closed form is available.
pub const DEFAULT_QUADRATURE_BINS: usize = 2001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaturationModel {
    Effective,
    Bloch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpinQuadrature {
    /// Closed-form convolution with a Lorentzian line.
    Analytic,
    /// Ensemble-wide bins: offsets from ω_s (hyperfine offsets included),
    /// weights summing to one over the whole ensemble.
    Bins(Vec<SpinBin>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Lower,
    MiddleUnstable,
    Upper,
}

impl Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Branch::Lower => "lower",
            Branch::MiddleUnstable => "middle-unstable",
            Branch::Upper => "upper",
        }
    }
}

/// Which stable root to report when several coexist.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchSelection {
    /// Adiabatic up-sweep from zero power: the lowest stable root.
    #[default]
    FollowFromBelow,
    /// Down-sweep from high power: the highest stable root.
    FollowFromAbove,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateSolution {
    pub alpha_sq: f64,
    /// Complex intracavity amplitude (input phase real positive).
    pub alpha: Complex64,
    pub beta_in_sq: f64,
    pub chi: f64,
    pub gamma_1: f64,
    pub g_eff: f64,
    pub c_alpha: f64,
    pub branch: Branch,
    pub stable: bool,
    pub r: Complex64,
}

impl SteadyStateSolution {
    /// Effective parameters derived from an occupancy.
    pub fn effective(device: &Device, alpha_sq: f64) -> (f64, f64, f64, f64) {
        let s = &device.spins;
        let chi = chi_factor(s.g_s, alpha_sq, s.gamma());
        let gamma_1 = s.fwhm + s.gamma() * chi;
        let g_eff = s.g / chi.sqrt();
        let c_alpha = 4.0 * g_eff * g_eff / (device.cavity.kappa() * gamma_1);
        (chi, gamma_1, g_eff, c_alpha)
    }
}

/// Steady-state inversion w = 1 − 2p of a spin at drive detuning `delta_j`.
pub fn spin_inversion(g_s: f64, alpha_sq: f64, gamma: f64, gamma_p: f64, delta_j: f64) -> f64 {
    1.0 / (1.0 + 2.0 * g_s * g_s * alpha_sq * gamma / (gamma_p * (delta_j * delta_j + 0.25 * gamma * gamma)))
}

/// χ = √(1 + 8 g_s² |α|² / γ²).
pub fn chi_factor(g_s: f64, alpha_sq: f64, gamma: f64) -> f64 {
    (1.0 + 8.0 * g_s * g_s * alpha_sq / (gamma * gamma)).sqrt()
}

/// Self-consistent root finder for |α|².
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateSolver {
    pub model: SaturationModel,
    pub quadrature: SpinQuadrature,
    /// Log-grid points used to bracket roots.
    pub grid_points: usize,
    /// The grid spans [1/span, span] × the linear estimate.
    pub span: f64,
    pub rel_tol: f64,
}

impl SteadyStateSolver {
    pub fn new(model: SaturationModel, quadrature: SpinQuadrature) -> Self {
        SteadyStateSolver {
            model,
            quadrature,
            grid_points: 241,
            span: 1e6,
            rel_tol: 1e-10,
        }
    }

    /// Closed form for Lorentzian lines, uniform quadrature otherwise.
    pub fn for_device(device: &Device, model: SaturationModel) -> Self {
        let quad = match device.spins.lineshape {
            LineShape::Lorentzian => SpinQuadrature::Analytic,
            LineShape::Gaussian => SpinQuadrature::Bins(Self::uniform_bins(device, DEFAULT_QUADRATURE_BINS)),
        };
        Self::new(model, quad)
    }

    /// Uniform midpoint bins over ±20 FWHM for every hyperfine line.
    pub fn uniform_bins(device: &Device, m: usize) -> Vec<SpinBin> {
        let s = &device.spins;
        let dist = InhomogeneousDistribution::from_lineshape(s.lineshape, s.fwhm);
        let per_line = quadrature_bins(&dist, m, crate::distribution::DEFAULT_WINDOW_FWHM)
            .expect("validated device gives valid bins");
        replicate_over_lines(&per_line, &s.line_offsets())
    }

    /// Spin self-energy Σ(|α|²) entering D = κ/2 + iΔ + Σ.
    pub fn self_energy(&self, device: &Device, delta: f64, delta_s: f64, alpha_sq: f64) -> Complex64 {
        let s = &device.spins;
        let g2 = s.g * s.g;
        if g2 == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let gamma = s.gamma();
        match (&self.quadrature, self.model) {
            (SpinQuadrature::Analytic, SaturationModel::Effective) => {
                let chi = chi_factor(s.g_s, alpha_sq, gamma);
                let half_1 = 0.5 * (s.fwhm + gamma * chi);
                s.line_offsets()
                    .iter()
                    .map(|&o| Complex64::new(half_1, delta - delta_s - o).inv())
                    .sum::<Complex64>()
                    * (g2 / chi)
            }
            (SpinQuadrature::Analytic, SaturationModel::Bloch) => {
                // w/(γ/2 + iΔ) has poles at ±i b; convolving each with the
                // Lorentzian shifts them to ±i(b + Γ/2).
                let chi_b = (1.0 + 8.0 * s.g_s * s.g_s * alpha_sq / (gamma * s.gamma_p)).sqrt();
                let b = 0.5 * gamma * chi_b;
                let big_b = b + 0.5 * s.fwhm;
                let i2b = Complex64::new(0.0, 2.0 * b);
                let a1 = (0.5 * gamma + b) / i2b;
                let a2 = (b - 0.5 * gamma) / i2b;
                s.line_offsets()
                    .iter()
                    .map(|&o| {
                        let d = delta - delta_s - o;
                        a1 / Complex64::new(d, -big_b) + a2 / Complex64::new(d, big_b)
                    })
                    .sum::<Complex64>()
                    * g2
            }
            (SpinQuadrature::Bins(bins), model) => {
                let big_g2 = g2 * s.n_hyperfine as f64;
                match model {
                    SaturationModel::Effective => {
                        let chi = chi_factor(s.g_s, alpha_sq, gamma);
                        let half = 0.5 * gamma * chi;
                        bins.iter()
                            .map(|b| b.weight / Complex64::new(half, delta - delta_s - b.offset))
                            .sum::<Complex64>()
                            * (big_g2 / chi)
                    }
                    SaturationModel::Bloch => bins
                        .iter()
                        .map(|b| {
                            let dj = delta - delta_s - b.offset;
                            let w = spin_inversion(s.g_s, alpha_sq, gamma, s.gamma_p, dj);
                            b.weight * w / Complex64::new(0.5 * gamma, dj)
                        })
                        .sum::<Complex64>()
                        * big_g2,
                }
            }
        }
    }

    pub fn denominator(&self, device: &Device, delta: f64, delta_s: f64, alpha_sq: f64) -> Complex64 {
        Complex64::new(0.5 * device.cavity.kappa(), delta) + self.self_energy(device, delta, delta_s, alpha_sq)
    }

    /// Input flux |β_in|² that sustains occupancy `alpha_sq`.
    pub fn required_flux(&self, device: &Device, delta: f64, delta_s: f64, alpha_sq: f64) -> f64 {
        self.denominator(device, delta, delta_s, alpha_sq).norm_sqr() * alpha_sq / device.cavity.kappa_c1
    }

    pub fn solve(&self, device: &Device, drive: &DriveParams) -> Result<Vec<SteadyStateSolution>> {
        let (delta, delta_s) = (drive.delta, drive.delta_s);
        let beta_sq = drive.flux();
        let d0 = self.denominator(device, delta, delta_s, 0.0);
        let a_lin = device.cavity.kappa_c1 * beta_sq / d0.norm_sqr();
        let roots = scan_roots(
            |a| self.required_flux(device, delta, delta_s, a),
            beta_sq,
            a_lin,
            self.grid_points,
            self.span,
            self.rel_tol,
        )?;
        Ok(label(roots, |a| {
            let d = self.denominator(device, delta, delta_s, a);
            make_solution(device, drive, a, d)
        }))
    }
}

fn make_solution(device: &Device, drive: &DriveParams, alpha_sq: f64, d: Complex64) -> SteadyStateSolution {
    let (chi, gamma_1, g_eff, c_alpha) = SteadyStateSolution::effective(device, alpha_sq);
    let k1 = device.cavity.kappa_c1;
    SteadyStateSolution {
        alpha_sq,
        alpha: k1.sqrt() * drive.beta_in / d,
        beta_in_sq: drive.flux(),
        chi,
        gamma_1,
        g_eff,
        c_alpha,
        branch: Branch::Lower,
        stable: true,
        r: Complex64::new(-1.0, 0.0) + k1 / d,
    }
}

fn label<F: Fn(f64) -> SteadyStateSolution>(roots: Vec<(f64, bool)>, build: F) -> Vec<SteadyStateSolution> {
    let mut seen_stable = false;
    roots
        .into_iter()
        .map(|(a, stable)| {
            let mut s = build(a);
            s.stable = stable;
            s.branch = if !stable {
                Branch::MiddleUnstable
            } else if seen_stable {
                Branch::Upper
            } else {
                Branch::Lower
            };
            seen_stable |= stable;
            s
        })
        .collect()
}

/// All roots of `h(a) = target` on a log grid around `a_lin`, refined by
/// bisection. Each root carries `true` when dh/da > 0 (stable).
fn scan_roots<H: Fn(f64) -> f64>(
    h: H,
    target: f64,
    a_lin: f64,
    grid_points: usize,
    span: f64,
    rel_tol: f64,
) -> Result<Vec<(f64, bool)>> {
    if target == 0.0 {
        return Ok(vec![(0.0, true)]);
    }
    if !(a_lin > 0.0 && a_lin.is_finite()) {
        return Err(Error::NoRoot(format!("linear estimate {a_lin} is not usable")));
    }
    let n = grid_points.max(200);
    let mut lo = a_lin / span;
    let mut hi = a_lin * span;
    for _attempt in 0..4 {
        let la = lo.ln();
        let step = (hi.ln() - la) / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|k| (la + step * k as f64).exp()).collect();
        let fs: Vec<f64> = xs.iter().map(|&a| h(a) - target).collect();
        let mut roots = Vec::new();
        for k in 0..n - 1 {
            let (f0, f1) = (fs[k], fs[k + 1]);
            if f0 == 0.0 {
                let stable = if k > 0 { fs[k + 1] > fs[k - 1] } else { f1 > 0.0 };
                roots.push((xs[k], stable));
            } else if f0 * f1 < 0.0 {
                let r = bisect_log(&h, target, xs[k], xs[k + 1], f0, rel_tol);
                roots.push((r, f1 > 0.0));
            }
        }
        if !roots.is_empty() {
            return Ok(roots);
        }
        if fs[0] > 0.0 {
            lo /= span;
        } else {
            hi *= span;
        }
        if _attempt == 3 {
            return Err(Error::NoRoot(format!(
                "target flux {target:e}; bracket [{:e}, {:e}] gives residuals [{:e}, {:e}]",
                xs[0],
                xs[n - 1],
                fs[0],
                fs[n - 1]
            )));
        }
    }
    unreachable!()
}

fn bisect_log<H: Fn(f64) -> f64>(h: &H, target: f64, mut a: f64, mut b: f64, fa: f64, rel_tol: f64) -> f64 {
    let sa = fa.signum();
    for _ in 0..200 {
        let m = (a * b).sqrt();
        let fm = h(m) - target;
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
        if (b - a) <= rel_tol * b {
            break;
        }
    }
    (a * b).sqrt()
}

/// Roots of the default (effective, all lines) model.
pub fn solve_occupancy(device: &Device, drive: &DriveParams) -> Result<Vec<SteadyStateSolution>> {
    SteadyStateSolver::for_device(device, SaturationModel::Effective).solve(device, drive)
}

/// Closed-form resonant occupancy equation for one Lorentzian line:
/// |β_in|² = (κ²/4κ_c1)(1 + C_α)² |α|².
pub fn required_flux_resonant(device: &Device, alpha_sq: f64) -> f64 {
    let (_, _, _, c) = SteadyStateSolution::effective(device, alpha_sq);
    let k = device.cavity.kappa();
    k * k / (4.0 * device.cavity.kappa_c1) * (1.0 + c).powi(2) * alpha_sq
}

/// All roots of the closed-form resonant equation at input flux `beta_sq`.
pub fn solve_resonant(device: &Device, beta_sq: f64) -> Result<Vec<SteadyStateSolution>> {
    let k = device.cavity.kappa();
    let (_, _, _, c0) = SteadyStateSolution::effective(device, 0.0);
    let a_lin = 4.0 * device.cavity.kappa_c1 * beta_sq / (k * k * (1.0 + c0).powi(2));
    let roots = scan_roots(|a| required_flux_resonant(device, a), beta_sq, a_lin, 241, 1e6, 1e-10)?;
    let drive = DriveParams {
        beta_in: beta_sq.sqrt(),
        delta: 0.0,
        delta_s: 0.0,
    };
    Ok(label(roots, |a| {
        let (_, _, _, c) = SteadyStateSolution::effective(device, a);
        let d = Complex64::new(0.5 * k * (1.0 + c), 0.0);
        make_solution(device, &drive, a, d)
    }))
}

pub fn stable_count(sols: &[SteadyStateSolution]) -> usize {
    sols.iter().filter(|s| s.stable).count()
}

pub fn select_branch(sols: &[SteadyStateSolution], sel: BranchSelection) -> Option<&SteadyStateSolution> {
    let mut stable = sols.iter().filter(|s| s.stable);
    match sel {
        BranchSelection::FollowFromBelow => stable.next(),
        BranchSelection::FollowFromAbove => stable.last(),
    }
}

/// Branch choice that refuses to guess when the state is bistable.
pub fn select_branch_strict(
    sols: &[SteadyStateSolution],
    sel: Option<BranchSelection>,
) -> Result<&SteadyStateSolution> {
    let n = stable_count(sols);
    let sel = match sel {
        Some(s) => s,
        None if n > 1 => return Err(Error::AmbiguousBranch(n)),
        None => BranchSelection::FollowFromBelow,
    };
    select_branch(sols, sel).ok_or_else(|| Error::NoRoot("no stable root".into()))
}

/// Nonlinear reflection from the branch-selected steady state.
pub fn reflection_nonlinear(device: &Device, drive: &DriveParams, sel: BranchSelection) -> Result<ReflectionPoint> {
    let solver = SteadyStateSolver::for_device(device, SaturationModel::Effective);
    reflection_nonlinear_with(&solver, device, drive, sel)
}

pub fn reflection_nonlinear_with(
    solver: &SteadyStateSolver,
    device: &Device,
    drive: &DriveParams,
    sel: BranchSelection,
) -> Result<ReflectionPoint> {
    let sols = solver.solve(device, drive)?;
    let s = select_branch(&sols, sel).ok_or_else(|| Error::NoRoot("no stable root".into()))?;
    if drive.beta_in == 0.0 {
        let sigma = solver.self_energy(device, drive.delta, drive.delta_s, 0.0);
        return Ok(ReflectionPoint {
            r: reflection_from_self_energy(device, drive.delta, sigma),
            delta: drive.delta,
            delta_s: drive.delta_s,
        });
    }
    Ok(ReflectionPoint {
        r: s.r,
        delta: drive.delta,
        delta_s: drive.delta_s,
    })
}

/// Magnitude of ∂Im r/∂ω_s at resonance: (4C_α/Γ_1)(κ_c1/κ)(1 + C_α)⁻², s/rad.
pub fn quadrature_slope(device: &Device, sol: &SteadyStateSolution) -> f64 {
    let c = sol.c_alpha;
    4.0 * c / sol.gamma_1 * device.cavity.kappa_c1 / device.cavity.kappa() / (1.0 + c).powi(2)
}

/// Resonant slope at power `p_w`; bistable points need a branch.
pub fn quadrature_slope_at(device: &Device, p_w: f64, sel: Option<BranchSelection>) -> Result<f64> {
    let beta_sq = power_to_flux(p_w, device.cavity.omega_c)?;
    let sols = solve_resonant(device, beta_sq)?;
    let s = select_branch_strict(&sols, sel)?;
    Ok(quadrature_slope(device, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationThreshold {
    pub beta_s_sq: f64,
    pub power_w: f64,
}

/// |β_s|² = (N g²/2κ_c1)[γ/(√2(Γ + √2γ)) + κγ/(4g²)]².
pub fn saturation_threshold(device: &Device) -> SaturationThreshold {
    let s = &device.spins;
    let (g, gamma, fw) = (s.g, s.gamma(), s.fwhm);
    let k = device.cavity.kappa();
    let r2 = std::f64::consts::SQRT_2;
    let bracket = gamma / (r2 * (fw + r2 * gamma)) + k * gamma / (4.0 * g * g);
    let beta_s_sq = s.n_spins() * g * g / (2.0 * device.cavity.kappa_c1) * bracket * bracket;
    SaturationThreshold {
        beta_s_sq,
        power_w: beta_s_sq * constants::HBAR * device.cavity.omega_c,
    }
}

/// Power at which the resonant lower-branch occupancy exceeds its linear
/// extrapolation by `deviation`.
pub fn numeric_saturation_onset(device: &Device, deviation: f64) -> Result<f64> {
    let k = device.cavity.kappa();
    let (_, _, _, c0) = SteadyStateSolution::effective(device, 0.0);
    let lin = 4.0 * device.cavity.kappa_c1 / (k * k * (1.0 + c0).powi(2));
    let dev = |b: f64| -> Result<f64> {
        let sols = solve_resonant(device, b)?;
        let s = select_branch(&sols, BranchSelection::FollowFromBelow).unwrap();
        Ok(s.alpha_sq / (lin * b) - 1.0)
    };
    let scale = saturation_threshold(device).beta_s_sq;
    let (mut lo, mut hi) = (scale * 1e-8, scale * 1e8);
    if dev(lo)? >= deviation || dev(hi)? < deviation {
        return Err(Error::NoRoot(format!("onset deviation {deviation} not bracketed")));
    }
    for _ in 0..200 {
        let m = (lo * hi).sqrt();
        if dev(m)? < deviation {
            lo = m;
        } else {
            hi = m;
        }
        if hi / lo - 1.0 < 1e-12 {
            break;
        }
    }
    flux_to_power((lo * hi).sqrt(), device.cavity.omega_c)
}

/// Turning point of the input–occupancy curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub alpha_sq: f64,
    pub power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BistabilityReport {
    /// (4g²/κγ)(γ/(Γ+γ))²; values above one indicate bistability.
    pub predicate: f64,
    pub powers_w: Vec<f64>,
    pub stable_roots: Vec<usize>,
    pub bistable_powers_w: Vec<f64>,
    pub folds: Vec<Fold>,
}

impl BistabilityReport {
    pub fn is_bistable(&self) -> bool {
        !self.bistable_powers_w.is_empty()
    }
}

pub fn bistability_predicate(device: &Device) -> f64 {
    let s = &device.spins;
    let gamma = s.gamma();
    4.0 * s.g * s.g / (device.cavity.kappa() * gamma) * (gamma / (s.fwhm + gamma)).powi(2)
}

/// Count stable roots across a resonant power sweep and locate folds.
pub fn detect_bistability(
    device: &Device,
    powers_w: &[f64],
    solver: &SteadyStateSolver,
) -> Result<BistabilityReport> {
    check_grid("powers", powers_w)?;
    let omega = device.cavity.omega_c;
    let mut stable_roots = Vec::with_capacity(powers_w.len());
    let mut bistable = Vec::new();
    for &p in powers_w {
        let drive = DriveParams::resonant(&device.cavity, p)?;
        let n = stable_count(&solver.solve(device, &drive)?);
        stable_roots.push(n);
        if n > 1 {
            bistable.push(p);
        }
    }
    let pmin = powers_w.iter().cloned().fold(f64::INFINITY, f64::min);
    let pmax = powers_w.iter().cloned().fold(0.0, f64::max);
    let h = |a: f64| solver.required_flux(device, 0.0, 0.0, a);
    let d0 = solver.denominator(device, 0.0, 0.0, 0.0).norm_sqr();
    let k1 = device.cavity.kappa_c1;
    let a_lo = k1 * power_to_flux(pmin.max(1e-30), omega)? / d0 * 1e-3;
    let a_hi = 4.0 * k1 * power_to_flux(pmax.max(1e-30), omega)? / device.cavity.kappa().powi(2) * 1e3;
    let folds = find_folds(&h, a_lo, a_hi, 4000)
        .into_iter()
        .map(|a| Fold {
            alpha_sq: a,
            power_w: h(a) * constants::HBAR * omega,
        })
        .collect();
    Ok(BistabilityReport {
        predicate: bistability_predicate(device),
        powers_w: powers_w.to_vec(),
        stable_roots,
        bistable_powers_w: bistable,
        folds,
    })
}

/// Local extrema of `h` on a log grid, refined by golden-section search.
pub fn find_folds<H: Fn(f64) -> f64>(h: &H, a_lo: f64, a_hi: f64, n: usize) -> Vec<f64> {
    let (l0, l1) = (a_lo.ln(), a_hi.ln());
    let xs: Vec<f64> = (0..n).map(|k| l0 + (l1 - l0) * k as f64 / (n - 1) as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| h(x.exp())).collect();
    let mut out = Vec::new();
    for k in 1..n - 1 {
        let is_max = ys[k] > ys[k - 1] && ys[k] >= ys[k + 1];
        let is_min = ys[k] < ys[k - 1] && ys[k] <= ys[k + 1];
        if is_max || is_min {
            let sign = if is_max { -1.0 } else { 1.0 };
            let x = golden_min(|x| sign * h(x.exp()), xs[k - 1], xs[k + 1], 1e-12);
            out.push(x.exp());
        }
    }
    out
}

pub(crate) fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::reflection_linear;
    use crate::model::dbm_to_watts;

    fn preset() -> Device {
        Device::paper_device()
    }

    #[test]
    fn inversion_limits() {
        assert_eq!(spin_inversion(1.0, 0.0, 2.0, 1.0, 0.3), 1.0);
        let (gs, a, g) = (0.05, 3e10, 2e5);
        let w = spin_inversion(gs, a, g, g, 0.0);
        assert!((w - 1.0 / chi_factor(gs, a, g).powi(2)).abs() < 1e-14);
        assert!(1.0 - spin_inversion(gs, a, g, g, 1e12) < 1e-9);
    }

    #[test]
    fn zero_drive_single_zero_root() {
        let d = preset();
        let drive = DriveParams::new(0.0, 0.0, 0.0).unwrap();
        let s = solve_occupancy(&d, &drive).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].alpha_sq, 0.0);
    }

    #[test]
    fn decoupled_occupancy() {
        let mut d = preset();
        d.spins.g = 0.0;
        let drive = DriveParams::resonant(&d.cavity, 1e-6).unwrap();
        let s = solve_occupancy(&d, &drive).unwrap();
        let k = d.cavity.kappa();
        let expect = 4.0 * d.cavity.kappa_c1 * drive.flux() / (k * k);
        assert_eq!(s.len(), 1);
        assert!((s[0].alpha_sq / expect - 1.0).abs() < 1e-9);
    }

    #[test]
    fn low_power_matches_linear() {
        let d = preset();
        let drive = DriveParams::from_dbm(&d.cavity, -50.0, 0.0, 0.0).unwrap();
        let s = solve_occupancy(&d, &drive).unwrap();
        assert_eq!(s.len(), 1);
        let lin = reflection_linear(&d, &drive).unwrap();
        assert!((s[0].r - lin.r).norm() < 1e-3);
    }

    #[test]
    fn high_power_bare_cavity_limit() {
        let d = preset();
        let drive = DriveParams::from_dbm(&d.cavity, 40.0, 0.0, 0.0).unwrap();
        let p = reflection_nonlinear(&d, &drive, BranchSelection::FollowFromBelow).unwrap();
        let k = d.cavity.kappa();
        let limit = (-1.0 + 2.0 * d.cavity.kappa_c1 / k).powi(2);
        assert!((p.abs_r2() - limit).abs() < 1e-3, "{} vs {limit}", p.abs_r2());
    }

    #[test]
    fn slope_peak_at_unit_cooperativity() {
        let d = preset();
        let mut sol = solve_resonant(&d, 1e10).unwrap()[0];
        let best = (0..2001)
            .map(|k| 10f64.powf(-2.0 + 4.0 * k as f64 / 2000.0))
            .map(|c| {
                sol.c_alpha = c;
                (quadrature_slope(&d, &sol), c)
            })
            .fold((0.0, 0.0), |m, v| if v.0 > m.0 { v } else { m });
        assert!((best.1 - 1.0).abs() < 0.01);
        let k = d.cavity.kappa();
        assert!((best.0 / (d.cavity.kappa_c1 / (k * sol.gamma_1)) - 1.0).abs() < 1e-4);
        sol.c_alpha = 0.0;
        assert_eq!(quadrature_slope(&d, &sol), 0.0);
    }

    #[test]
    fn preset_not_bistable() {
        let d = preset();
        assert!(bistability_predicate(&d) < 1.0);
        let powers: Vec<f64> = (0..30).map(|k| dbm_to_watts(-60.0 + 2.5 * k as f64)).collect();
        let solver = SteadyStateSolver::for_device(&d.single_line(), SaturationModel::Effective);
        let rep = detect_bistability(&d.single_line(), &powers, &solver).unwrap();
        assert!(!rep.is_bistable());
        assert!(rep.folds.is_empty());
    }

    #[test]
    fn homogeneous_is_bistable() {
        let d = preset().single_line().with_fwhm(0.0);
        assert!(bistability_predicate(&d) > 1.0);
        let powers: Vec<f64> = (0..60).map(|k| dbm_to_watts(-40.0 + k as f64)).collect();
        let solver = SteadyStateSolver::for_device(&d, SaturationModel::Effective);
        let rep = detect_bistability(&d, &powers, &solver).unwrap();
        assert!(rep.is_bistable());
        assert_eq!(rep.folds.len(), 2);
        for &p in &rep.bistable_powers_w {
            assert!(p > rep.folds[1].power_w && p < rep.folds[0].power_w);
        }
    }

    #[test]
    fn strict_branch_refuses_ambiguity() {
        let d = preset().single_line().with_fwhm(0.0);
        let solver = SteadyStateSolver::for_device(&d, SaturationModel::Effective);
        let powers: Vec<f64> = (0..60).map(|k| dbm_to_watts(-40.0 + k as f64)).collect();
        let rep = detect_bistability(&d, &powers, &solver).unwrap();
        let p = rep.bistable_powers_w[0];
        assert!(matches!(quadrature_slope_at(&d, p, None), Err(Error::AmbiguousBranch(2))));
        assert!(quadrature_slope_at(&d, p, Some(BranchSelection::FollowFromAbove)).is_ok());
    }

    #[test]
    fn threshold_limit_large_fwhm_term() {
        let mut d = preset();
        d.spins.fwhm = 1e30;
        let t = saturation_threshold(&d);
        let s = &d.spins;
        let k = d.cavity.kappa();
        let expect = s.n_spins() * s.g * s.g / (2.0 * d.cavity.kappa_c1) * (k * s.gamma() / (4.0 * s.g * s.g)).powi(2);
        assert!((t.beta_s_sq / expect - 1.0).abs() < 1e-12);
    }
}
