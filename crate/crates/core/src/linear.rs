//! Weak-drive reflection, polariton roots and 2-D spectroscopy maps.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::InhomogeneousDistribution;
use crate::error::{Error, Result};
use crate::model::{Device, DriveParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionPoint {
    pub r: Complex64,
    pub delta: f64,
    pub delta_s: f64,
}

impl ReflectionPoint {
    pub fn abs_r2(&self) -> f64 {
        self.r.norm_sqr()
    }
}

/// r = −1 + κ_c1 / (κ/2 + iΔ + Σ) for a spin self-energy Σ.
pub fn reflection_from_self_energy(device: &Device, delta: f64, sigma: Complex64) -> Complex64 {
    let c = &device.cavity;
    Complex64::new(-1.0, 0.0) + c.kappa_c1 / (Complex64::new(0.5 * c.kappa(), delta) + sigma)
}

/// Linear spin self-energy g² Σ_lines ∫P/(γ/2 + i(ω_d − ω')).
pub fn linear_self_energy(
    device: &Device,
    dist: &InhomogeneousDistribution,
    delta: f64,
    delta_s: f64,
) -> Result<Complex64> {
    let s = &device.spins;
    let g2 = s.g * s.g;
    if g2 == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let mut sum = Complex64::new(0.0, 0.0);
    for off in s.line_offsets() {
        sum += dist.susceptibility(delta - delta_s - off, s.gamma())?;
    }
    Ok(sum * g2)
}

pub fn device_distribution(device: &Device) -> InhomogeneousDistribution {
    InhomogeneousDistribution::from_lineshape(device.spins.lineshape, device.spins.fwhm)
}

pub fn reflection_linear(device: &Device, drive: &DriveParams) -> Result<ReflectionPoint> {
    reflection_linear_with(device, &device_distribution(device), drive.delta, drive.delta_s)
}

pub fn reflection_linear_with(
    device: &Device,
    dist: &InhomogeneousDistribution,
    delta: f64,
    delta_s: f64,
) -> Result<ReflectionPoint> {
    let sigma = linear_self_energy(device, dist, delta, delta_s)?;
    Ok(ReflectionPoint {
        r: reflection_from_self_energy(device, delta, sigma),
        delta,
        delta_s,
    })
}

/// Reflection over a (Δ_s, Δ) grid. Row `i` holds Δ_s = `delta_s_grid[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionMap {
    pub delta_grid: Vec<f64>,
    pub delta_s_grid: Vec<f64>,
    pub r: Vec<Complex64>,
}

impl ReflectionMap {
    pub fn at(&self, i_s: usize, i_d: usize) -> Complex64 {
        self.r[i_s * self.delta_grid.len() + i_d]
    }

    pub fn abs_r2(&self) -> Vec<f64> {
        self.r.iter().map(|r| r.norm_sqr()).collect()
    }

    /// |r|² along Δ at fixed Δ_s index.
    pub fn column(&self, i_s: usize) -> Vec<f64> {
        let n = self.delta_grid.len();
        self.r[i_s * n..(i_s + 1) * n]
            .iter()
            .map(|r| r.norm_sqr())
            .collect()
    }
}

pub(crate) fn check_grid(key: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(key, "grid is empty"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(key, "grid contains non-finite values"));
    }
    let up = grid.windows(2).all(|w| w[1] > w[0]);
    let down = grid.windows(2).all(|w| w[1] < w[0]);
    if !(up || down) {
        return Err(Error::invalid(key, "grid must be strictly monotone"));
    }
    Ok(())
}

pub fn reflection_map(device: &Device, delta_grid: &[f64], delta_s_grid: &[f64]) -> Result<ReflectionMap> {
    check_grid("delta_grid", delta_grid)?;
    check_grid("delta_s_grid", delta_s_grid)?;
    let dist = device_distribution(device);
    dist.validate()?;
    let n = delta_grid.len();
    let r = (0..delta_s_grid.len() * n)
        .into_par_iter()
        .map(|k| {
            let ds = delta_s_grid[k / n];
            let d = delta_grid[k % n];
            reflection_linear_with(device, &dist, d, ds).map(|p| p.r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReflectionMap {
        delta_grid: delta_grid.to_vec(),
        delta_s_grid: delta_s_grid.to_vec(),
        r,
    })
}

/// g > κ/2 and g > Γ/2.
pub fn is_strong_coupling(device: &Device) -> bool {
    let g = device.spins.g;
    g > 0.5 * device.cavity.kappa() && g > 0.5 * device.spins.fwhm
}

/// Complex zeros of the reflection denominator as a polynomial in Δ for a
/// Lorentzian ensemble. Real parts are polariton frequencies relative to
/// ω_c; imaginary parts are half-linewidths. Sorted by real part.
pub fn polariton_frequencies(device: &Device, delta_s: f64) -> Vec<Complex64> {
    let s = &device.spins;
    let half_t = 0.5 * (s.gamma() + s.fwhm);
    let poles: Vec<Complex64> = s
        .line_offsets()
        .iter()
        .map(|&o| Complex64::new(delta_s + o, half_t))
        .collect();
    let e_c = Complex64::new(0.0, 0.5 * device.cavity.kappa());

    // (Δ − e_c)Π(Δ − e_k) − g² Σ_k Π_{l≠k}(Δ − e_l)
    let mut all = vec![e_c];
    all.extend(&poles);
    let mut p = poly_from_roots(&all);
    let g2 = s.g * s.g;
    for k in 0..poles.len() {
        let others: Vec<Complex64> = poles
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != k)
            .map(|(_, &e)| e)
            .collect();
        let q = poly_from_roots(&others);
        let shift = p.len() - q.len();
        for (i, c) in q.iter().enumerate() {
            p[i + shift] -= c * g2;
        }
    }
    let mut roots = polynomial_roots(&p);
    roots.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    roots
}

/// Monic coefficients, highest degree first.
fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &a) in c.iter().enumerate() {
            next[i] += a;
            next[i + 1] -= a * r;
        }
        c = next;
    }
    c
}

fn horner(p: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut v = p[0];
    let mut d = Complex64::new(0.0, 0.0);
    for &c in &p[1..] {
        d = d * z + v;
        v = v * z + c;
    }
    (v, d)
}

/// Durand–Kerner iteration on a monic polynomial, Newton-polished.
fn polynomial_roots(p: &[Complex64]) -> Vec<Complex64> {
    let n = p.len() - 1;
    if n == 0 {
        return vec![];
    }
    let scale = p[1..]
        .iter()
        .enumerate()
        .map(|(i, c)| c.norm().powf(1.0 / (i + 1) as f64))
        .fold(0.0, f64::max)
        .max(1e-300);
    let seed = Complex64::new(0.4, 0.9);
    let mut z: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * scale).collect();
    for _ in 0..500 {
        let mut delta_max: f64 = 0.0;
        for i in 0..n {
            let (v, _) = horner(p, z[i]);
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    den *= z[i] - z[j];
                }
            }
            let step = v / den;
            z[i] -= step;
            delta_max = delta_max.max(step.norm());
        }
        if delta_max <= 1e-15 * scale {
            break;
        }
    }
    for zi in z.iter_mut() {
        for _ in 0..3 {
            let (v, d) = horner(p, *zi);
            if d.norm() == 0.0 {
                break;
            }
            *zi -= v / d;
        }
    }
    z
}

/// Local minima of `y(x)` refined by a three-point parabola.
pub fn dip_positions(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..y.len().saturating_sub(1) {
        if y[i] < y[i - 1] && y[i] <= y[i + 1] {
            let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
            let den = y0 - 2.0 * y1 + y2;
            let h = 0.5 * (x[i + 1] - x[i - 1]);
            let t = if den > 0.0 { 0.5 * (y0 - y2) / den } else { 0.0 };
            out.push(x[i] + t.clamp(-1.0, 1.0) * h);
        }
    }
    out
}

/// Spin-transition detunings Δ_s at which each sub-ensemble crosses the
/// cavity, recovered from the map alone.
///
/// Away from the cavity the spin-like dips follow
/// `Δ_dip − Δ_s ≈ c_k + g²/Δ_dip`; a linear fit in `1/Δ_dip` per cluster of
/// `Δ_dip − Δ_s` values gives the line offset `c_k`, and the crossing sits
/// at Δ_s = −c_k. Dips with |Δ| below half the scanned span are ignored.
pub fn anticrossing_centers(map: &ReflectionMap, min_separation: f64) -> Vec<f64> {
    let xmax = map
        .delta_grid
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (i, &ds) in map.delta_s_grid.iter().enumerate() {
        let col = map.column(i);
        for d in dip_positions(&map.delta_grid, &col) {
            if d.abs() > 0.5 * xmax {
                pts.push((d - ds, d));
            }
        }
    }
    if pts.is_empty() {
        return vec![];
    }
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut clusters: Vec<Vec<(f64, f64)>> = vec![vec![pts[0]]];
    for w in pts.windows(2) {
        if w[1].0 - w[0].0 > min_separation {
            clusters.push(Vec::new());
        }
        clusters.last_mut().unwrap().push(w[1]);
    }
    let mut centers: Vec<f64> = clusters
        .iter()
        .filter(|c| c.len() >= 3)
        .map(|c| {
            // least squares u = a + b/x
            let n = c.len() as f64;
            let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
            for &(u, d) in c {
                let x = 1.0 / d;
                sx += x;
                sy += u;
                sxx += x * x;
                sxy += x * u;
            }
            let det = n * sxx - sx * sx;
            let a = if det.abs() > 0.0 {
                (sy * sxx - sx * sxy) / det
            } else {
                sy / n
            };
            -a
        })
        .collect();
    centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    centers
}

/// Splitting between the two deepest dips of one Δ_s column.
pub fn polariton_splitting(map: &ReflectionMap, i_s: usize) -> Option<f64> {
    let col = map.column(i_s);
    let dips = dip_positions(&map.delta_grid, &col);
    let interp = |x: f64| -> f64 {
        let g = &map.delta_grid;
        let k = g.partition_point(|&v| v < x).clamp(1, g.len() - 1);
        let t = (x - g[k - 1]) / (g[k] - g[k - 1]);
        col[k - 1] * (1.0 - t) + col[k] * t
    };
    let mut scored: Vec<(f64, f64)> = dips.iter().map(|&d| (interp(d), d)).collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if scored.len() < 2 {
        return None;
    }
    Some((scored[0].1 - scored[1].1).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hz, CavityParams, SpinEnsembleParams};

    fn preset() -> Device {
        Device::paper_device()
    }

    #[test]
    fn decoupled_is_bare_cavity() {
        let mut d = preset();
        d.spins.g = 0.0;
        let c = d.cavity;
        for delta in [-1e6, 0.0, 3e5] {
            let p = reflection_linear_with(&d, &device_distribution(&d), delta, 0.0).unwrap();
            let bare = Complex64::new(-1.0, 0.0) + c.kappa_c1 / Complex64::new(0.5 * c.kappa(), delta);
            assert!((p.r - bare).norm() < 1e-15);
        }
    }

    #[test]
    fn critical_coupling_zero_reflection() {
        let mut d = preset();
        d.spins.g = 0.0;
        d.cavity.kappa_c = d.cavity.kappa_c1;
        let p = reflection_linear_with(&d, &device_distribution(&d), 0.0, 0.0).unwrap();
        assert!(p.r.norm() < 1e-15);
    }

    #[test]
    fn single_line_resonant_value() {
        // κ_c1/(κ/2 + 2g²/(γ+Γ)) in kHz units: 125/(127.5 + 2·190²/363)
        let d = preset().single_line();
        let p = reflection_linear_with(&d, &device_distribution(&d), 0.0, 0.0).unwrap();
        let expect = -1.0 + 125.0 / (127.5 + 2.0 * 190.0f64.powi(2) / 363.0);
        assert!((p.r.re - expect).abs() < 1e-12);
        assert!(p.r.im.abs() < 1e-12);
    }

    #[test]
    fn vacuum_rabi_roots() {
        let cav = CavityParams::new(hz(2.87e9), 0.0, 1e-12, 1e-6).unwrap();
        let spins = SpinEnsembleParams {
            g: hz(190e3),
            g_s: 1.0,
            fwhm: 0.0,
            gamma_0: 0.0,
            gamma_p: 1e-12,
            a_zz: 0.0,
            n_hyperfine: 1,
            lineshape: Default::default(),
        };
        let d = Device { cavity: cav, spins };
        let r = polariton_frequencies(&d, 0.0);
        assert_eq!(r.len(), 2);
        assert!((r[0].re + hz(190e3)).abs() < 1e-6 * hz(190e3));
        assert!((r[1].re - hz(190e3)).abs() < 1e-6 * hz(190e3));
    }

    #[test]
    fn resonant_splitting_matches_quadratic() {
        let d = preset().single_line();
        let r = polariton_frequencies(&d, 0.0);
        let k = d.cavity.kappa();
        let gt = d.spins.gamma() + d.spins.fwhm;
        let g = d.spins.g;
        let expect = 2.0 * (g * g - ((k - gt) / 4.0).powi(2)).sqrt();
        assert!(((r[1].re - r[0].re) / expect - 1.0).abs() < 1e-10);
        let damping = (k + gt) / 4.0;
        assert!((r[0].im / damping - 1.0).abs() < 1e-10);
    }

    #[test]
    fn three_lines_give_four_roots() {
        let r = polariton_frequencies(&preset(), 0.0);
        assert_eq!(r.len(), 4);
        assert!(r.iter().all(|z| z.im > 0.0));
    }

    #[test]
    fn strong_coupling_for_preset() {
        assert!(is_strong_coupling(&preset()));
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(reflection_map(&preset(), &[], &[0.0]).is_err());
        assert!(reflection_map(&preset(), &[0.0, 0.0], &[0.0]).is_err());
    }
}
