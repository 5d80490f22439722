//! Inhomogeneous spin-frequency distributions, their susceptibility integral
//! and discretization into spin bins.
//!
//! Offsets are measured from the line centre. The susceptibility is
//! `∫ P(x) / (γ/2 + i(δ − x)) dx` with `δ = ω_d − ω_centre`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure_finite, ensure_non_negative, ensure_positive, Error, Result};

/// Default half-window for truncated integrals, in FWHM.
pub const DEFAULT_WINDOW_FWHM: f64 = 20.0;

/// Mass a sampled density may leave outside its grid (Lorentzian tails
/// beyond ±20 FWHM carry 1.6%).
pub const SAMPLED_TAIL_ALLOWANCE: f64 = 0.02;

const NORM_TOL: f64 = 1e-9;
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineShape {
    #[default]
    Lorentzian,
    Gaussian,
}

/// Tabulated density on a strictly increasing offset grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledDensity {
    offsets: Vec<f64>,
    density: Vec<f64>,
    mass: f64,
}

impl SampledDensity {
    pub fn new(offsets: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if offsets.len() < 2 || offsets.len() != density.len() {
            return Err(Error::invalid(
                "distribution.samples",
                "need at least two (offset, density) pairs of equal length",
            ));
        }
        for w in offsets.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(
                    "distribution.offsets",
                    "offsets must be strictly increasing",
                ));
            }
        }
        for &p in &density {
            ensure_non_negative("distribution.density", p)?;
        }
        let mass = trapezoid(&offsets, &density);
        if mass > 1.0 + NORM_TOL || mass < 1.0 - SAMPLED_TAIL_ALLOWANCE {
            return Err(Error::invalid(
                "distribution.density",
                format!("density integrates to {mass}, expected 1 (tail allowance {SAMPLED_TAIL_ALLOWANCE})"),
            ));
        }
        Ok(SampledDensity {
            offsets,
            density,
            mass,
        })
    }

    /// Tabulate `dist` on `n` uniform points over ±`window_fwhm`·FWHM.
    pub fn tabulate(dist: &InhomogeneousDistribution, n: usize, window_fwhm: f64) -> Result<Self> {
        let half = window_fwhm * dist.fwhm();
        ensure_positive("distribution.window", half)?;
        let xs: Vec<f64> = (0..n)
            .map(|k| -half + 2.0 * half * k as f64 / (n - 1) as f64)
            .collect();
        let ps = xs.iter().map(|&x| dist.density(x)).collect();
        SampledDensity::new(xs, ps)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    fn density_at(&self, x: f64) -> f64 {
        let xs = &self.offsets;
        if x < xs[0] || x > xs[xs.len() - 1] {
            return 0.0;
        }
        let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
        let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        self.density[i - 1] * (1.0 - t) + self.density[i] * t
    }
}

/// Spin-frequency distribution about a sub-ensemble centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InhomogeneousDistribution {
    Lorentzian { fwhm: f64 },
    Gaussian { fwhm: f64 },
    Sampled(SampledDensity),
}

impl InhomogeneousDistribution {
    pub fn from_lineshape(shape: LineShape, fwhm: f64) -> Self {
        match shape {
            LineShape::Lorentzian => InhomogeneousDistribution::Lorentzian { fwhm },
            LineShape::Gaussian => InhomogeneousDistribution::Gaussian { fwhm },
        }
    }

    pub fn fwhm(&self) -> f64 {
        match self {
            InhomogeneousDistribution::Lorentzian { fwhm }
            | InhomogeneousDistribution::Gaussian { fwhm } => *fwhm,
            InhomogeneousDistribution::Sampled(s) => {
                let peak = s.density.iter().cloned().fold(0.0, f64::max);
                let above: Vec<f64> = s
                    .offsets
                    .iter()
                    .zip(&s.density)
                    .filter(|(_, &p)| p >= 0.5 * peak)
                    .map(|(&x, _)| x)
                    .collect();
                above.last().unwrap_or(&0.0) - above.first().unwrap_or(&0.0)
            }
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            InhomogeneousDistribution::Lorentzian { fwhm } => {
                let h = 0.5 * fwhm;
                h / (std::f64::consts::PI * (x * x + h * h))
            }
            InhomogeneousDistribution::Gaussian { fwhm } => {
                let s = fwhm / FWHM_PER_SIGMA;
                (-0.5 * (x / s).powi(2)).exp() / (s * (std::f64::consts::TAU).sqrt())
            }
            InhomogeneousDistribution::Sampled(s) => s.density_at(x),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InhomogeneousDistribution::Lorentzian { fwhm } => {
                ensure_non_negative("spins.gamma_fwhm_hz", *fwhm)
            }
            InhomogeneousDistribution::Gaussian { fwhm } => {
                ensure_positive("spins.gamma_fwhm_hz", *fwhm)
            }
            InhomogeneousDistribution::Sampled(_) => Ok(()),
        }
    }

    /// `∫ P(x) / (γ/2 + i(δ − x)) dx`, rad/s⁻¹.
    pub fn susceptibility(&self, delta: f64, gamma: f64) -> Result<Complex64> {
        ensure_positive("gamma", gamma)?;
        ensure_finite("delta", delta)?;
        self.validate()?;
        Ok(match self {
            InhomogeneousDistribution::Lorentzian { fwhm } => {
                Complex64::new(0.5 * (gamma + fwhm), delta).inv()
            }
            InhomogeneousDistribution::Gaussian { fwhm } => {
                let half = DEFAULT_WINDOW_FWHM * fwhm;
                adaptive_trapezoid(-half, half, 1e-6, 0.25 * gamma.min(*fwhm), |x| {
                    self.density(x) / Complex64::new(0.5 * gamma, delta - x)
                })
            }
            InhomogeneousDistribution::Sampled(s) => {
                let vals: Vec<Complex64> = s
                    .offsets
                    .iter()
                    .zip(&s.density)
                    .map(|(&x, &p)| p / Complex64::new(0.5 * gamma, delta - x))
                    .collect();
                trapezoid_c(&s.offsets, &vals)
            }
        })
    }

    /// Offset at cumulative probability `u` of the untruncated density.
    fn quantile(&self, u: f64) -> f64 {
        match self {
            InhomogeneousDistribution::Lorentzian { fwhm } => {
                0.5 * fwhm * (std::f64::consts::PI * (u - 0.5)).tan()
            }
            InhomogeneousDistribution::Gaussian { fwhm } => {
                let n = Normal::new(0.0, fwhm / FWHM_PER_SIGMA).expect("positive width");
                n.inverse_cdf(u)
            }
            InhomogeneousDistribution::Sampled(s) => {
                let target = u * s.mass;
                let mut acc = 0.0;
                for i in 1..s.offsets.len() {
                    let dx = s.offsets[i] - s.offsets[i - 1];
                    let seg = 0.5 * dx * (s.density[i] + s.density[i - 1]);
                    if acc + seg >= target && seg > 0.0 {
                        let t = (target - acc) / seg;
                        return s.offsets[i - 1] + t * dx;
                    }
                    acc += seg;
                }
                *s.offsets.last().unwrap()
            }
        }
    }
}

/// One group of spins sharing a detuning from the line centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinBin {
    pub offset: f64,
    pub weight: f64,
}

/// Equal-mass binning by inverse-CDF placement at the mass midpoints.
///
/// Analytic densities are binned over the full line with positions clipped
/// to ±20 FWHM, so every bin carries weight 1/M and the tails keep their
/// mass. Sampled densities keep their tabulated mass.
pub fn bin_distribution(dist: &InhomogeneousDistribution, m: usize) -> Result<Vec<SpinBin>> {
    if m == 0 || m % 2 == 0 {
        return Err(Error::invalid(
            "bins",
            format!("bin count must be odd so a bin sits on the line centre, got {m}"),
        ));
    }
    dist.validate()?;
    let (mass, clip) = match dist {
        InhomogeneousDistribution::Sampled(s) => (s.mass, f64::INFINITY),
        _ => (1.0, DEFAULT_WINDOW_FWHM * dist.fwhm()),
    };
    let w = mass / m as f64;
    let mut bins = vec![SpinBin { offset: 0.0, weight: w }; m];
    let half = m / 2;
    let symmetric = !matches!(dist, InhomogeneousDistribution::Sampled(_));
    for k in 0..m {
        let u = (k as f64 + 0.5) / m as f64;
        let x = if symmetric && k > half {
            -bins[m - 1 - k].offset
        } else if symmetric && k == half {
            0.0
        } else {
            dist.quantile(u).clamp(-clip, clip)
        };
        bins[k].offset = x;
    }
    Ok(bins)
}

/// Uniform midpoint quadrature bins over ±`window_fwhm`·FWHM with weights
/// `P(x)·dx`. Weights are not renormalized.
pub fn quadrature_bins(
    dist: &InhomogeneousDistribution,
    m: usize,
    window_fwhm: f64,
) -> Result<Vec<SpinBin>> {
    if m == 0 {
        return Err(Error::invalid("bins", "bin count must be >= 1"));
    }
    dist.validate()?;
    let fwhm = dist.fwhm();
    if fwhm == 0.0 {
        return Ok(vec![SpinBin {
            offset: 0.0,
            weight: 1.0,
        }]);
    }
    let half = window_fwhm * fwhm;
    let dx = 2.0 * half / m as f64;
    Ok((0..m)
        .map(|k| {
            let x = -half + (k as f64 + 0.5) * dx;
            SpinBin {
                offset: x,
                weight: dist.density(x) * dx,
            }
        })
        .collect())
}

/// Replicate per-line bins over the hyperfine lines. Offsets become
/// relative to ω_s; weights are divided by the line count so that a full
/// ensemble sums to one.
pub fn replicate_over_lines(bins: &[SpinBin], line_offsets: &[f64]) -> Vec<SpinBin> {
    let n = line_offsets.len() as f64;
    line_offsets
        .iter()
        .flat_map(|&c| {
            bins.iter().map(move |b| SpinBin {
                offset: c + b.offset,
                weight: b.weight / n,
            })
        })
        .collect()
}

pub(crate) fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

fn trapezoid_c(xs: &[f64], ys: &[Complex64]) -> Complex64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[0] + y[1]) * (0.5 * (x[1] - x[0])))
        .sum()
}

/// Trapezoid rule on a uniform grid, doubled until successive estimates
/// agree to `rel_tol` and the spacing is below `max_spacing`.
fn adaptive_trapezoid<F: Fn(f64) -> Complex64>(
    a: f64,
    b: f64,
    rel_tol: f64,
    max_spacing: f64,
    f: F,
) -> Complex64 {
    let mut n = 256usize;
    let mut h = (b - a) / n as f64;
    let mut sum: Complex64 = (f(a) + f(b)) * 0.5 + (1..n).map(|k| f(a + k as f64 * h)).sum::<Complex64>();
    let mut est = sum * h;
    loop {
        let mids: Complex64 = (0..n).map(|k| f(a + (k as f64 + 0.5) * h)).sum();
        sum += mids;
        n *= 2;
        h *= 0.5;
        let next = sum * h;
        let converged = (next - est).norm() <= rel_tol * next.norm();
        est = next;
        if (converged && h <= max_spacing) || n >= 1 << 24 {
            return est;
        }
    }
}
