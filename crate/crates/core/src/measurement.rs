//! Synthetic detector traces, Welch PSD estimation and test-coil field
//! recovery.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::model::{constants, TWO_PI};
use crate::sensitivity::{FieldConversion, OperatingPoint};

pub const DEFAULT_SAMPLE_RATE: f64 = 200e3;
pub const DEFAULT_SEGMENT_LEN: usize = 8192;

/// Circular test coil on the sensor axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoilSpec {
    pub turns: f64,
    pub radius_m: f64,
    pub distance_m: f64,
    pub current_a: f64,
}

impl CoilSpec {
    /// 400 turns, 7 cm radius, 22 cm away, 43 mA.
    pub fn calibration() -> Self {
        CoilSpec {
            turns: 400.0,
            radius_m: 0.07,
            distance_m: 0.22,
            current_a: 0.043,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("coil.turns", self.turns)?;
        ensure_positive("coil.radius_m", self.radius_m)?;
        ensure_non_negative("coil.distance_m", self.distance_m)?;
        ensure_positive("coil.current_a", self.current_a)
    }
}

/// On-axis field μ0 r² N I / (2 (d² + r²)^{3/2}).
pub fn coil_field(coil: &CoilSpec) -> f64 {
    let r2 = coil.radius_m * coil.radius_m;
    constants::MU_0 * r2 * coil.turns * coil.current_a
        / (2.0 * (coil.distance_m * coil.distance_m + r2).powf(1.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    /// Hz.
    pub fs: f64,
    /// V.
    pub samples: Vec<f64>,
}

impl TimeTrace {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn variance(&self) -> f64 {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        self.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (TWO_PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub segment_len: usize,
    /// Fraction of a segment shared with the next, in [0, 1).
    pub overlap: f64,
    pub window: Window,
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig {
            segment_len: DEFAULT_SEGMENT_LEN,
            overlap: 0.5,
            window: Window::Hann,
        }
    }
}

/// Single-sided PSD on the non-negative FFT bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    /// V²/Hz.
    pub psd: Vec<f64>,
    pub df: f64,
    pub n_segments: usize,
}

impl Psd {
    /// ∫ PSD df over bins whose frequency lies in [f_lo, f_hi].
    pub fn band_power(&self, f_lo: f64, f_hi: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, p)| p * self.df)
            .sum()
    }

    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df
    }

    /// Median PSD over bins in [f_lo, f_hi].
    pub fn median_in(&self, f_lo: f64, f_hi: f64) -> f64 {
        let mut v: Vec<f64> = self
            .freqs
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, p)| *p)
            .collect();
        median(&mut v)
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Averaged modified periodogram, normalized so that a sinusoid of
/// amplitude a integrates to a²/2 and white noise of variance σ² to σ².
pub fn welch_psd(trace: &TimeTrace, cfg: &WelchConfig) -> Result<Psd> {
    let n = cfg.segment_len;
    if n < 2 {
        return Err(Error::invalid("welch.segment_len", "must be at least 2"));
    }
    if n > trace.samples.len() {
        return Err(Error::invalid(
            "welch.segment_len",
            format!("segment of {n} exceeds trace length {}", trace.samples.len()),
        ));
    }
    if !(0.0..1.0).contains(&cfg.overlap) {
        return Err(Error::invalid("welch.overlap", "must lie in [0, 1)"));
    }
    ensure_positive("fs", trace.fs)?;
    let step = ((n as f64 * (1.0 - cfg.overlap)).round() as usize).max(1);
    let n_seg = (trace.samples.len() - n) / step + 1;
    let w = cfg.window.coefficients(n);
    let w2: f64 = w.iter().map(|x| x * x).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let half = n / 2 + 1;
    let periodograms: Vec<Vec<f64>> = (0..n_seg)
        .into_par_iter()
        .map(|s| {
            let seg = &trace.samples[s * step..s * step + n];
            let mut buf: Vec<Complex64> = seg.iter().zip(&w).map(|(x, wi)| Complex64::new(x * wi, 0.0)).collect();
            fft.process(&mut buf);
            buf[..half].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect();
    let scale = 1.0 / (trace.fs * w2 * n_seg as f64);
    let mut psd = vec![0.0; half];
    for p in &periodograms {
        for (acc, v) in psd.iter_mut().zip(p) {
            *acc += v;
        }
    }
    for (k, v) in psd.iter_mut().enumerate() {
        let doubled = k != 0 && !(n % 2 == 0 && k == n / 2);
        *v *= scale * if doubled { 2.0 } else { 1.0 };
    }
    let df = trace.fs / n as f64;
    Ok(Psd {
        freqs: (0..half).map(|k| k as f64 * df).collect(),
        psd,
        df,
        n_segments: n_seg,
    })
}

/// Applied field as a function of time, T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldWaveform {
    Zero,
    Sine {
        amplitude_t: f64,
        freq_hz: f64,
        #[serde(default)]
        phase_rad: f64,
    },
    Step {
        amplitude_t: f64,
        t0_s: f64,
    },
    Sum {
        parts: Vec<FieldWaveform>,
    },
}

impl FieldWaveform {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            FieldWaveform::Zero => 0.0,
            FieldWaveform::Sine {
                amplitude_t,
                freq_hz,
                phase_rad,
            } => amplitude_t * (TWO_PI * freq_hz * t + phase_rad).sin(),
            FieldWaveform::Step { amplitude_t, t0_s } => {
                if t >= *t0_s {
                    *amplitude_t
                } else {
                    0.0
                }
            }
            FieldWaveform::Sum { parts } => parts.iter().map(|p| p.value(t)).sum(),
        }
    }

    pub fn max_frequency(&self) -> f64 {
        match self {
            FieldWaveform::Sine { freq_hz, .. } => *freq_hz,
            FieldWaveform::Sum { parts } => parts.iter().map(|p| p.max_frequency()).fold(0.0, f64::max),
            _ => 0.0,
        }
    }
}

/// Output-plane noise density used for synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseShape {
    Flat(f64),
    /// (Hz, V²/Hz) pairs, linearly interpolated and held at the ends.
    Table(Vec<(f64, f64)>),
}

impl NoiseShape {
    pub fn at(&self, f: f64) -> f64 {
        match self {
            NoiseShape::Flat(l) => *l,
            NoiseShape::Table(t) => {
                if t.is_empty() {
                    return 0.0;
                }
                if f <= t[0].0 {
                    return t[0].1;
                }
                for w in t.windows(2) {
                    if f <= w[1].0 {
                        let u = (f - w[0].0) / (w[1].0 - w[0].0);
                        return w[0].1 + u * (w[1].1 - w[0].1);
                    }
                }
                t[t.len() - 1].1
            }
        }
    }
}

/// Complex time series of `n` samples whose spectrum is Hermitian with
/// single-sided density `noise`; the imaginary part vanishes up to rounding.
pub fn hermitian_noise(noise: &NoiseShape, fs: f64, n: usize, seed: u64) -> Result<Vec<Complex64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    let df = fs / n as f64;
    let half = n / 2;
    for k in 0..=half {
        let l = noise.at(k as f64 * df);
        if l < 0.0 || !l.is_finite() {
            return Err(Error::invalid("noise", "density must be finite and non-negative"));
        }
        let a: f64 = StandardNormal.sample(&mut rng);
        if k == 0 || (n % 2 == 0 && k == half) {
            spec[k] = Complex64::new((l * n as f64 * fs / 2.0).sqrt() * a, 0.0);
        } else {
            let b: f64 = StandardNormal.sample(&mut rng);
            let c = Complex64::new(a, b) * (l * n as f64 * fs / 4.0).sqrt();
            spec[k] = c;
            spec[n - k] = c.conj();
        }
    }
    FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut spec);
    let inv_n = 1.0 / n as f64;
    spec.iter_mut().for_each(|c| *c *= inv_n);
    Ok(spec)
}

/// Detector trace: S·A·B(t) plus Gaussian noise of density `noise`,
/// synthesized in the frequency domain with Hermitian symmetry.
pub fn synthesize_trace(
    s_v_per_hz: f64,
    noise: &NoiseShape,
    waveform: &FieldWaveform,
    fs: f64,
    duration: f64,
    seed: u64,
) -> Result<TimeTrace> {
    ensure_positive("fs", fs)?;
    ensure_positive("duration", duration)?;
    let n = (fs * duration).round() as usize;
    if n < 2 {
        return Err(Error::invalid("duration", "trace must contain at least two samples"));
    }
    if waveform.max_frequency() >= fs / 2.0 {
        return Err(Error::invalid("waveform.freq_hz", "must lie below fs/2"));
    }
    let noise_t = hermitian_noise(noise, fs, n, seed)?;
    let gain = s_v_per_hz * FieldConversion::default().a_hz;
    let samples = noise_t
        .par_iter()
        .enumerate()
        .map(|(j, c)| c.re + gain * waveform.value(j as f64 / fs))
        .collect();
    Ok(TimeTrace { fs, samples })
}

/// Synthesis at an operating point with its flat noise floor.
pub fn synthesize_at(
    op: &OperatingPoint,
    waveform: &FieldWaveform,
    fs: f64,
    duration: f64,
    seed: u64,
) -> Result<TimeTrace> {
    synthesize_trace(op.s, &NoiseShape::Flat(op.l), waveform, fs, duration, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub reference_t: f64,
    /// (estimate − reference)/reference.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEstimate {
    /// Tone amplitude, T.
    pub amplitude_t: f64,
    pub snr: f64,
    pub low_snr: bool,
    pub noise_floor_v2hz: f64,
    pub comparisons: Vec<ReferenceComparison>,
}

pub fn compare_to_references(estimate_t: f64, references_t: &[f64]) -> Vec<ReferenceComparison> {
    references_t
        .iter()
        .map(|&r| ReferenceComparison {
            reference_t: r,
            relative_error: (estimate_t - r) / r,
        })
        .collect()
}

const PEAK_HALF_WIDTH_BINS: usize = 6;
const MIN_TONE_BINS: f64 = 20.0;

/// Amplitude of a tone at `freq_hz` from the Welch PSD, with the noise floor
/// subtracted.
pub fn recover_field(
    trace: &TimeTrace,
    s_v_per_hz: f64,
    freq_hz: f64,
    references_t: &[f64],
) -> Result<FieldEstimate> {
    ensure_positive("freq_hz", freq_hz)?;
    if !(s_v_per_hz > 0.0) {
        return Err(Error::ZeroSignal);
    }
    let want = (MIN_TONE_BINS * trace.fs / freq_hz).ceil() as usize;
    let seg = want.next_power_of_two().max(DEFAULT_SEGMENT_LEN).min(trace.samples.len());
    let psd = welch_psd(
        trace,
        &WelchConfig {
            segment_len: seg,
            ..Default::default()
        },
    )?;
    let k0 = (freq_hz / psd.df).round() as usize;
    let w = PEAK_HALF_WIDTH_BINS;
    let lo = k0.saturating_sub(w).max(1);
    let hi = (k0 + w).min(psd.psd.len() - 1);
    let peak: f64 = psd.psd[lo..=hi].iter().sum::<f64>() * psd.df;
    let mut side: Vec<f64> = (k0.saturating_sub(20 * w).max(1)..(k0 + 20 * w).min(psd.psd.len()))
        .filter(|&k| k + 2 * w < k0 || k > k0 + 2 * w)
        .map(|k| psd.psd[k])
        .collect();
    let floor = median(&mut side);
    let floor_power = floor * psd.df * (hi - lo + 1) as f64;
    let tone = (peak - floor_power).max(0.0);
    let sigma = floor_power / (psd.n_segments as f64).sqrt();
    let snr = if sigma > 0.0 { tone / sigma } else { f64::INFINITY };
    let amplitude_t = (2.0 * tone).sqrt() / (s_v_per_hz * FieldConversion::default().a_hz);
    if snr < 3.0 {
        log::warn!("recover_field: SNR {snr:.2} below 3");
    }
    Ok(FieldEstimate {
        amplitude_t,
        snr,
        low_snr: snr < 3.0,
        noise_floor_v2hz: floor,
        comparisons: compare_to_references(amplitude_t, references_t),
    })
}

/// √(median PSD in [f_lo, f_hi])/(S·A).
pub fn sensitivity_from_psd(psd: &Psd, s_v_per_hz: f64, f_lo: f64, f_hi: f64) -> f64 {
    psd.median_in(f_lo, f_hi).sqrt() / (s_v_per_hz * FieldConversion::default().a_hz)
}
