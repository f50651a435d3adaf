//! Baseband synthesis and spectrum observations.
//!
//! A tuned receiver window is simulated in the time domain as a sum of mixed
//! tones plus circular complex Gaussian noise, then turned into a centered
//! periodogram and a normalized log-power observation vector.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use thiserror::Error;

/// Floor added to power before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;
/// Guard added to the standard deviation during normalization.
pub const STD_GUARD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid window: {0}")]
    Config(String),
    #[error("periodogram length {0} is not a power of two")]
    Size(usize),
}

/// A receiver window: center frequency, bandwidth and bin count, all in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub fc: f64,
    pub bw: f64,
    pub n_bins: usize,
}

impl WindowSpec {
    pub fn new(fc: f64, bw: f64, n_bins: usize) -> Result<Self, DspError> {
        let w = Self { fc, bw, n_bins };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if !(self.bw > 0.0) || !self.bw.is_finite() {
            return Err(DspError::Config(format!("bandwidth must be positive, got {}", self.bw)));
        }
        if self.n_bins < 8 || !self.n_bins.is_power_of_two() {
            return Err(DspError::Config(format!(
                "n_bins must be a power of two >= 8, got {}",
                self.n_bins
            )));
        }
        if !(self.fc > self.bw / 2.0) || !self.fc.is_finite() {
            return Err(DspError::Config(format!(
                "center frequency {} must exceed half the bandwidth {}",
                self.fc,
                self.bw / 2.0
            )));
        }
        Ok(())
    }

    pub fn low_edge(&self) -> f64 {
        self.fc - self.bw / 2.0
    }

    pub fn high_edge(&self) -> f64 {
        self.fc + self.bw / 2.0
    }

    /// Inclusive containment test against the window edges.
    pub fn contains(&self, freq: f64) -> bool {
        (freq - self.fc).abs() <= self.bw / 2.0
    }

    /// Baseband frequency (Hz, relative to `fc`) of periodogram bin `k`
    /// after rotation, so bin 0 sits at `-bw/2`.
    pub fn bin_offset_hz(&self, k: usize) -> f64 {
        (k as f64 - (self.n_bins / 2) as f64) * self.bw / self.n_bins as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneSpec {
    pub freq: f64,
    pub amplitude: f64,
}

/// Per-sample complex noise standard deviation (each component gets `sigma/√2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn new(sigma: f64) -> Result<Self, DspError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(DspError::Config(format!("noise sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    /// Noise level giving `snr_db = 10·log10(A²/σ²)` for a tone of amplitude `amplitude`.
    pub fn from_snr_db(snr_db: f64, amplitude: f64) -> Result<Self, DspError> {
        Self::new(amplitude * 10f64.powf(-snr_db / 20.0))
    }
}

/// Simulate one window of tuned, decimated receiver output.
///
/// Tones outside `[fc - bw/2, fc + bw/2]` are dropped; the rest are mixed to
/// baseband at normalized frequency `(f - fc) / bw`.
pub fn synth_baseband<R: Rng + ?Sized>(
    window: &WindowSpec,
    tones: &[ToneSpec],
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<Complex64>, DspError> {
    window.validate()?;
    let n = window.n_bins;
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for tone in tones.iter().filter(|t| window.contains(t.freq)) {
        let f_norm = (tone.freq - window.fc) / window.bw;
        let omega = 2.0 * std::f64::consts::PI * f_norm;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += Complex64::from_polar(tone.amplitude, omega * i as f64);
        }
    }
    let scale = noise.sigma / std::f64::consts::SQRT_2;
    for xi in x.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *xi += Complex64::new(re * scale, im * scale);
    }
    Ok(x)
}

/// `|DFT(x)|² / N`, rotated so index 0 is the lowest window frequency.
pub fn periodogram(x: &[Complex64]) -> Result<Vec<f64>, DspError> {
    let n = x.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(DspError::Size(n));
    }
    let mut buf = x.to_vec();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    fft.process(&mut buf);
    let mut p: Vec<f64> = buf.iter().map(|c| c.norm_sqr() / n as f64).collect();
    p.rotate_right(n / 2);
    Ok(p)
}

/// Log-power, then zero mean and (at most) unit standard deviation.
pub fn normalize_psd(p: &[f64]) -> Vec<f64> {
    if p.is_empty() {
        return Vec::new();
    }
    let db: Vec<f64> = p.iter().map(|&v| 10.0 * (v.max(0.0) + LOG_FLOOR).log10()).collect();
    let n = db.len() as f64;
    let mean = db.iter().sum::<f64>() / n;
    let var = db.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + STD_GUARD;
    db.iter().map(|d| (d - mean) / denom).collect()
}
