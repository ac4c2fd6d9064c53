//! Windowing, magnitude spectra and spectrogram columns.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor added before taking logarithms of magnitudes.
pub const LOG_EPS: f64 = 1e-10;
/// Samples per spectrogram column (two analysis frames).
pub const DISPLAY_FFT_LEN: usize = 2048;
/// Dynamic range of the spectrogram display.
pub const DISPLAY_RANGE_DB: f64 = 80.0;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("window length must be at least 2, got {0}")]
    WindowTooShort(usize),
    #[error("FFT length must be a power of two, got {0}")]
    NotPowerOfTwo(usize),
    #[error("spectrum lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rolloff cutoff must be in (0, 1], got {0}")]
    BadCutoff(f64),
}

/// Periodic Hann window: `0.5 * (1 - cos(2πk/n))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>, DspError> {
    if n < 2 {
        return Err(DspError::WindowTooShort(n));
    }
    Ok((0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos()))
        .collect())
}

pub(crate) fn cached_hann(n: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<Vec<(usize, Arc<Vec<f64>>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap();
    if let Some((_, w)) = guard.iter().find(|(len, _)| *len == n) {
        return w.clone();
    }
    let w = Arc::new(hann_window(n).expect("cached windows are never shorter than 2"));
    guard.push((n, w.clone()));
    w
}

fn plan(n: usize) -> Arc<dyn Fft<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER
        .get_or_init(|| Mutex::new(FftPlanner::new()))
        .lock()
        .unwrap()
        .plan_fft_forward(n)
}

/// Non-negative magnitudes of the first `fft_size / 2` DFT bins.
///
/// The Nyquist bin is not part of the spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeSpectrum {
    magnitudes: Vec<f64>,
    fft_size: usize,
}

impl MagnitudeSpectrum {
    pub fn from_magnitudes(magnitudes: Vec<f64>) -> Self {
        let fft_size = magnitudes.len() * 2;
        Self {
            magnitudes,
            fft_size,
        }
    }

    pub fn zeros(bins: usize) -> Self {
        Self::from_magnitudes(vec![0.0; bins])
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }
}

pub fn fft_magnitude(frame: &[f64]) -> Result<MagnitudeSpectrum, DspError> {
    let n = frame.len();
    if n < 2 || !n.is_power_of_two() {
        return Err(DspError::NotPowerOfTwo(n));
    }
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    plan(n).process(&mut buf);
    Ok(MagnitudeSpectrum {
        magnitudes: buf[..n / 2].iter().map(|c| c.norm()).collect(),
        fft_size: n,
    })
}

/// Hann-windowed magnitude spectrum, the analysis view of one frame.
pub fn windowed_spectrum(frame: &[f64]) -> Result<MagnitudeSpectrum, DspError> {
    if frame.len() < 2 {
        return Err(DspError::WindowTooShort(frame.len()));
    }
    let w = cached_hann(frame.len());
    let windowed: Vec<f64> = frame.iter().zip(w.iter()).map(|(x, w)| x * w).collect();
    fft_magnitude(&windowed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnState {
    /// Signal is only being captured.
    Monitor,
    /// A segment is being recorded or recognized.
    Active,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramColumn {
    pub values: Vec<f64>,
    pub timestamp: f64,
    pub state: ColumnState,
}

impl SpectrogramColumn {
    /// 8-bit quantization used on the wire.
    pub fn quantized(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Display column from 2048 samples.
///
/// Magnitudes are scaled by `2/N` so that a full-scale sinusoid centred on a
/// bin reads 0 dBFS, then mapped from [-80, 0] dB onto [0, 1].
pub fn spectrogram_column(
    frame: &[f64],
    timestamp: f64,
    state: ColumnState,
) -> Result<SpectrogramColumn, DspError> {
    if frame.len() != DISPLAY_FFT_LEN {
        return Err(DspError::LengthMismatch(frame.len(), DISPLAY_FFT_LEN));
    }
    let spec = fft_magnitude(frame)?;
    let scale = 2.0 / DISPLAY_FFT_LEN as f64;
    let values = spec
        .magnitudes
        .iter()
        .map(|&m| display_level(m * scale))
        .collect();
    Ok(SpectrogramColumn {
        values,
        timestamp,
        state,
    })
}

pub fn display_level(amplitude: f64) -> f64 {
    ((20.0 * (amplitude + LOG_EPS).log10() + DISPLAY_RANGE_DB) / DISPLAY_RANGE_DB).clamp(0.0, 1.0)
}

/// Display quality presets: columns per second shown to the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRate {
    #[default]
    High,
    Medium,
    Low,
}

impl ColumnRate {
    pub fn from_per_second(rate: u32) -> Option<Self> {
        match rate {
            23 => Some(Self::High),
            12 => Some(Self::Medium),
            8 => Some(Self::Low),
            _ => None,
        }
    }

    pub fn per_second(self) -> u32 {
        match self {
            Self::High => 23,
            Self::Medium => 12,
            Self::Low => 8,
        }
    }

    /// Keep one produced column out of this many. Columns are produced at
    /// 48000 / 2048 = 23.4 per second.
    pub fn decimation(self) -> usize {
        match self {
            Self::High => 1,
            Self::Medium => 2,
            Self::Low => 3,
        }
    }
}
