//! Per-window descriptors and the 54-value segment vector.
//!
//! Each window yields 27 scalars in a fixed order (rolloff, flux, flux std,
//! compactness, variability, 13 MFCCs, 9 LPCs). A segment vector holds their
//! means in slots 0..27 and their population standard deviations in 27..54.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{Frame, FRAME_LEN, SAMPLE_RATE};
use crate::dsp::{cached_hann, fft_magnitude, DspError, MagnitudeSpectrum, LOG_EPS};

pub const WINDOW_FEATURES: usize = 27;
pub const VECTOR_LEN: usize = 2 * WINDOW_FEATURES;
pub const MFCC_COUNT: usize = 13;
pub const MEL_FILTERS: usize = 26;
pub const LPC_ORDER: usize = 9;
pub const ROLLOFF_CUTOFF: f64 = 0.85;
/// Trailing window count used for the flux standard deviation.
pub const FLUX_HISTORY: usize = 10;

/// Slot names in vector order, used for CSV headers and diagnostics.
pub fn feature_names() -> Vec<String> {
    let mut base = vec![
        "rolloff".to_string(),
        "flux".to_string(),
        "flux_std".to_string(),
        "compactness".to_string(),
        "variability".to_string(),
    ];
    base.extend((0..MFCC_COUNT).map(|i| format!("mfcc{i}")));
    base.extend((1..=LPC_ORDER).map(|i| format!("lpc{i}")));
    let mut names: Vec<String> = base.iter().map(|n| format!("{n}_mean")).collect();
    names.extend(base.iter().map(|n| format!("{n}_std")));
    names
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("a segment needs at least one frame")]
    NoFrames,
    #[error("feature vector must have {VECTOR_LEN} values, got {0}")]
    WrongLength(usize),
    #[error("feature value at position {0} is not finite")]
    NotFinite(usize),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowFeatures {
    pub rolloff: f64,
    pub flux: f64,
    pub flux_std: f64,
    pub compactness: f64,
    pub variability: f64,
    pub mfcc: [f64; MFCC_COUNT],
    pub lpc: [f64; LPC_ORDER],
}

impl WindowFeatures {
    pub fn to_array(&self) -> [f64; WINDOW_FEATURES] {
        let mut out = [0.0; WINDOW_FEATURES];
        out[0] = self.rolloff;
        out[1] = self.flux;
        out[2] = self.flux_std;
        out[3] = self.compactness;
        out[4] = self.variability;
        out[5..5 + MFCC_COUNT].copy_from_slice(&self.mfcc);
        out[5 + MFCC_COUNT..].copy_from_slice(&self.lpc);
        out
    }
}

/// The 54-value descriptor stored with every sound record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.len() != VECTOR_LEN {
            return Err(FeatureError::WrongLength(values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NotFinite(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn means(&self) -> &[f64] {
        &self.0[..WINDOW_FEATURES]
    }

    pub fn stds(&self) -> &[f64] {
        &self.0[WINDOW_FEATURES..]
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = FeatureError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn spectral_rolloff(spec: &MagnitudeSpectrum, cutoff: f64) -> Result<f64, DspError> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(DspError::BadCutoff(cutoff));
    }
    let mags = spec.magnitudes();
    let total: f64 = mags.iter().map(|m| m * m).sum();
    if total == 0.0 || mags.is_empty() {
        return Ok(0.0);
    }
    let target = cutoff * total;
    let mut acc = 0.0;
    for (k, m) in mags.iter().enumerate() {
        acc += m * m;
        if acc >= target {
            return Ok(k as f64 / mags.len() as f64);
        }
    }
    // rounding can leave acc a hair under target when cutoff == 1
    Ok((mags.len() - 1) as f64 / mags.len() as f64)
}

pub fn spectral_flux(current: &MagnitudeSpectrum, previous: &MagnitudeSpectrum) -> Result<f64, DspError> {
    if current.len() != previous.len() {
        return Err(DspError::LengthMismatch(current.len(), previous.len()));
    }
    Ok(current
        .magnitudes()
        .iter()
        .zip(previous.magnitudes())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation; 0 for fewer than two values.
pub fn population_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn flux_std(history: &[f64]) -> f64 {
    population_std(history)
}

pub fn compactness(spec: &MagnitudeSpectrum) -> f64 {
    let logs: Vec<f64> = spec
        .magnitudes()
        .iter()
        .map(|m| 20.0 * (m + LOG_EPS).log10())
        .collect();
    logs.windows(3)
        .map(|w| (w[1] - (w[0] + w[1] + w[2]) / 3.0).abs())
        .sum()
}

pub fn spectral_variability(spec: &MagnitudeSpectrum) -> f64 {
    population_std(spec.magnitudes())
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on a mel-spaced grid between 0 Hz and Nyquist,
/// each stored as (first bin, weights).
struct MelBank {
    filters: Vec<(usize, Vec<f64>)>,
    dct: Vec<[f64; MEL_FILTERS]>,
}

impl MelBank {
    fn new(bins: usize, sample_rate: f64) -> Self {
        let fft_len = 2 * bins;
        let top = hz_to_mel(sample_rate / 2.0);
        let edges: Vec<f64> = (0..MEL_FILTERS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (MEL_FILTERS + 1) as f64))
            .collect();
        let filters = edges
            .windows(3)
            .map(|e| {
                let (lo, mid, hi) = (e[0], e[1], e[2]);
                let weights: Vec<(usize, f64)> = (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * sample_rate / fft_len as f64;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let first = weights.first().map_or(0, |(k, _)| *k);
                (first, weights.into_iter().map(|(_, w)| w).collect())
            })
            .collect();
        // orthonormal DCT-II rows
        let dct = (0..MFCC_COUNT)
            .map(|k| {
                let norm = if k == 0 {
                    (1.0 / MEL_FILTERS as f64).sqrt()
                } else {
                    (2.0 / MEL_FILTERS as f64).sqrt()
                };
                let mut row = [0.0; MEL_FILTERS];
                for (m, slot) in row.iter_mut().enumerate() {
                    *slot = norm * (PI * k as f64 * (m as f64 + 0.5) / MEL_FILTERS as f64).cos();
                }
                row
            })
            .collect();
        Self { filters, dct }
    }

    fn shared() -> &'static MelBank {
        static BANK: OnceLock<MelBank> = OnceLock::new();
        BANK.get_or_init(|| MelBank::new(FRAME_LEN / 2, SAMPLE_RATE as f64))
    }
}

/// 13 MFCCs from the magnitude spectrum of a 1024-sample frame at 48 kHz.
pub fn mfcc(spec: &MagnitudeSpectrum) -> [f64; MFCC_COUNT] {
    let bank = if spec.len() == FRAME_LEN / 2 {
        MelBank::shared()
    } else {
        // uncommon sizes get a throwaway bank
        return mfcc_with(&MelBank::new(spec.len(), SAMPLE_RATE as f64), spec);
    };
    mfcc_with(bank, spec)
}

fn mfcc_with(bank: &MelBank, spec: &MagnitudeSpectrum) -> [f64; MFCC_COUNT] {
    let mags = spec.magnitudes();
    let mut log_energy = [0.0; MEL_FILTERS];
    for (slot, (first, weights)) in log_energy.iter_mut().zip(&bank.filters) {
        let e: f64 = weights
            .iter()
            .zip(&mags[*first..])
            .map(|(w, m)| w * m * m)
            .sum();
        *slot = (e + LOG_EPS).ln();
    }
    let mut out = [0.0; MFCC_COUNT];
    for (c, row) in out.iter_mut().zip(&bank.dct) {
        *c = row.iter().zip(&log_energy).map(|(a, b)| a * b).sum();
    }
    out
}

/// Biased autocorrelation lags 0..=order.
pub fn autocorrelation(x: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|lag| {
            x.iter()
                .zip(x.iter().skip(lag))
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Levinson–Durbin on autocorrelation lags `r[0..=p]`.
///
/// Returns predictor coefficients `a` such that `x[t] ≈ Σ a[i] x[t-1-i]`.
/// A zero-energy input or a singular recursion yields zeros.
pub fn levinson_durbin(r: &[f64]) -> Vec<f64> {
    let order = r.len().saturating_sub(1);
    let mut a = vec![0.0; order];
    if order == 0 || r[0] <= 0.0 {
        return a;
    }
    let mut err = r[0];
    let mut prev = vec![0.0; order];
    for i in 0..order {
        let acc: f64 = r[i + 1] - (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        if err <= f64::EPSILON * r[0] {
            break;
        }
        let k = acc / err;
        prev[..i].copy_from_slice(&a[..i]);
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= 1.0 - k * k;
    }
    a
}

/// Order-9 linear prediction coefficients of an already windowed frame.
pub fn lpc(windowed: &[f64]) -> [f64; LPC_ORDER] {
    let r = autocorrelation(windowed, LPC_ORDER);
    let a = levinson_durbin(&r);
    let mut out = [0.0; LPC_ORDER];
    out.copy_from_slice(&a);
    out
}

/// Running extractor over the windows of one segment.
struct WindowAnalyzer {
    prev: Option<MagnitudeSpectrum>,
    flux_history: VecDeque<f64>,
}

impl WindowAnalyzer {
    fn new() -> Self {
        Self {
            prev: None,
            flux_history: VecDeque::with_capacity(FLUX_HISTORY),
        }
    }

    fn push(&mut self, samples: &[f64]) -> Result<WindowFeatures, FeatureError> {
        let window = cached_hann(samples.len());
        let windowed: Vec<f64> = samples.iter().zip(window.iter()).map(|(x, w)| x * w).collect();
        let spec = fft_magnitude(&windowed)?;
        let zero;
        let prev = match &self.prev {
            Some(p) => p,
            None => {
                zero = MagnitudeSpectrum::zeros(spec.len());
                &zero
            }
        };
        let flux = spectral_flux(&spec, prev)?;
        if self.flux_history.len() == FLUX_HISTORY {
            self.flux_history.pop_front();
        }
        self.flux_history.push_back(flux);
        let history: Vec<f64> = self.flux_history.iter().copied().collect();
        let features = WindowFeatures {
            rolloff: spectral_rolloff(&spec, ROLLOFF_CUTOFF)?,
            flux,
            flux_std: flux_std(&history),
            compactness: compactness(&spec),
            variability: spectral_variability(&spec),
            mfcc: mfcc(&spec),
            lpc: lpc(&windowed),
        };
        self.prev = Some(spec);
        Ok(features)
    }
}

/// Per-window features of a segment, in frame order.
pub fn window_features(frames: &[Frame]) -> Result<Vec<WindowFeatures>, FeatureError> {
    let mut analyzer = WindowAnalyzer::new();
    frames.iter().map(|f| analyzer.push(&f.samples)).collect()
}

pub fn aggregate(windows: &[WindowFeatures]) -> Result<FeatureVector, FeatureError> {
    if windows.is_empty() {
        return Err(FeatureError::NoFrames);
    }
    let rows: Vec<[f64; WINDOW_FEATURES]> = windows.iter().map(WindowFeatures::to_array).collect();
    let mut out = vec![0.0; VECTOR_LEN];
    let mut column = Vec::with_capacity(rows.len());
    for j in 0..WINDOW_FEATURES {
        column.clear();
        column.extend(rows.iter().map(|r| r[j]));
        out[j] = mean(&column);
        out[WINDOW_FEATURES + j] = population_std(&column);
    }
    FeatureVector::new(out)
}

pub fn extract_segment_features(frames: &[Frame]) -> Result<FeatureVector, FeatureError> {
    aggregate(&window_features(frames)?)
}
