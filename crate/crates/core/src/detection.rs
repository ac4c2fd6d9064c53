//! Frame admission control and event segmentation.
//!
//! A frame is admitted when it is loud enough (RMS) or spectrally structured
//! enough (low normalized spectral entropy). Runs of admitted frames become
//! segments bounded to 0.4–2.7 s.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{frames_of, Frame, FRAME_LEN, SAMPLE_RATE};
use crate::dsp::{windowed_spectrum, MagnitudeSpectrum};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid admission config: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmissionConfig {
    /// Minimum RMS for amplitude admission (0.01 is about -40 dBFS).
    pub rms_min: f64,
    /// Maximum normalized entropy `H / ln(n)` for structure admission.
    pub entropy_max_norm: f64,
    /// Consecutive rejected frames that close a segment.
    pub hangover_frames: usize,
    pub min_len_s: f64,
    pub max_len_s: f64,
}

impl Default for AdmissionConfig {
    fn default() -> Self {
        Self {
            rms_min: 0.01,
            entropy_max_norm: 0.75,
            hangover_frames: 14,
            min_len_s: 0.4,
            max_len_s: 2.7,
        }
    }
}

impl AdmissionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rms_min > 0.0 && self.rms_min < 1.0) {
            return Err(ConfigError::Invalid("rms_min must be in (0, 1)"));
        }
        if !(self.entropy_max_norm > 0.0 && self.entropy_max_norm <= 1.0) {
            return Err(ConfigError::Invalid("entropy_max_norm must be in (0, 1]"));
        }
        if self.hangover_frames < 1 {
            return Err(ConfigError::Invalid("hangover_frames must be at least 1"));
        }
        if !(self.min_len_s >= 0.0 && self.min_len_s < self.max_len_s) {
            return Err(ConfigError::Invalid("min_len_s must be below max_len_s"));
        }
        Ok(())
    }

    fn min_samples(&self) -> usize {
        (self.min_len_s * SAMPLE_RATE as f64).round() as usize
    }

    fn max_samples(&self) -> usize {
        (self.max_len_s * SAMPLE_RATE as f64).round() as usize
    }
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Shannon entropy (nats) of the magnitude spectrum treated as a distribution.
/// An all-zero spectrum is maximally uninformative: `ln(n)`.
pub fn spectral_entropy(spec: &MagnitudeSpectrum) -> f64 {
    let mags = spec.magnitudes();
    let total: f64 = mags.iter().sum();
    if total <= 0.0 {
        return (mags.len() as f64).ln();
    }
    -mags
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            p * p.ln()
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmitReason {
    Amplitude,
    Structure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admit(AdmitReason),
    Reject,
}

impl Admission {
    pub fn is_admitted(self) -> bool {
        matches!(self, Admission::Admit(_))
    }
}

pub fn admit_frame(frame: &Frame, cfg: &AdmissionConfig) -> Admission {
    if rms(&frame.samples) >= cfg.rms_min {
        return Admission::Admit(AdmitReason::Amplitude);
    }
    let spec = windowed_spectrum(&frame.samples).expect("frames are FRAME_LEN long");
    let max_entropy = (spec.len() as f64).ln();
    if spectral_entropy(&spec) / max_entropy <= cfg.entropy_max_norm {
        Admission::Admit(AdmitReason::Structure)
    } else {
        Admission::Reject
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Silence,
    MaxLength,
    UserStop,
    /// The source ran out while the segment was open.
    EndOfStream,
}

/// An admitted stretch of audio, sample-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEvent {
    /// Absolute stream offsets, `end` exclusive.
    pub start_sample: usize,
    pub end_sample: usize,
    pub samples: Vec<f64>,
    pub end_reason: EndReason,
}

impl SegmentEvent {
    pub fn start_time(&self) -> f64 {
        self.start_sample as f64 / SAMPLE_RATE as f64
    }

    pub fn end_time(&self) -> f64 {
        self.end_sample as f64 / SAMPLE_RATE as f64
    }

    pub fn duration(&self) -> f64 {
        (self.end_sample - self.start_sample) as f64 / SAMPLE_RATE as f64
    }

    /// Analysis frames of the segment, re-framed from its first sample.
    pub fn frames(&self) -> Vec<Frame> {
        frames_of(&self.samples, self.start_sample)
    }
}

/// What the segmenter did with one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStep {
    pub admission: Admission,
    /// Whether a segment is open after this frame.
    pub active: bool,
    pub emitted: Vec<SegmentEvent>,
}

/// Streaming segmenter. Feed frames in stream order.
pub struct Segmenter {
    cfg: AdmissionConfig,
    /// Samples since the open segment's start (includes trailing rejections).
    buffer: Vec<f64>,
    start: Option<usize>,
    /// End of the last admitted frame.
    last_admitted_end: usize,
    rejected_run: usize,
}

impl Segmenter {
    pub fn new(cfg: AdmissionConfig) -> Self {
        Self {
            cfg,
            buffer: Vec::new(),
            start: None,
            last_admitted_end: 0,
            rejected_run: 0,
        }
    }

    pub fn config(&self) -> &AdmissionConfig {
        &self.cfg
    }

    pub fn is_active(&self) -> bool {
        self.start.is_some()
    }

    pub fn push(&mut self, frame: &Frame) -> SegmentStep {
        let admission = admit_frame(frame, &self.cfg);
        let mut emitted = Vec::new();
        match admission {
            Admission::Admit(_) => {
                if self.start.is_none() {
                    self.start = Some(frame.start);
                    self.buffer.clear();
                }
                self.buffer.extend_from_slice(frame.valid());
                self.last_admitted_end = frame.end();
                self.rejected_run = 0;
                let max = self.cfg.max_samples();
                while let Some(start) = self.start {
                    if self.last_admitted_end - start < max {
                        break;
                    }
                    let tail = self.buffer.split_off(max);
                    let samples = std::mem::replace(&mut self.buffer, tail);
                    emitted.push(SegmentEvent {
                        start_sample: start,
                        end_sample: start + max,
                        samples,
                        end_reason: EndReason::MaxLength,
                    });
                    self.start = if self.buffer.is_empty() {
                        None
                    } else {
                        Some(start + max)
                    };
                }
            }
            Admission::Reject => {
                if self.start.is_some() {
                    self.buffer.extend_from_slice(frame.valid());
                    self.rejected_run += 1;
                    if self.rejected_run >= self.cfg.hangover_frames {
                        emitted.extend(self.close(EndReason::Silence));
                    }
                }
            }
        }
        SegmentStep {
            admission,
            active: self.start.is_some(),
            emitted,
        }
    }

    /// Close the open segment at user request.
    pub fn user_stop(&mut self) -> Option<SegmentEvent> {
        self.close(EndReason::UserStop)
    }

    /// Close the open segment because the stream ended.
    pub fn finish(&mut self) -> Option<SegmentEvent> {
        self.close(EndReason::EndOfStream)
    }

    fn close(&mut self, reason: EndReason) -> Option<SegmentEvent> {
        let start = self.start.take()?;
        self.rejected_run = 0;
        let end = self.last_admitted_end.max(start);
        let mut samples = std::mem::take(&mut self.buffer);
        samples.truncate(end - start);
        (end - start >= self.cfg.min_samples()).then_some(SegmentEvent {
            start_sample: start,
            end_sample: end,
            samples,
            end_reason: reason,
        })
    }
}

/// Runs a whole frame sequence through a fresh segmenter.
pub fn segment(frames: impl IntoIterator<Item = Frame>, cfg: &AdmissionConfig) -> Vec<SegmentEvent> {
    let mut seg = Segmenter::new(cfg.clone());
    let mut out = Vec::new();
    for frame in frames {
        out.extend(seg.push(&frame).emitted);
    }
    out.extend(seg.finish());
    out
}

/// Frames per second at the analysis frame size.
pub fn frames_per_second() -> f64 {
    SAMPLE_RATE as f64 / FRAME_LEN as f64
}
