//! Synthetic sound corpus.
//!
//! Each class is a parametric recipe (tone stack, chirp, band noise, AM or FM
//! tone, click train). Instances jitter the recipe's frequency, level,
//! duration and phase, sit in low-level background noise, and go through the
//! same WAV -> detection -> features path as real recordings.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::audio::{decode_wav, encode_wav, frame_stream, SampleBuffer, SAMPLE_RATE};
use crate::detection::{segment, AdmissionConfig, SegmentEvent};
use crate::features::{extract_segment_features, FeatureError, FeatureVector};
use crate::kb::{KbError, KnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Recipe {
    /// Fundamental with decaying harmonics.
    Tone { freq: f64, harmonics: usize },
    /// Linear sweep.
    Chirp { from: f64, to: f64 },
    /// Sum of many random-phase partials inside a band.
    BandNoise { low: f64, high: f64 },
    Am { carrier: f64, rate: f64 },
    Fm { carrier: f64, deviation: f64, rate: f64 },
    /// Damped resonant clicks.
    Clicks { resonance: f64, rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClass {
    pub name: String,
    pub recipe: Recipe,
    pub level: f64,
    pub duration: f64,
}

const KINDS: [&str; 6] = ["tone", "chirp", "noise", "am", "fm", "clicks"];

/// Deterministic class catalogue; class `i` is the same for every corpus size.
pub fn class_catalogue(count: usize) -> Vec<SynthClass> {
    (0..count)
        .map(|i| {
            let kind = i % KINDS.len();
            let variant = i / KINDS.len();
            let v = variant as f64;
            let base = 220.0 * 1.55f64.powf(v + 0.37 * kind as f64);
            let recipe = match kind {
                0 => Recipe::Tone { freq: base, harmonics: 1 + (variant + 1) % 4 },
                1 => Recipe::Chirp { from: base, to: base * (2.5 + 0.5 * v) },
                2 => Recipe::BandNoise { low: base * 2.0, high: base * (3.0 + v) },
                3 => Recipe::Am { carrier: base * 1.5, rate: 4.0 + 3.0 * v },
                4 => Recipe::Fm { carrier: base * 1.5, deviation: base * 0.2, rate: 3.0 + 2.0 * v },
                _ => Recipe::Clicks { resonance: base * 3.0, rate: 6.0 + 4.0 * v },
            };
            SynthClass {
                name: format!("{}-{}", KINDS[kind], variant + 1),
                recipe,
                level: 0.04 * 1.06f64.powi(((i * 11) % 30) as i32),
                duration: 0.7 + 0.15 * ((i * 5) % 7) as f64,
            }
        })
        .collect()
}

fn envelope(t: f64, dur: f64) -> f64 {
    let ramp = 0.02;
    (t / ramp).min(1.0).min((dur - t) / ramp).max(0.0)
}

impl SynthClass {
    /// One jittered instance: background, event, background.
    pub fn render(&self, rng: &mut impl Rng) -> SampleBuffer {
        let sr = SAMPLE_RATE as f64;
        let fjit = 1.0 + rng.random_range(-0.03..0.03);
        let level = self.level * (1.0 + rng.random_range(-0.04..0.04));
        let dur = self.duration * (1.0 + rng.random_range(-0.1..0.1));
        let lead = rng.random_range(0.2..0.4);
        let tail = 0.45;
        let total = ((lead + dur + tail) * sr) as usize;
        let start = (lead * sr) as usize;
        let len = (dur * sr) as usize;
        let phase = rng.random_range(0.0..2.0 * PI);
        let partials: Vec<(f64, f64)> = match self.recipe {
            Recipe::BandNoise { low, high } => (0..80)
                .map(|_| (rng.random_range(low..high) * fjit, rng.random_range(0.0..2.0 * PI)))
                .collect(),
            _ => Vec::new(),
        };
        let background = Normal::new(0.0, 2e-4).unwrap();
        let mut out = Vec::with_capacity(total);
        for n in 0..total {
            let mut x = background.sample(rng);
            if n >= start && n < start + len {
                let t = (n - start) as f64 / sr;
                let s = match self.recipe {
                    Recipe::Tone { freq, harmonics } => (1..=harmonics)
                        .map(|h| (2.0 * PI * freq * fjit * h as f64 * t + phase * h as f64).sin() / h as f64)
                        .sum::<f64>(),
                    Recipe::Chirp { from, to } => {
                        let k = (to - from) * fjit / dur;
                        (2.0 * PI * (from * fjit * t + 0.5 * k * t * t) + phase).sin()
                    }
                    Recipe::BandNoise { .. } => {
                        partials.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>()
                            / (partials.len() as f64 / 2.0).sqrt()
                    }
                    Recipe::Am { carrier, rate } => {
                        (0.6 + 0.4 * (2.0 * PI * rate * t).sin()) * (2.0 * PI * carrier * fjit * t + phase).sin()
                    }
                    Recipe::Fm { carrier, deviation, rate } => {
                        let beta = deviation / rate;
                        (2.0 * PI * carrier * fjit * t + beta * (2.0 * PI * rate * t).sin() + phase).sin()
                    }
                    Recipe::Clicks { resonance, rate } => {
                        let since = (t * rate).fract() / rate;
                        (-since * 40.0).exp() * (2.0 * PI * resonance * fjit * since).sin()
                    }
                };
                x += level * envelope(t, dur) * s;
            }
            out.push(x);
        }
        SampleBuffer::from_clamped(out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("instance {instance} of class '{class}' produced no detectable segment")]
    NoSegment { class: String, instance: usize },
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Kb(#[from] KbError),
}

/// One generated recording after the WAV round trip, with its detected event.
#[derive(Debug, Clone)]
pub struct SynthInstance {
    pub class: String,
    pub audio: SampleBuffer,
    pub segment: SegmentEvent,
    pub features: FeatureVector,
}

/// Longest detected event of a recording.
pub fn main_segment(audio: &SampleBuffer, cfg: &AdmissionConfig) -> Option<SegmentEvent> {
    segment(frame_stream(audio), cfg)
        .into_iter()
        .max_by_key(|s| s.end_sample - s.start_sample)
}

/// Renders `instances` recordings of each of the first `classes` catalogue
/// entries. Class `i` draws from stream `i` of the seeded generator, so the
/// result does not depend on thread scheduling.
pub fn generate(classes: usize, instances: usize, seed: u64) -> Result<Vec<SynthInstance>, SynthError> {
    let cfg = AdmissionConfig::default();
    let per_class = class_catalogue(classes)
        .into_par_iter()
        .enumerate()
        .map(|(c, class)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            (0..instances)
                .map(|i| {
                    let rendered = class.render(&mut rng);
                    let audio = decode_wav(&encode_wav(&rendered)).expect("encoder output decodes");
                    let seg = main_segment(&audio, &cfg).ok_or_else(|| SynthError::NoSegment {
                        class: class.name.clone(),
                        instance: i,
                    })?;
                    let features = extract_segment_features(&seg.frames())?;
                    Ok(SynthInstance {
                        class: class.name.clone(),
                        audio,
                        segment: seg,
                        features,
                    })
                })
                .collect::<Result<Vec<_>, SynthError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_class.into_iter().flatten().collect())
}

/// Knowledge base holding every generated instance, recordings included.
pub fn corpus_kb(classes: usize, instances: usize, seed: u64) -> Result<KnowledgeBase, SynthError> {
    let mut kb = KnowledgeBase::new();
    for (i, inst) in generate(classes, instances, seed)?.into_iter().enumerate() {
        let seg_audio = SampleBuffer::from_clamped(inst.segment.samples.iter().copied());
        kb.add_record_at(&inst.class, None, inst.features, Some(&seg_audio), i as u64)?;
    }
    Ok(kb)
}
