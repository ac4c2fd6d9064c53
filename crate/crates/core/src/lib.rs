//! Environmental sound recognition engine.
//!
//! Audio is cut into 1024-sample windows, admitted by loudness or spectral
//! structure, grouped into events of 0.4–2.7 s, summarized as 54-value
//! feature vectors and classified against a personal knowledge base. Every
//! answer carries a 0–5 confidence level.

pub mod audio;
pub mod classify;
pub mod confidence;
pub mod detection;
pub mod dsp;
pub mod features;
pub mod kb;
pub mod evaluation;
pub mod synth;
pub mod pipeline;
