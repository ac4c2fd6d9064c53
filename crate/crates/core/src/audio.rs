//! PCM WAV decoding/encoding and fixed-size framing.
//!
//! Only one capture format is accepted: RIFF/WAVE, 16-bit signed PCM,
//! mono, 48 kHz. Everything downstream assumes it.

use std::sync::Arc;

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 48_000;
pub const CHANNELS: u16 = 1;
pub const BITS_PER_SAMPLE: u16 = 16;
/// Analysis frame length in samples (21.33 ms at 48 kHz).
pub const FRAME_LEN: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum AudioError {
    #[error("malformed WAV: {0}")]
    Format(String),
    #[error("unsupported WAV {field}: expected {expected}, found {found}")]
    Unsupported {
        field: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("sample {index} out of range: {value}")]
    OutOfRange { index: usize, value: f64 },
}

/// Immutable mono 48 kHz sample buffer with values in [-1, 1].
///
/// Cloning is cheap; the samples are shared.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    samples: Arc<[f64]>,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f64>) -> Result<Self, AudioError> {
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !(-1.0..=1.0).contains(*s))
        {
            return Err(AudioError::OutOfRange { index, value });
        }
        Ok(Self {
            samples: samples.into(),
        })
    }

    /// Builds a buffer, clamping every sample into [-1, 1]. NaN becomes 0.
    pub fn from_clamped(samples: impl IntoIterator<Item = f64>) -> Self {
        Self {
            samples: samples
                .into_iter()
                .map(|s| if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) })
                .collect(),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Snaps every sample onto the 16-bit grid used by [`encode_wav`].
    pub fn quantized(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|&s| quantize(s) as f64 / 32768.0)
                .collect(),
        }
    }
}

fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_wav(bytes: &[u8]) -> Result<SampleBuffer, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Format("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt_seen = false;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                AudioError::Format(format!(
                    "chunk '{}' overruns file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(AudioError::Format("fmt chunk too short".into()));
                }
                let format_tag = read_u16(body, 0);
                // 0xFFFE (extensible) is accepted as long as the layout is plain PCM.
                if format_tag != 1 && format_tag != 0xFFFE {
                    return Err(AudioError::Unsupported {
                        field: "format tag",
                        expected: 1,
                        found: format_tag as u32,
                    });
                }
                let channels = read_u16(body, 2);
                if channels != CHANNELS {
                    return Err(AudioError::Unsupported {
                        field: "channel count",
                        expected: CHANNELS as u32,
                        found: channels as u32,
                    });
                }
                let rate = read_u32(body, 4);
                if rate != SAMPLE_RATE {
                    return Err(AudioError::Unsupported {
                        field: "sample rate",
                        expected: SAMPLE_RATE,
                        found: rate,
                    });
                }
                let bits = read_u16(body, 14);
                if bits != BITS_PER_SAMPLE {
                    return Err(AudioError::Unsupported {
                        field: "bit depth",
                        expected: BITS_PER_SAMPLE as u32,
                        found: bits as u32,
                    });
                }
                fmt_seen = true;
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    if !fmt_seen {
        return Err(AudioError::Format("missing fmt chunk".into()));
    }
    let data = data.ok_or_else(|| AudioError::Format("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(AudioError::Format("data chunk has a dangling byte".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(SampleBuffer { samples })
}

/// Canonical 44-byte-header PCM WAV.
pub fn encode_wav(buf: &SampleBuffer) -> Vec<u8> {
    let data_len = (buf.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&CHANNELS.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    let block_align = CHANNELS * BITS_PER_SAMPLE / 8;
    out.extend_from_slice(&(SAMPLE_RATE * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&BITS_PER_SAMPLE.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in buf.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn read_wav_file(path: impl AsRef<std::path::Path>) -> std::io::Result<SampleBuffer> {
    let bytes = std::fs::read(path)?;
    decode_wav(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn write_wav_file(path: impl AsRef<std::path::Path>, buf: &SampleBuffer) -> std::io::Result<()> {
    std::fs::write(path, encode_wav(buf))
}

/// One analysis window. `start` is the absolute sample offset in the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub start: usize,
    /// Number of real samples; the rest of `samples` is zero padding.
    pub valid_len: usize,
    pub samples: Vec<f64>,
}

impl Frame {
    pub fn end(&self) -> usize {
        self.start + self.valid_len
    }

    pub fn valid(&self) -> &[f64] {
        &self.samples[..self.valid_len]
    }
}

/// Splits a buffer into non-overlapping frames; the last one is zero padded.
pub fn frame_stream(buf: &SampleBuffer) -> Vec<Frame> {
    frames_of(buf.samples(), 0)
}

pub(crate) fn frames_of(samples: &[f64], offset: usize) -> Vec<Frame> {
    samples
        .chunks(FRAME_LEN)
        .enumerate()
        .map(|(index, chunk)| {
            let mut frame = chunk.to_vec();
            frame.resize(FRAME_LEN, 0.0);
            Frame {
                index,
                start: offset + index * FRAME_LEN,
                valid_len: chunk.len(),
                samples: frame,
            }
        })
        .collect()
}

/// A producer of sample chunks: a file replay, a microphone, a test double.
pub trait AudioSource: Send {
    /// Next chunk of samples, `None` when the source is exhausted.
    fn next_chunk(&mut self) -> Option<Vec<f64>>;
}

/// Replays a buffer in fixed-size chunks, optionally paced to wall-clock time.
pub struct FileReplaySource {
    buf: SampleBuffer,
    pos: usize,
    chunk: usize,
    pace: Option<std::time::Instant>,
}

impl FileReplaySource {
    pub fn new(buf: SampleBuffer) -> Self {
        Self {
            buf,
            pos: 0,
            chunk: FRAME_LEN,
            pace: None,
        }
    }

    pub fn open(path: impl AsRef<std::path::Path>) -> std::io::Result<Self> {
        Ok(Self::new(read_wav_file(path)?))
    }

    pub fn with_chunk_len(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }

    /// Deliver chunks no faster than real time.
    pub fn realtime(mut self) -> Self {
        self.pace = Some(std::time::Instant::now());
        self
    }
}

impl AudioSource for FileReplaySource {
    fn next_chunk(&mut self) -> Option<Vec<f64>> {
        if self.pos >= self.buf.len() {
            return None;
        }
        if let Some(t0) = self.pace {
            let due = std::time::Duration::from_secs_f64(self.pos as f64 / SAMPLE_RATE as f64);
            if let Some(wait) = due.checked_sub(t0.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let end = (self.pos + self.chunk).min(self.buf.len());
        let out = self.buf.samples()[self.pos..end].to_vec();
        self.pos = end;
        Some(out)
    }
}

/// Re-chunks an arbitrary source into analysis frames.
pub struct Framer<S> {
    source: S,
    pending: Vec<f64>,
    next_index: usize,
    next_start: usize,
    done: bool,
}

impl<S: AudioSource> Framer<S> {
    pub fn new(source: S) -> Self {
        Self {
            source,
            pending: Vec::with_capacity(2 * FRAME_LEN),
            next_index: 0,
            next_start: 0,
            done: false,
        }
    }

    /// Stream position (in samples) of the next frame.
    pub fn position(&self) -> usize {
        self.next_start
    }
}

impl<S: AudioSource> Iterator for Framer<S> {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        while !self.done && self.pending.len() < FRAME_LEN {
            match self.source.next_chunk() {
                Some(chunk) => self.pending.extend(chunk),
                None => self.done = true,
            }
        }
        if self.pending.is_empty() {
            return None;
        }
        let take = self.pending.len().min(FRAME_LEN);
        let mut samples: Vec<f64> = self.pending.drain(..take).collect();
        samples.resize(FRAME_LEN, 0.0);
        let frame = Frame {
            index: self.next_index,
            start: self.next_start,
            valid_len: take,
            samples,
        };
        self.next_index += 1;
        self.next_start += take;
        Some(frame)
    }
}
