//! Audio ingestion: WAV decoding, resampling to the 16 kHz working rate,
//! and slicing into the fixed 3 s windows the model consumes.

pub mod mel;
mod wav;

pub use wav::{decode_wav, encode_wav_pcm16, read_wav, write_wav};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

pub const SAMPLE_RATE: u32 = 16_000;
pub const SEGMENT_SAMPLES: usize = 48_000;
/// Stride between evaluation windows: 0.1 s.
pub const EVAL_HOP: usize = 1_600;

#[derive(Debug, Clone, PartialEq)]
pub enum AudioError {
    Malformed { chunk: String, detail: String },
    Io { path: String, detail: String },
    EmptyWaveform,
    BadSampleRate { rate: u32 },
    WrongRate { got: u32, expected: u32 },
    SegmentLength { got: usize, expected: usize },
    NonFinite,
}

impl fmt::Display for AudioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AudioError::Malformed { chunk, detail } => write!(f, "wav chunk '{chunk}': {detail}"),
            AudioError::Io { path, detail } => write!(f, "{path}: {detail}"),
            AudioError::EmptyWaveform => write!(f, "waveform has no samples"),
            AudioError::BadSampleRate { rate } => write!(f, "sample rate {rate} Hz is below the 8 kHz minimum"),
            AudioError::WrongRate { got, expected } => {
                write!(f, "waveform is at {got} Hz, expected {expected} Hz")
            }
            AudioError::SegmentLength { got, expected } => {
                write!(f, "segment has {got} samples, expected {expected}")
            }
            AudioError::NonFinite => write!(f, "waveform contains non-finite samples"),
        }
    }
}

impl std::error::Error for AudioError {}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::EmptyWaveform);
        }
        if sample_rate == 0 {
            return Err(AudioError::BadSampleRate { rate: sample_rate });
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite);
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Linear-interpolation resampler. Identity when the rates already match.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform, AudioError> {
    if w.sample_rate < 8_000 {
        return Err(AudioError::BadSampleRate { rate: w.sample_rate });
    }
    if target_rate == 0 {
        return Err(AudioError::BadSampleRate { rate: target_rate });
    }
    if w.sample_rate == target_rate {
        return Ok(w.clone());
    }
    let out_len =
        ((w.samples.len() as u64 * target_rate as u64) as f64 / w.sample_rate as f64).round() as usize;
    let out_len = out_len.max(1);
    let step = w.sample_rate as f64 / target_rate as f64;
    let mut out = Vec::with_capacity(out_len);
    let last = w.samples.len() - 1;
    for i in 0..out_len {
        let pos = i as f64 * step;
        let i0 = (pos.floor() as usize).min(last);
        let i1 = (i0 + 1).min(last);
        let frac = pos - i0 as f64;
        out.push(w.samples[i0] * (1.0 - frac) + w.samples[i1] * frac);
    }
    Waveform::new(out, target_rate)
}

/// A 3 s training or evaluation window cut from an utterance, tagged with
/// its start offset in the source signal (offsets drive teacher-segment
/// alignment).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub samples: Vec<f64>,
}

pub enum SegmentMode {
    /// One random 3 s crop, reproducible from the seed.
    Train { seed: u64 },
    /// Sliding windows at `EVAL_HOP`, with a final window flush against the
    /// end when the hop would overshoot.
    Eval,
}

/// Cut a 16 kHz waveform into 3 s segments. Shorter signals are padded with
/// trailing zeros into a single segment.
pub fn crop_or_pad_3s(w: &Waveform, mode: SegmentMode) -> Result<Vec<Segment>, AudioError> {
    if w.sample_rate != SAMPLE_RATE {
        return Err(AudioError::WrongRate { got: w.sample_rate, expected: SAMPLE_RATE });
    }
    let n = w.samples.len();
    if n <= SEGMENT_SAMPLES {
        let mut samples = w.samples.clone();
        samples.resize(SEGMENT_SAMPLES, 0.0);
        return Ok(vec![Segment { start: 0, samples }]);
    }
    let max_start = n - SEGMENT_SAMPLES;
    match mode {
        SegmentMode::Train { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = rng.random_range(0..=max_start);
            Ok(vec![Segment { start, samples: w.samples[start..start + SEGMENT_SAMPLES].to_vec() }])
        }
        SegmentMode::Eval => {
            let mut segs = Vec::new();
            let mut start = 0;
            loop {
                segs.push(Segment { start, samples: w.samples[start..start + SEGMENT_SAMPLES].to_vec() });
                if start == max_start {
                    break;
                }
                start = (start + EVAL_HOP).min(max_start);
            }
            Ok(segs)
        }
    }
}
