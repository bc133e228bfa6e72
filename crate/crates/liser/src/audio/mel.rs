//! 64-band log-Mel front end: periodic Hann window, 2048-point FFT with a
//! 512-sample hop and no centering, HTK-scale triangular filters over the
//! power spectrum, natural log with a 1e-10 floor, then per-segment
//! standardization with a 1e-8 variance floor.

use super::{AudioError, SAMPLE_RATE, SEGMENT_SAMPLES};
use crate::tensor::Tensor;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::sync::OnceLock;

pub const N_MELS: usize = 64;
pub const FFT_SIZE: usize = 2048;
pub const HOP: usize = 512;
pub const N_FRAMES: usize = (SEGMENT_SAMPLES - FFT_SIZE) / HOP + 1;
pub const N_BINS: usize = FFT_SIZE / 2 + 1;
const LOG_FLOOR: f64 = 1e-10;
const VAR_FLOOR: f64 = 1e-8;
const FMAX: f64 = SAMPLE_RATE as f64 / 2.0;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Number of analysis frames an n-sample signal yields (zero if it cannot
/// fill one window).
pub fn frame_count(n: usize) -> usize {
    if n < FFT_SIZE {
        0
    } else {
        (n - FFT_SIZE) / HOP + 1
    }
}

fn hann() -> &'static [f64; FFT_SIZE] {
    static WIN: OnceLock<[f64; FFT_SIZE]> = OnceLock::new();
    WIN.get_or_init(|| {
        let mut w = [0.0; FFT_SIZE];
        for (i, v) in w.iter_mut().enumerate() {
            *v = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / FFT_SIZE as f64).cos());
        }
        w
    })
}

/// Triangular filterbank as a dense N_MELS x N_BINS matrix. Edges are 66
/// points equally spaced on the HTK mel scale between 0 Hz and Nyquist;
/// each filter is scaled by 2 / (hz_upper - hz_lower) so triangle areas are
/// one.
pub fn mel_filterbank() -> &'static Vec<f64> {
    static BANK: OnceLock<Vec<f64>> = OnceLock::new();
    BANK.get_or_init(|| {
        let mel_max = hz_to_mel(FMAX);
        let edges: Vec<f64> =
            (0..N_MELS + 2).map(|i| mel_to_hz(mel_max * i as f64 / (N_MELS + 1) as f64)).collect();
        let mut bank = vec![0.0; N_MELS * N_BINS];
        for m in 0..N_MELS {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            for k in 0..N_BINS {
                let f = k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64;
                let rise = (f - lo) / (center - lo);
                let fall = (hi - f) / (hi - center);
                let w = rise.min(fall).max(0.0);
                bank[m * N_BINS + k] = w * norm;
            }
        }
        bank
    })
}

/// Center frequency (Hz) of each mel band.
pub fn mel_centers() -> Vec<f64> {
    let mel_max = hz_to_mel(FMAX);
    (1..=N_MELS).map(|i| mel_to_hz(mel_max * i as f64 / (N_MELS + 1) as f64)).collect()
}

/// Power spectra (re^2 + im^2, bins 0..=N/2) for every frame of a segment.
fn power_spectrum_frames(segment: &[f64]) -> Vec<Vec<f64>> {
    let win = hann();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);
    let n_frames = frame_count(segment.len());
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    for fi in 0..n_frames {
        let start = fi * HOP;
        for (b, (s, w)) in buf.iter_mut().zip(segment[start..start + FFT_SIZE].iter().zip(win)) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..N_BINS].iter().map(|c| c.re * c.re + c.im * c.im).collect());
    }
    frames
}

/// Log-Mel matrix (N_MELS x n_frames) before standardization.
pub fn log_mel_raw(segment: &[f64]) -> Result<Tensor, AudioError> {
    let n_frames = frame_count(segment.len());
    if n_frames == 0 {
        return Err(AudioError::SegmentLength { got: segment.len(), expected: FFT_SIZE });
    }
    let spectra = power_spectrum_frames(segment);
    let bank = mel_filterbank();
    let mut out = vec![0.0; N_MELS * n_frames];
    for (fi, spec) in spectra.iter().enumerate() {
        for m in 0..N_MELS {
            let filt = &bank[m * N_BINS..(m + 1) * N_BINS];
            let e: f64 = filt.iter().zip(spec).map(|(w, p)| w * p).sum();
            out[m * n_frames + fi] = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(Tensor::new(vec![N_MELS, n_frames], out).expect("mel dims"))
}

#[cfg(test)]
pub(crate) fn tests_power_spectrum(segment: &[f64]) -> Vec<Vec<f64>> {
    power_spectrum_frames(segment)
}

#[cfg(test)]
pub(crate) fn tests_hann() -> &'static [f64; FFT_SIZE] {
    hann()
}

/// Standardized log-Mel features for one exact 3 s segment
/// (N_MELS x N_FRAMES, zero mean and unit variance over the whole matrix).
pub fn log_mel(segment: &[f64]) -> Result<Tensor, AudioError> {
    if segment.len() != SEGMENT_SAMPLES {
        return Err(AudioError::SegmentLength { got: segment.len(), expected: SEGMENT_SAMPLES });
    }
    let raw = log_mel_raw(segment)?;
    let lo = raw.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        // A constant matrix standardizes to zeros exactly; skip the mean
        // computation so rounding cannot leak residuals through the floor.
        return Ok(Tensor::zeros(vec![N_MELS, N_FRAMES]));
    }
    let n = raw.numel() as f64;
    let mean: f64 = raw.data().iter().sum::<f64>() / n;
    let var: f64 = raw.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / var.max(VAR_FLOOR).sqrt();
    let data: Vec<f64> = raw.data().iter().map(|v| (v - mean) * inv).collect();
    Ok(Tensor::new(vec![N_MELS, N_FRAMES], data).expect("mel dims"))
}
