//! Turns a synthetic waveform into the model's log-Mel input: 3 s crops (or
//! sliding windows at evaluation time), then a 64-band standardized
//! spectrogram per window.
//!
//!     cargo run --example log_mel_pipeline

use liser::audio::mel::log_mel;
use liser::audio::{crop_or_pad_3s, AudioError, SegmentMode, Waveform, SAMPLE_RATE};

fn main() -> Result<(), AudioError> {
    // A 4.2 s chirp: frequency rises from 200 Hz to 1 kHz.
    let n = (4.2 * SAMPLE_RATE as f64) as usize;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let f = 200.0 + 800.0 * t / 4.2;
            0.4 * (2.0 * std::f64::consts::PI * f * t).sin()
        })
        .collect();
    let wave = Waveform::new(samples, SAMPLE_RATE)?;
    println!("waveform: {:.2} s at {} Hz", wave.duration_secs(), wave.sample_rate());

    let train_crop = crop_or_pad_3s(&wave, SegmentMode::Train { seed: 7 })?;
    println!(
        "train mode: {} random crop starting at sample {}",
        train_crop.len(),
        train_crop[0].start
    );

    let windows = crop_or_pad_3s(&wave, SegmentMode::Eval)?;
    println!("eval mode: {} sliding windows", windows.len());

    for (i, seg) in windows.iter().enumerate().take(3) {
        let mel = log_mel(&seg.samples)?;
        let (bands, frames) = (mel.shape()[0], mel.shape()[1]);
        let mean = mel.data().iter().sum::<f64>() / mel.numel() as f64;
        let peak_band = (0..bands)
            .max_by(|&a, &b| {
                let row = |r: usize| mel.data()[r * frames..(r + 1) * frames].iter().sum::<f64>();
                row(a).total_cmp(&row(b))
            })
            .unwrap();
        println!(
            "window {i}: start {:>6}, {}x{} features, mean {:+.3e}, loudest band {}",
            seg.start, bands, frames, mean, peak_band
        );
    }
    Ok(())
}
