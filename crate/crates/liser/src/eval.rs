//! Utterance-level inference: slide 3 s windows over the audio, run the
//! student in eval mode on each, average the supervised-head logits, and
//! score predictions with recall metrics.

use crate::audio::{crop_or_pad_3s, AudioError, SegmentMode, Waveform};
use crate::audio::mel::log_mel;
use crate::metrics::{EvalReport, MetricsError};
use crate::model::{forward, ForwardMode, StudentParams, INPUT_BANDS, INPUT_FRAMES};
use crate::tensor::{softmax, Tensor, TensorError};
use std::error::Error;
use std::fmt;

/// Windows per forward pass; keeps activation memory bounded on long files.
const EVAL_CHUNK: usize = 25;

#[derive(Debug)]
pub enum EvalError {
    Audio(AudioError),
    Tensor(TensorError),
    Metrics(MetricsError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Audio(e) => write!(f, "{e}"),
            EvalError::Tensor(e) => write!(f, "{e}"),
            EvalError::Metrics(e) => write!(f, "{e}"),
        }
    }
}

impl Error for EvalError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            EvalError::Audio(e) => Some(e),
            EvalError::Tensor(e) => Some(e),
            EvalError::Metrics(e) => Some(e),
        }
    }
}

impl From<AudioError> for EvalError {
    fn from(e: AudioError) -> Self {
        EvalError::Audio(e)
    }
}

impl From<TensorError> for EvalError {
    fn from(e: TensorError) -> Self {
        EvalError::Tensor(e)
    }
}

impl From<MetricsError> for EvalError {
    fn from(e: MetricsError) -> Self {
        EvalError::Metrics(e)
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// One utterance-level prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// softmax of the window-averaged supervised logits.
    pub probabilities: Vec<f64>,
    pub mean_logits: Vec<f64>,
    pub n_windows: usize,
}

/// Stack standardized log-Mel features of several segments into one
/// N x 1 x bands x frames batch.
pub fn feature_batch(segments: &[Vec<f64>]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(segments.len() * INPUT_BANDS * INPUT_FRAMES);
    for seg in segments {
        data.extend_from_slice(log_mel(seg)?.data());
    }
    Tensor::new(vec![segments.len(), 1, INPUT_BANDS, INPUT_FRAMES], data).map_err(EvalError::Tensor)
}

/// Classify one utterance: mean of per-window supervised logits, argmax with
/// ties going to the lowest class index.
pub fn predict_utterance(params: &StudentParams, w: &Waveform) -> Result<Prediction> {
    let windows = crop_or_pad_3s(w, SegmentMode::Eval)?;
    let k = params.k_s;
    let mut mean_logits = vec![0.0; k];
    // Eval-mode batch norm uses running statistics, so chunking windows into
    // batches cannot change any per-window output.
    let mut params = params.clone();
    for chunk in windows.chunks(EVAL_CHUNK) {
        let segs: Vec<Vec<f64>> = chunk.iter().map(|s| s.samples.clone()).collect();
        let batch = feature_batch(&segs)?;
        for item in forward(&mut params, &batch, ForwardMode::Eval)? {
            for (acc, z) in mean_logits.iter_mut().zip(&item.sup) {
                *acc += z;
            }
        }
    }
    for acc in &mut mean_logits {
        *acc /= windows.len() as f64;
    }
    let class = argmax(&mean_logits);
    let probabilities = softmax(&mean_logits)?;
    Ok(Prediction { class, probabilities, mean_logits, n_windows: windows.len() })
}

/// First index of the maximum value.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Score a labeled test set with `predict_utterance` on every item.
pub fn evaluate(params: &StudentParams, items: &[(&Waveform, usize)], k: usize) -> Result<EvalReport> {
    let mut pairs = Vec::with_capacity(items.len());
    for (wave, label) in items {
        pairs.push((*label, predict_utterance(params, wave)?.class));
    }
    EvalReport::from_pairs(k, &pairs).map_err(EvalError::Metrics)
}
