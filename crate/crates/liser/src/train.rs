//! Training loop: joint supervised + distillation optimization, two-stage
//! scheduling, lambda grid search, and speaker-disjoint cross-validation.
//!
//! One optimization step works on a mixed batch with labeled rows first and
//! unlabeled rows after them. Labeled rows contribute cross-entropy through
//! the supervised head; unlabeled rows contribute mean-absolute-error terms
//! between the distillation heads (after softmax) and the teacher
//! distributions aggregated over the crop window. The batch loss is the sum
//! of every term divided by the total row count, so supervised-only and
//! distillation-only schedules fall out of the same code path.

use crate::audio::{crop_or_pad_3s, mel::log_mel, AudioError, SegmentMode, Waveform, SAMPLE_RATE, SEGMENT_SAMPLES};
use crate::data::{
    make_batches, make_folds, segments_in_window, subset_indices, BatchPlan, DataError,
    LabeledDataset, LabeledUtterance, UnlabeledUtterance, CROP_SECS, SPEECH_SLOT_SECS,
    VIDEO_SLOT_SECS,
};
use crate::eval::{evaluate, EvalError};
use crate::loss::{aggregate_teacher_segments, confidence_weight, LossError, LossWeights};
use crate::metrics::{EvalReport, MetricsError};
use crate::model::{
    apply_batch_stats, forward_on_tape, register_params, ForwardMode, ParamIds, StudentParams,
};
use crate::optim::{AdamW, AdamWParams, OptimError};
use crate::seeds::derive_seed;
use crate::tensor::{Tape, Tensor, TensorError, ValueId};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::ops::ControlFlow;

/// Default lambda values swept by `grid_search_lambda`.
pub const LAMBDA_GRID: [f64; 5] = [0.1, 0.5, 1.0, 5.0, 10.0];

/// Which loss terms a run optimizes and how the unlabeled terms are shaped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Configuration {
    /// Supervised cross-entropy only; batches carry no unlabeled rows.
    NoDstl,
    /// Video distillation only (lambda_sd must be zero).
    VidDstl,
    /// Speech distillation only (lambda_vd must be zero).
    SpDstl,
    /// Both distillation terms alongside the supervised term.
    VidSpDstl,
    /// Both terms, each scaled by the teacher's aggregated confidence.
    ConfVidSpDstl,
    /// Both terms with soft-target cross-entropy in place of MAE.
    DistillCe,
    /// Distillation-only warm-up stage, then a supervised-only stage.
    TwoStageTrain,
}

impl Configuration {
    pub const ALL: [Configuration; 7] = [
        Configuration::NoDstl,
        Configuration::VidDstl,
        Configuration::SpDstl,
        Configuration::VidSpDstl,
        Configuration::ConfVidSpDstl,
        Configuration::DistillCe,
        Configuration::TwoStageTrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Configuration::NoDstl => "no-dstl",
            Configuration::VidDstl => "vid-dstl",
            Configuration::SpDstl => "sp-dstl",
            Configuration::VidSpDstl => "vid-sp-dstl",
            Configuration::ConfVidSpDstl => "conf-vid-sp-dstl",
            Configuration::DistillCe => "distill-ce",
            Configuration::TwoStageTrain => "two-stage-train",
        }
    }

    pub fn parse(s: &str) -> Option<Configuration> {
        Configuration::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Does the speech distillation term participate (lambda_sd axis active)?
    pub fn uses_speech(self) -> bool {
        !matches!(self, Configuration::NoDstl | Configuration::VidDstl)
    }

    /// Does the video distillation term participate (lambda_vd axis active)?
    pub fn uses_video(self) -> bool {
        !matches!(self, Configuration::NoDstl | Configuration::SpDstl)
    }

    /// Are the unlabeled terms scaled by teacher confidence weights?
    pub fn confidence_weighted(self) -> bool {
        matches!(self, Configuration::ConfVidSpDstl)
    }

    /// Does distillation use soft-target cross-entropy instead of MAE?
    pub fn soft_ce(self) -> bool {
        matches!(self, Configuration::DistillCe)
    }

    pub fn is_two_stage(self) -> bool {
        matches!(self, Configuration::TwoStageTrain)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub enum TrainError {
    /// A batch produced a non-finite loss or non-finite intermediate values.
    Diverged { epoch: usize, batch: usize },
    /// The configuration itself is inconsistent (bad sizes, forbidden lambda).
    InvalidConfig { detail: String },
    /// The configuration is fine but the data needed for it is absent.
    MissingData { detail: String },
    Tensor(TensorError),
    Audio(AudioError),
    Data(DataError),
    Loss(LossError),
    Metrics(MetricsError),
    Optim(OptimError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Diverged { epoch, batch } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}, batch {batch}")
            }
            TrainError::InvalidConfig { detail } => write!(f, "invalid train config: {detail}"),
            TrainError::MissingData { detail } => write!(f, "missing training data: {detail}"),
            TrainError::Tensor(e) => write!(f, "tensor error: {e}"),
            TrainError::Audio(e) => write!(f, "audio error: {e}"),
            TrainError::Data(e) => write!(f, "data error: {e}"),
            TrainError::Loss(e) => write!(f, "loss error: {e}"),
            TrainError::Metrics(e) => write!(f, "metrics error: {e}"),
            TrainError::Optim(e) => write!(f, "optimizer error: {e}"),
        }
    }
}

impl fmt::Debug for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl std::error::Error for TrainError {}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}
impl From<AudioError> for TrainError {
    fn from(e: AudioError) -> Self {
        TrainError::Audio(e)
    }
}
impl From<DataError> for TrainError {
    fn from(e: DataError) -> Self {
        TrainError::Data(e)
    }
}
impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        TrainError::Loss(e)
    }
}
impl From<MetricsError> for TrainError {
    fn from(e: MetricsError) -> Self {
        TrainError::Metrics(e)
    }
}
impl From<OptimError> for TrainError {
    fn from(e: OptimError) -> Self {
        TrainError::Optim(e)
    }
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Audio(a) => TrainError::Audio(a),
            EvalError::Tensor(t) => TrainError::Tensor(t),
            EvalError::Metrics(m) => TrainError::Metrics(m),
        }
    }
}

/// Everything a single run needs. Labeled/unlabeled/val views borrow from the
/// caller so cross-validation can hand out fold slices without copying audio.
pub struct TrainData<'a> {
    pub labeled: Vec<&'a LabeledUtterance>,
    pub unlabeled: Vec<&'a UnlabeledUtterance>,
    /// Validation utterances with their true labels; used for model selection.
    pub val: Vec<(&'a Waveform, usize)>,
    pub k_s: usize,
    pub k_v: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub configuration: Configuration,
    pub weights: LossWeights,
    pub max_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Total rows per optimization step.
    pub batch_size: usize,
    /// Labeled rows per step for joint configurations; the rest are unlabeled.
    pub labeled_per_batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(configuration: Configuration, weights: LossWeights, seed: u64) -> TrainConfig {
        TrainConfig {
            configuration,
            weights,
            max_epochs: 50,
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 25,
            labeled_per_batch: 13,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |detail: String| Err(TrainError::InvalidConfig { detail });
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.labeled_per_batch > self.batch_size {
            return bad(format!(
                "labeled_per_batch ({}) exceeds batch_size ({})",
                self.labeled_per_batch, self.batch_size
            ));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be finite and positive, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be finite and >= 0, got {}", self.weight_decay));
        }
        if !self.configuration.uses_speech() && self.weights.lambda_sd != 0.0 {
            return bad(format!(
                "configuration {} has no speech distillation term, so lambda_sd must be 0 (got {})",
                self.configuration, self.weights.lambda_sd
            ));
        }
        if !self.configuration.uses_video() && self.weights.lambda_vd != 0.0 {
            return bad(format!(
                "configuration {} has no video distillation term, so lambda_vd must be 0 (got {})",
                self.configuration, self.weights.lambda_vd
            ));
        }
        Ok(())
    }
}

/// Loss and validation metrics for one epoch. Validation fields are `None`
/// for distillation-only stages trained without a validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub stage: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_uar: Option<f64>,
    pub val_war: Option<f64>,
}

/// Result of one run: the selected parameters plus the full epoch history.
pub struct TrainOutcome {
    pub params: StudentParams,
    pub best_epoch: usize,
    /// Validation UAR of the selected epoch, or the mean train loss for
    /// distillation-only stages (where lower is better).
    pub best_metric: f64,
    pub history: Vec<EpochStats>,
}

pub struct TwoStageOutcome {
    pub stage1: TrainOutcome,
    pub stage2: TrainOutcome,
}

/// Per-epoch observer; return `ControlFlow::Break(())` to stop after the
/// current epoch (the best checkpoint seen so far is still selected).
pub type EpochHook<'h> = &'h mut dyn FnMut(&EpochStats, &StudentParams) -> ControlFlow<()>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StageMode {
    /// Labeled and unlabeled rows mixed per the config ratios.
    Joint,
    /// Unlabeled rows only; selection by mean train loss.
    DistillOnly,
    /// Labeled rows only.
    SupervisedOnly,
}

/// One prepared optimization step: features plus every target needed to
/// build the loss graph. Labeled rows come first in `input`.
pub struct PreparedBatch {
    /// `(n_l + n_u) x 1 x 64 x 90` standardized log-Mel features.
    pub input: Tensor,
    /// Class indices for the leading labeled rows.
    pub labels: Vec<usize>,
    /// Speech-teacher targets (`n_u x k_s`) with per-row term weights
    /// (lambda_sd, already multiplied by the confidence weight if any).
    pub sd: Option<(Tensor, Vec<f64>)>,
    /// Video-teacher targets (`n_u x k_v`) with per-row term weights.
    pub vd: Option<(Tensor, Vec<f64>)>,
    /// Replace MAE with soft-target cross-entropy on both distillation heads.
    pub soft_ce: bool,
}

impl PreparedBatch {
    pub fn n_rows(&self) -> usize {
        self.input.shape()[0]
    }
    pub fn n_labeled(&self) -> usize {
        self.labels.len()
    }
}

/// Build the batch loss on the tape: summed cross-entropy over labeled rows
/// plus weighted distillation terms over unlabeled rows, divided by the
/// total row count. Returns `None` without touching the tape when the batch
/// contributes no loss terms at all (then the step must be skipped so the
/// parameters stay untouched).
pub fn build_batch_loss(
    tape: &mut Tape,
    params: &StudentParams,
    ids: &ParamIds,
    batch: &PreparedBatch,
) -> Result<Option<(ValueId, Vec<crate::tensor::BatchStats>)>, TensorError> {
    let n = batch.n_rows();
    let n_l = batch.n_labeled();
    let n_u = n - n_l;
    if n_l == 0 && batch.sd.is_none() && batch.vd.is_none() {
        return Ok(None);
    }
    let input = tape.leaf(batch.input.clone(), false);
    let (heads, stats) = forward_on_tape(tape, params, ids, input, ForwardMode::Train)?;
    let mut total: Option<ValueId> = None;
    let mut accumulate = |tape: &mut Tape, term: ValueId| -> Result<(), TensorError> {
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
        Ok(())
    };
    if n_l > 0 {
        let rows = tape.row_slice(heads.sup, 0, n_l)?;
        let per_item = tape.cross_entropy_rows(rows, batch.labels.clone())?;
        let sup = tape.sum(per_item)?;
        accumulate(tape, sup)?;
    }
    let distill_term = |tape: &mut Tape,
                            head: ValueId,
                            targets: &Tensor,
                            weights: &[f64]|
     -> Result<ValueId, TensorError> {
        let rows = tape.row_slice(head, n_l, n_u)?;
        let per_item = if batch.soft_ce {
            tape.soft_cross_entropy_rows(rows, targets.clone())?
        } else {
            let probs = tape.softmax_rows(rows)?;
            tape.mae_rows(probs, targets.clone())?
        };
        tape.weighted_sum(per_item, weights.to_vec())
    };
    if let Some((targets, weights)) = &batch.sd {
        let term = distill_term(tape, heads.sd, targets, weights)?;
        accumulate(tape, term)?;
    }
    if let Some((targets, weights)) = &batch.vd {
        let term = distill_term(tape, heads.vd, targets, weights)?;
        accumulate(tape, term)?;
    }
    let total = total.expect("at least one loss term");
    let loss = tape.scale(total, 1.0 / n as f64)?;
    Ok(Some((loss, stats)))
}

/// Log-Mel features for utterances at most one crop long never change with
/// the crop seed (the crop always starts at zero), so they are computed once.
struct FeatureCache {
    labeled: HashMap<usize, Tensor>,
    unlabeled: HashMap<usize, Tensor>,
}

impl FeatureCache {
    fn new() -> FeatureCache {
        FeatureCache { labeled: HashMap::new(), unlabeled: HashMap::new() }
    }
}

/// Crop (or pad) one utterance and return its feature map together with the
/// crop start in seconds.
fn crop_features(
    audio: &Waveform,
    cache: &mut HashMap<usize, Tensor>,
    key: usize,
    crop_seed: u64,
) -> Result<(Tensor, f64), TrainError> {
    let fits_one_crop = audio.samples().len() <= SEGMENT_SAMPLES;
    if fits_one_crop {
        if let Some(feat) = cache.get(&key) {
            return Ok((feat.clone(), 0.0));
        }
    }
    let segments = crop_or_pad_3s(audio, SegmentMode::Train { seed: crop_seed })?;
    let segment = &segments[0];
    let feat = log_mel(&segment.samples)?;
    let t0 = segment.start as f64 / SAMPLE_RATE as f64;
    if fits_one_crop {
        cache.insert(key, feat.clone());
    }
    Ok((feat, t0))
}

fn prepare_batch(
    cfg: &TrainConfig,
    data: &TrainData,
    mode: StageMode,
    plan: &BatchPlan,
    cache: &mut FeatureCache,
    stage_no: usize,
    epoch: usize,
) -> Result<PreparedBatch, TrainError> {
    let want_sup = mode != StageMode::DistillOnly;
    let want_sd = mode != StageMode::SupervisedOnly
        && cfg.configuration.uses_speech()
        && cfg.weights.lambda_sd > 0.0
        && !plan.unlabeled.is_empty();
    let want_vd = mode != StageMode::SupervisedOnly
        && cfg.configuration.uses_video()
        && cfg.weights.lambda_vd > 0.0
        && !plan.unlabeled.is_empty();
    let confidence = cfg.configuration.confidence_weighted();

    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    for &i in &plan.labeled {
        let u = data.labeled[i];
        let seed = derive_seed(cfg.seed, &["crop", "lab", &u.id], &[stage_no as u64, epoch as u64]);
        let (feat, _) = crop_features(&u.audio, &mut cache.labeled, i, seed)?;
        rows.extend_from_slice(feat.data());
        if want_sup {
            labels.push(u.label);
        }
    }
    let mut sd_targets: Vec<f64> = Vec::new();
    let mut sd_weights: Vec<f64> = Vec::new();
    let mut vd_targets: Vec<f64> = Vec::new();
    let mut vd_weights: Vec<f64> = Vec::new();
    for &j in &plan.unlabeled {
        let u = data.unlabeled[j];
        let seed = derive_seed(cfg.seed, &["crop", "unl", &u.id], &[stage_no as u64, epoch as u64]);
        let (feat, t0) = crop_features(&u.audio, &mut cache.unlabeled, j, seed)?;
        rows.extend_from_slice(feat.data());
        if want_sd {
            let window =
                segments_in_window(u.speech_teacher.len(), SPEECH_SLOT_SECS, t0, CROP_SECS);
            let agg = aggregate_teacher_segments(&u.speech_teacher[window])?;
            let w = if confidence { confidence_weight(&agg) } else { 1.0 };
            sd_targets.extend_from_slice(agg.probs());
            sd_weights.push(cfg.weights.lambda_sd * w);
        }
        if want_vd {
            let window = segments_in_window(u.video_teacher.len(), VIDEO_SLOT_SECS, t0, CROP_SECS);
            let agg = aggregate_teacher_segments(&u.video_teacher[window])?;
            let w = if confidence { confidence_weight(&agg) } else { 1.0 };
            vd_targets.extend_from_slice(agg.probs());
            vd_weights.push(cfg.weights.lambda_vd * w);
        }
    }
    let n = plan.labeled.len() + plan.unlabeled.len();
    let input = Tensor::new(vec![n, 1, crate::model::INPUT_BANDS, crate::model::INPUT_FRAMES], rows)?;
    let sd = if want_sd {
        Some((Tensor::new(vec![plan.unlabeled.len(), data.k_s], sd_targets)?, sd_weights))
    } else {
        None
    };
    let vd = if want_vd {
        Some((Tensor::new(vec![plan.unlabeled.len(), data.k_v], vd_targets)?, vd_weights))
    } else {
        None
    };
    Ok(PreparedBatch { input, labels, sd, vd, soft_ce: cfg.configuration.soft_ce() })
}

/// Run one optimization step. Returns the batch loss, or 0 with no parameter
/// movement when the batch has no loss terms.
#[allow(clippy::too_many_arguments)]
fn step_batch(
    cfg: &TrainConfig,
    data: &TrainData,
    mode: StageMode,
    plan: &BatchPlan,
    params: &mut StudentParams,
    opt: &mut AdamW,
    cache: &mut FeatureCache,
    stage_no: usize,
    epoch: usize,
) -> Result<f64, TrainError> {
    let prepared = prepare_batch(cfg, data, mode, plan, cache, stage_no, epoch)?;
    let mut tape = Tape::new();
    let reg = register_params(&mut tape, params, true);
    let Some((loss, stats)) = build_batch_loss(&mut tape, params, &reg, &prepared)? else {
        return Ok(0.0);
    };
    let loss_value = tape.value(loss).item();
    if !loss_value.is_finite() {
        return Err(TrainError::Tensor(TensorError::NonFinite { op: "batch loss" }));
    }
    let mut grads = tape.backward(loss)?;
    let grad_list: Vec<Tensor> = reg
        .ordered()
        .iter()
        .map(|id| grads.take(*id).expect("every registered parameter has a gradient"))
        .collect();
    {
        let mut refs = params.trainable_mut();
        let mut pairs: Vec<(&mut Tensor, bool)> =
            refs.iter_mut().map(|r| (&mut *r.tensor, r.decay)).collect();
        opt.step(&mut pairs, &grad_list)?;
    }
    apply_batch_stats(params, &stats);
    Ok(loss_value)
}

fn stage_quotas(cfg: &TrainConfig, mode: StageMode) -> (usize, usize) {
    match mode {
        StageMode::Joint => {
            if cfg.configuration == Configuration::NoDstl {
                (cfg.batch_size, 0)
            } else {
                (cfg.labeled_per_batch, cfg.batch_size - cfg.labeled_per_batch)
            }
        }
        StageMode::DistillOnly => (0, cfg.batch_size),
        StageMode::SupervisedOnly => (cfg.batch_size, 0),
    }
}

fn check_stage_data(
    cfg: &TrainConfig,
    data: &TrainData,
    mode: StageMode,
    per_l: usize,
    per_u: usize,
) -> Result<(), TrainError> {
    let missing = |detail: String| Err(TrainError::MissingData { detail });
    if data.k_s < 2 {
        return Err(TrainError::InvalidConfig {
            detail: format!("need at least 2 speech classes, got {}", data.k_s),
        });
    }
    if per_l > 0 && data.labeled.is_empty() {
        return missing(format!(
            "configuration {} needs labeled utterances but none were provided",
            cfg.configuration
        ));
    }
    if per_u > 0 && data.unlabeled.is_empty() {
        return missing(format!(
            "configuration {} needs unlabeled utterances with teacher outputs but none were provided",
            cfg.configuration
        ));
    }
    if mode != StageMode::DistillOnly && data.val.is_empty() {
        return missing("validation set is empty; cannot select a checkpoint".into());
    }
    for u in &data.labeled {
        if u.label >= data.k_s {
            return Err(TrainError::InvalidConfig {
                detail: format!("label {} out of range for {} classes", u.label, data.k_s),
            });
        }
    }
    if per_u > 0 {
        for u in data.unlabeled.iter().take(1) {
            if cfg.configuration.uses_speech() && u.speech_teacher[0].len() != data.k_s {
                return Err(TrainError::InvalidConfig {
                    detail: format!(
                        "speech teacher has {} classes but the label set has {}",
                        u.speech_teacher[0].len(),
                        data.k_s
                    ),
                });
            }
            if cfg.configuration.uses_video() && u.video_teacher[0].len() != data.k_v {
                return Err(TrainError::InvalidConfig {
                    detail: format!(
                        "video teacher has {} classes but k_v is {}",
                        u.video_teacher[0].len(),
                        data.k_v
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Train one stage. `stage_no` namespaces batch shuffles and crop seeds and
/// is recorded in the epoch history.
fn train_stage(
    cfg: &TrainConfig,
    data: &TrainData,
    mode: StageMode,
    stage_no: usize,
    init: Option<StudentParams>,
    mut hook: Option<EpochHook>,
) -> Result<TrainOutcome, TrainError> {
    let (per_l, per_u) = stage_quotas(cfg, mode);
    check_stage_data(cfg, data, mode, per_l, per_u)?;
    let mut params = match init {
        Some(p) => {
            if p.k_s != data.k_s || p.k_v != data.k_v {
                return Err(TrainError::InvalidConfig {
                    detail: format!(
                        "initial parameters are shaped for ({}, {}) classes but the data has ({}, {})",
                        p.k_s, p.k_v, data.k_s, data.k_v
                    ),
                });
            }
            p
        }
        None => StudentParams::init(data.k_s, data.k_v, derive_seed(cfg.seed, &["init"], &[]))?,
    };
    let mut opt = AdamW::new(AdamWParams::new(cfg.lr, cfg.weight_decay));
    let stage_seed = derive_seed(cfg.seed, &["stage"], &[stage_no as u64]);
    let mut cache = FeatureCache::new();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, StudentParams)> = None;
    for epoch in 1..=cfg.max_epochs {
        let batches =
            make_batches(data.labeled.len(), data.unlabeled.len(), per_l, per_u, stage_seed, epoch)?;
        let mut loss_sum = 0.0;
        for (bi, plan) in batches.iter().enumerate() {
            match step_batch(cfg, data, mode, plan, &mut params, &mut opt, &mut cache, stage_no, epoch)
            {
                Ok(v) => loss_sum += v,
                Err(TrainError::Tensor(TensorError::NonFinite { .. })) => {
                    return Err(TrainError::Diverged { epoch, batch: bi + 1 });
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = loss_sum / batches.len() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, batch: batches.len() });
        }
        let (val_uar, val_war) = if data.val.is_empty() {
            (None, None)
        } else {
            let report = evaluate(&params, &data.val, data.k_s)?;
            (Some(report.uar), Some(report.war))
        };
        let improved = match mode {
            // Distillation-only stages have no supervised validation signal;
            // pick the epoch with the lowest mean train loss.
            StageMode::DistillOnly => best.as_ref().map_or(true, |(m, _, _)| train_loss < *m),
            _ => {
                let uar = val_uar.expect("joint and supervised stages require a validation set");
                best.as_ref().map_or(true, |(m, _, _)| uar > *m)
            }
        };
        if improved {
            let metric = match mode {
                StageMode::DistillOnly => train_loss,
                _ => val_uar.unwrap(),
            };
            best = Some((metric, epoch, params.clone()));
        }
        let stats = EpochStats { stage: stage_no, epoch, train_loss, val_uar, val_war };
        history.push(stats.clone());
        if let Some(h) = hook.as_mut() {
            if let ControlFlow::Break(()) = h(&stats, &params) {
                break;
            }
        }
    }
    let (best_metric, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { params: best_params, best_epoch, best_metric, history })
}

/// Train a single-stage configuration and return the checkpoint with the
/// best validation UAR (ties keep the earlier epoch).
pub fn train_single(
    cfg: &TrainConfig,
    data: &TrainData,
    init: Option<StudentParams>,
    hook: Option<EpochHook>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if cfg.configuration.is_two_stage() {
        return Err(TrainError::InvalidConfig {
            detail: "two-stage-train must go through train_two_stage".into(),
        });
    }
    train_stage(cfg, data, StageMode::Joint, 1, init, hook)
}

/// Distillation-only warm-up over the unlabeled set, then supervised-only
/// training initialized from the warm-up's best checkpoint.
pub fn train_two_stage(
    cfg: &TrainConfig,
    data: &TrainData,
    init: Option<StudentParams>,
    hook: Option<EpochHook>,
) -> Result<TwoStageOutcome, TrainError> {
    cfg.validate()?;
    if !cfg.configuration.is_two_stage() {
        return Err(TrainError::InvalidConfig {
            detail: format!("configuration {} is single-stage", cfg.configuration),
        });
    }
    let stage1 = train_stage(cfg, data, StageMode::DistillOnly, 1, init, None)?;
    let stage2 = train_stage(cfg, data, StageMode::SupervisedOnly, 2, Some(stage1.params.clone()), hook)?;
    Ok(TwoStageOutcome { stage1, stage2 })
}

/// Train whatever `cfg.configuration` calls for and return a single outcome
/// (for two-stage runs: stage-2 selection with the histories concatenated).
pub fn train_for_config(
    cfg: &TrainConfig,
    data: &TrainData,
    init: Option<StudentParams>,
    hook: Option<EpochHook>,
) -> Result<TrainOutcome, TrainError> {
    if cfg.configuration.is_two_stage() {
        let two = train_two_stage(cfg, data, init, hook)?;
        let mut history = two.stage1.history;
        history.extend(two.stage2.history);
        Ok(TrainOutcome {
            params: two.stage2.params,
            best_epoch: two.stage2.best_epoch,
            best_metric: two.stage2.best_metric,
            history,
        })
    } else {
        train_single(cfg, data, init, hook)
    }
}

/// One evaluated cell of the lambda grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda_sd: f64,
    pub lambda_vd: f64,
    pub val_uar: f64,
    pub best_epoch: usize,
}

/// Sweep the active lambda axes (ascending), training one run per cell, and
/// return the weights with the best validation UAR. Ties keep the first
/// (smallest) cell. Axes the configuration does not use stay pinned at 0.
pub fn grid_search_lambda(
    cfg: &TrainConfig,
    data: &TrainData,
    grid: &[f64],
    init: Option<&StudentParams>,
) -> Result<(LossWeights, Vec<GridCell>), TrainError> {
    if !cfg.configuration.uses_speech() && !cfg.configuration.uses_video() {
        return Err(TrainError::InvalidConfig {
            detail: format!("configuration {} has no lambda axis to search", cfg.configuration),
        });
    }
    if grid.is_empty() {
        return Err(TrainError::InvalidConfig { detail: "lambda grid is empty".into() });
    }
    let mut axis: Vec<f64> = grid.to_vec();
    for v in &axis {
        if !(v.is_finite() && *v >= 0.0) {
            return Err(TrainError::InvalidConfig {
                detail: format!("lambda grid values must be finite and >= 0, got {v}"),
            });
        }
    }
    axis.sort_by(|a, b| a.partial_cmp(b).unwrap());
    axis.dedup();
    let sd_axis: Vec<f64> = if cfg.configuration.uses_speech() { axis.clone() } else { vec![0.0] };
    let vd_axis: Vec<f64> = if cfg.configuration.uses_video() { axis.clone() } else { vec![0.0] };
    let mut cells = Vec::new();
    let mut best: Option<(f64, LossWeights)> = None;
    for &lambda_sd in &sd_axis {
        for &lambda_vd in &vd_axis {
            let weights = LossWeights::new(lambda_sd, lambda_vd)?;
            let mut cell_cfg = cfg.clone();
            cell_cfg.weights = weights;
            let outcome = train_for_config(&cell_cfg, data, init.cloned(), None)?;
            cells.push(GridCell {
                lambda_sd,
                lambda_vd,
                val_uar: outcome.best_metric,
                best_epoch: outcome.best_epoch,
            });
            let is_better = best.as_ref().map_or(true, |(m, _)| outcome.best_metric > *m);
            if is_better {
                best = Some((outcome.best_metric, weights));
            }
        }
    }
    let (_, weights) = best.expect("grid has at least one cell");
    Ok((weights, cells))
}

/// One fold's end result: selected weights, test-set report, and history.
pub struct FoldOutcome {
    pub fold: usize,
    pub weights: LossWeights,
    pub report: EvalReport,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    pub params: StudentParams,
    pub grid: Option<Vec<GridCell>>,
    pub test_speakers: Vec<String>,
}

pub struct CvOutcome {
    pub folds: Vec<FoldOutcome>,
    pub mean_uar: f64,
    pub mean_war: f64,
}

/// Knobs for `run_cv` beyond the training configuration itself.
pub struct CvOptions<'a> {
    pub n_folds: usize,
    pub labeled_fraction: f64,
    /// Re-search the lambda axes inside every fold when set.
    pub grid: Option<&'a [f64]>,
    /// Start every fold from these parameters instead of a fresh init.
    pub init: Option<&'a StudentParams>,
}

impl<'a> CvOptions<'a> {
    pub fn new(n_folds: usize) -> CvOptions<'a> {
        CvOptions { n_folds, labeled_fraction: 1.0, grid: None, init: None }
    }
}

/// Observers for cross-validation progress; both are optional.
#[derive(Default)]
pub struct CvSinks<'h> {
    /// Called once per finished fold.
    pub on_fold: Option<&'h mut dyn FnMut(&FoldOutcome)>,
    /// Called after every epoch of each fold's final training run (grid
    /// cells excluded) with the fold index.
    pub on_epoch: Option<&'h mut dyn FnMut(usize, &EpochStats, &StudentParams)>,
}

/// Speaker-disjoint cross-validation: for each fold, group `f` is the test
/// set, the next group is validation, and the rest train. The labeled
/// fraction subsets only the training utterances (per speaker).
pub fn run_cv(
    cfg: &TrainConfig,
    labeled: &LabeledDataset,
    unlabeled: &[UnlabeledUtterance],
    k_v: usize,
    opts: &CvOptions,
    mut sinks: CvSinks,
) -> Result<CvOutcome, TrainError> {
    cfg.validate()?;
    let speakers = labeled.speakers();
    let plan = make_folds(&speakers, opts.n_folds, derive_seed(cfg.seed, &["cv"], &[]))?;
    let k_s = labeled.k_s();
    let mut folds = Vec::new();
    for (f, split) in plan.folds.iter().enumerate() {
        let in_group = |group: &[String], speaker: &str| group.iter().any(|s| s == speaker);
        let train_pool: Vec<&LabeledUtterance> = labeled
            .utterances
            .iter()
            .filter(|u| in_group(&split.train, &u.speaker))
            .collect();
        let train_speakers: Vec<&str> = train_pool.iter().map(|u| u.speaker.as_str()).collect();
        let keep = subset_indices(
            &train_speakers,
            opts.labeled_fraction,
            derive_seed(cfg.seed, &["subset"], &[f as u64]),
        )?;
        let train_set: Vec<&LabeledUtterance> = keep.iter().map(|&i| train_pool[i]).collect();
        let val: Vec<(&Waveform, usize)> = labeled
            .utterances
            .iter()
            .filter(|u| in_group(&split.val, &u.speaker))
            .map(|u| (&u.audio, u.label))
            .collect();
        let test: Vec<(&Waveform, usize)> = labeled
            .utterances
            .iter()
            .filter(|u| in_group(&split.test, &u.speaker))
            .map(|u| (&u.audio, u.label))
            .collect();
        let data =
            TrainData { labeled: train_set, unlabeled: unlabeled.iter().collect(), val, k_s, k_v };
        let mut fold_cfg = cfg.clone();
        fold_cfg.seed = derive_seed(cfg.seed, &["fold"], &[f as u64]);
        let (weights, grid_cells) = match opts.grid {
            Some(g) => {
                let (w, cells) = grid_search_lambda(&fold_cfg, &data, g, opts.init)?;
                (w, Some(cells))
            }
            None => (cfg.weights, None),
        };
        fold_cfg.weights = weights;
        let mut epoch_hook;
        let hook: Option<EpochHook> = match sinks.on_epoch.as_mut() {
            Some(sink) => {
                epoch_hook = |stats: &EpochStats, params: &StudentParams| {
                    sink(f, stats, params);
                    ControlFlow::Continue(())
                };
                Some(&mut epoch_hook)
            }
            None => None,
        };
        let outcome = train_for_config(&fold_cfg, &data, opts.init.cloned(), hook)?;
        let report = evaluate(&outcome.params, &test, k_s)?;
        let fold_outcome = FoldOutcome {
            fold: f,
            weights,
            report,
            best_epoch: outcome.best_epoch,
            history: outcome.history,
            params: outcome.params,
            grid: grid_cells,
            test_speakers: split.test.clone(),
        };
        if let Some(cb) = sinks.on_fold.as_mut() {
            cb(&fold_outcome);
        }
        folds.push(fold_outcome);
    }
    let n = folds.len() as f64;
    let mean_uar = folds.iter().map(|o| o.report.uar).sum::<f64>() / n;
    let mean_war = folds.iter().map(|o| o.report.war).sum::<f64>() / n;
    Ok(CvOutcome { folds, mean_uar, mean_war })
}

/// Fractions swept by the labeled-fraction ablation.
pub const FRACTION_GRID: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    /// MAE distillation vs soft-target cross-entropy distillation.
    DistillCe,
    /// Joint training vs distill-then-finetune scheduling.
    TwoStage,
    /// Base configuration and the supervised baseline across labeled fractions.
    LabeledFraction,
}

impl AblationKind {
    pub const ALL: [AblationKind; 3] =
        [AblationKind::DistillCe, AblationKind::TwoStage, AblationKind::LabeledFraction];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::DistillCe => "distill-ce",
            AblationKind::TwoStage => "two-stage",
            AblationKind::LabeledFraction => "labeled-fraction",
        }
    }

    pub fn parse(s: &str) -> Option<AblationKind> {
        AblationKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One arm of an ablation: the full cross-validation outcome for a
/// (configuration, labeled fraction) pair.
pub struct AblationRun {
    pub label: String,
    pub configuration: Configuration,
    pub labeled_fraction: f64,
    pub cv: CvOutcome,
}

/// Run a paired ablation. Every arm shares the base seed, so fold splits and
/// batch schedules line up between variant and baseline.
pub fn run_ablation(
    kind: AblationKind,
    base: &TrainConfig,
    labeled: &LabeledDataset,
    unlabeled: &[UnlabeledUtterance],
    k_v: usize,
    opts: &CvOptions,
    mut on_run: Option<&mut dyn FnMut(&AblationRun)>,
) -> Result<Vec<AblationRun>, TrainError> {
    let supervised_baseline = |seed: u64| {
        let mut cfg = TrainConfig::new(
            Configuration::NoDstl,
            LossWeights::new(0.0, 0.0).expect("zero weights are valid"),
            seed,
        );
        cfg.max_epochs = base.max_epochs;
        cfg.lr = base.lr;
        cfg.weight_decay = base.weight_decay;
        cfg.batch_size = base.batch_size;
        cfg.labeled_per_batch = base.labeled_per_batch;
        cfg
    };
    let arms: Vec<(TrainConfig, f64, String)> = match kind {
        AblationKind::DistillCe => {
            let mut mae = base.clone();
            mae.configuration = Configuration::VidSpDstl;
            let mut ce = base.clone();
            ce.configuration = Configuration::DistillCe;
            vec![
                (mae, 1.0, "vid-sp-dstl".to_string()),
                (ce, 1.0, "distill-ce".to_string()),
            ]
        }
        AblationKind::TwoStage => {
            let mut joint = base.clone();
            joint.configuration = Configuration::VidSpDstl;
            let mut staged = base.clone();
            staged.configuration = Configuration::TwoStageTrain;
            vec![
                (joint, 1.0, "vid-sp-dstl".to_string()),
                (staged, 1.0, "two-stage-train".to_string()),
            ]
        }
        AblationKind::LabeledFraction => {
            let mut arms = Vec::new();
            for fraction in FRACTION_GRID {
                arms.push((
                    base.clone(),
                    fraction,
                    format!("{} @ {:.2}", base.configuration, fraction),
                ));
                arms.push((
                    supervised_baseline(base.seed),
                    fraction,
                    format!("no-dstl @ {fraction:.2}"),
                ));
            }
            arms
        }
    };
    let mut runs = Vec::new();
    for (cfg, fraction, label) in arms {
        let arm_opts = CvOptions {
            n_folds: opts.n_folds,
            labeled_fraction: fraction * opts.labeled_fraction,
            // The baseline has no lambda axis, so the grid only applies to
            // arms that distill.
            grid: if cfg.configuration.uses_speech() || cfg.configuration.uses_video() {
                opts.grid
            } else {
                None
            },
            init: opts.init,
        };
        let cv = run_cv(&cfg, labeled, unlabeled, k_v, &arm_opts, CvSinks::default())?;
        let run = AblationRun { label, configuration: cfg.configuration, labeled_fraction: fraction, cv };
        if let Some(cb) = on_run.as_mut() {
            cb(&run);
        }
        runs.push(run);
    }
    Ok(runs)
}
