//! Dataset plumbing: manifest and teacher-output ingestion, speaker-disjoint
//! fold plans, mixed labeled/unlabeled batching, labeled-fraction subsetting,
//! and a synthetic dataset generator for end-to-end runs without any corpus
//! downloads.

use crate::audio::{read_wav, resample, write_wav, AudioError, Waveform, SAMPLE_RATE, SEGMENT_SAMPLES};
use crate::loss::EmotionDistribution;
use crate::seeds::derive_seed;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::error::Error;
use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Seconds covered by one speech-teacher segment.
pub const SPEECH_SLOT_SECS: f64 = 0.5;
/// Seconds covered by one video-teacher segment: 16 frames at 30 fps.
pub const VIDEO_SLOT_SECS: f64 = 16.0 / 30.0;
/// Seconds covered by one training crop.
pub const CROP_SECS: f64 = SEGMENT_SAMPLES as f64 / SAMPLE_RATE as f64;

#[derive(Debug)]
pub enum DataError {
    Io { path: PathBuf, detail: String },
    Manifest { path: PathBuf, line: u64, detail: String },
    Teacher { path: PathBuf, line: usize, detail: String },
    Audio { path: PathBuf, source: AudioError },
    NotEnoughSpeakers { have: usize, need: usize },
    BadFraction { value: f64 },
    BadBatchSpec { detail: String },
    BadSynthSpec { detail: String },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io { path, detail } => write!(f, "{}: {detail}", path.display()),
            DataError::Manifest { path, line, detail } => {
                write!(f, "{} line {line}: {detail}", path.display())
            }
            DataError::Teacher { path, line, detail } => {
                write!(f, "{} line {line}: {detail}", path.display())
            }
            DataError::Audio { path, source } => write!(f, "{}: {source}", path.display()),
            DataError::NotEnoughSpeakers { have, need } => {
                write!(f, "need at least {need} speakers for disjoint folds, have {have}")
            }
            DataError::BadFraction { value } => {
                write!(f, "labeled fraction must be in (0, 1], got {value}")
            }
            DataError::BadBatchSpec { detail } => write!(f, "bad batch spec: {detail}"),
            DataError::BadSynthSpec { detail } => write!(f, "bad synthesis spec: {detail}"),
        }
    }
}

impl Error for DataError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            DataError::Audio { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One labeled training utterance, audio loaded and resampled to 16 kHz.
#[derive(Debug, Clone)]
pub struct LabeledUtterance {
    pub id: String,
    pub speaker: String,
    pub audio: Waveform,
    pub label: usize,
}

/// One unlabeled utterance with per-segment outputs from both teachers.
#[derive(Debug, Clone)]
pub struct UnlabeledUtterance {
    pub id: String,
    pub audio: Waveform,
    pub speech_teacher: Vec<EmotionDistribution>,
    pub video_teacher: Vec<EmotionDistribution>,
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub utterances: Vec<LabeledUtterance>,
    /// Sorted label names; an utterance's `label` indexes this list.
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn k_s(&self) -> usize {
        self.class_names.len()
    }

    /// Distinct speaker ids, sorted.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.utterances.iter().map(|u| u.speaker.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }
}

fn read_manifest_rows(path: &Path, columns: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
    let raw = fs::read_to_string(path).map_err(|e| DataError::Io { path: path.into(), detail: e.to_string() })?;
    let delim = if raw.lines().next().is_some_and(|l| l.contains('\t')) { b'\t' } else { b',' };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Manifest { path: path.into(), line: 1, detail: e.to_string() })?
        .clone();
    let mut col_idx = Vec::new();
    for col in columns {
        let idx = headers.iter().position(|h| h.eq_ignore_ascii_case(col)).ok_or_else(|| DataError::Manifest {
            path: path.into(),
            line: 1,
            detail: format!("missing required column '{col}' in header"),
        })?;
        col_idx.push(idx);
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Manifest { path: path.into(), line: 0, detail: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut fields = Vec::with_capacity(col_idx.len());
        for (&idx, col) in col_idx.iter().zip(columns) {
            let value = record.get(idx).unwrap_or("").to_string();
            if value.is_empty() {
                return Err(DataError::Manifest { path: path.into(), line, detail: format!("empty '{col}' field") });
            }
            fields.push(value);
        }
        rows.push((line, fields));
    }
    Ok(rows)
}

fn load_audio_at_16k(path: &Path) -> Result<Waveform> {
    let wave = read_wav(path).map_err(|e| DataError::Audio { path: path.into(), source: e })?;
    resample(&wave, SAMPLE_RATE).map_err(|e| DataError::Audio { path: path.into(), source: e })
}

fn resolve(manifest: &Path, rel: &str) -> PathBuf {
    let p = PathBuf::from(rel);
    if p.is_absolute() {
        p
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Load a labeled manifest (CSV or TSV, header `id,speaker,path,label`).
/// Audio paths are resolved relative to the manifest, labels are mapped to
/// indices by sorted name, and every referenced file is read up front.
pub fn load_labeled_manifest(path: &Path) -> Result<LabeledDataset> {
    let rows = read_manifest_rows(path, &["id", "speaker", "path", "label"])?;
    if rows.is_empty() {
        return Err(DataError::Manifest { path: path.into(), line: 1, detail: "manifest lists no utterances".into() });
    }
    let class_names: Vec<String> = {
        let set: BTreeSet<&str> = rows.iter().map(|(_, f)| f[3].as_str()).collect();
        set.into_iter().map(String::from).collect()
    };
    if class_names.len() < 2 {
        return Err(DataError::Manifest {
            path: path.into(),
            line: 1,
            detail: format!("need at least 2 label classes, found {}", class_names.len()),
        });
    }
    let mut seen = HashSet::new();
    let mut utterances = Vec::with_capacity(rows.len());
    for (line, fields) in rows {
        let [id, speaker, rel, label_name] = [&fields[0], &fields[1], &fields[2], &fields[3]];
        if !seen.insert(id.clone()) {
            return Err(DataError::Manifest { path: path.into(), line, detail: format!("duplicate id '{id}'") });
        }
        let label = class_names.binary_search_by(|c| c.as_str().cmp(label_name)).expect("label collected above");
        let audio = load_audio_at_16k(&resolve(path, rel))?;
        utterances.push(LabeledUtterance { id: id.clone(), speaker: speaker.clone(), audio, label });
    }
    Ok(LabeledDataset { utterances, class_names })
}

static TEACHER_LOADS: AtomicUsize = AtomicUsize::new(0);

/// How many times teacher outputs have been loaded in this process. Lets
/// tests pin down that purely supervised runs never touch teacher files.
pub fn teacher_load_count() -> usize {
    TEACHER_LOADS.load(Ordering::Relaxed)
}

#[derive(Serialize, Deserialize)]
struct TeacherLine {
    id: String,
    teacher: String,
    segments: Vec<Vec<f64>>,
}

/// Per-utterance teacher outputs keyed by id, one map per teacher stream.
#[derive(Debug, Default)]
pub struct TeacherOutputs {
    pub speech: HashMap<String, Vec<EmotionDistribution>>,
    pub video: HashMap<String, Vec<EmotionDistribution>>,
}

impl TeacherOutputs {
    /// Class counts (speech, video) if the respective stream is non-empty.
    pub fn dims(&self) -> (Option<usize>, Option<usize>) {
        (
            self.speech.values().next().map(|s| s[0].len()),
            self.video.values().next().map(|s| s[0].len()),
        )
    }
}

/// Parse a JSON-lines teacher file. Each line carries one utterance's
/// per-segment distributions for one teacher; a file may mix both teachers.
/// Every vector must sum to 1 within 1e-5 and all lines of one teacher must
/// agree on the class count.
pub fn load_teacher_outputs(path: &Path) -> Result<TeacherOutputs> {
    TEACHER_LOADS.fetch_add(1, Ordering::Relaxed);
    let raw = fs::read_to_string(path).map_err(|e| DataError::Io { path: path.into(), detail: e.to_string() })?;
    let mut out = TeacherOutputs::default();
    let mut dims: HashMap<&'static str, usize> = HashMap::new();
    for (lineno, text) in raw.lines().enumerate() {
        let line = lineno + 1;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: TeacherLine = serde_json::from_str(text)
            .map_err(|e| DataError::Teacher { path: path.into(), line, detail: e.to_string() })?;
        let (kind, map) = match parsed.teacher.as_str() {
            "speech" => ("speech", &mut out.speech),
            "video" => ("video", &mut out.video),
            other => {
                return Err(DataError::Teacher {
                    path: path.into(),
                    line,
                    detail: format!("unknown teacher '{other}' (expected 'speech' or 'video')"),
                })
            }
        };
        if parsed.segments.is_empty() {
            return Err(DataError::Teacher { path: path.into(), line, detail: "no segments".into() });
        }
        let mut segs = Vec::with_capacity(parsed.segments.len());
        for probs in parsed.segments {
            let k = probs.len();
            match dims.get(kind) {
                Some(&expect) if expect != k => {
                    return Err(DataError::Teacher {
                        path: path.into(),
                        line,
                        detail: format!("{kind} teacher has {k} classes here but {expect} earlier"),
                    })
                }
                Some(_) => {}
                None => {
                    dims.insert(kind, k);
                }
            }
            segs.push(EmotionDistribution::new(probs).map_err(|e| DataError::Teacher {
                path: path.into(),
                line,
                detail: e.to_string(),
            })?);
        }
        if map.insert(parsed.id.clone(), segs).is_some() {
            return Err(DataError::Teacher {
                path: path.into(),
                line,
                detail: format!("duplicate {kind} entry for id '{}'", parsed.id),
            });
        }
    }
    Ok(out)
}

/// Load an unlabeled manifest (header `id,path`) and attach teacher outputs.
/// Every manifest id must have both teacher streams; the speech stream must
/// match `k_s`. Returns the utterances plus the video class count.
pub fn load_unlabeled(manifest: &Path, teacher_file: &Path, k_s: usize) -> Result<(Vec<UnlabeledUtterance>, usize)> {
    let rows = read_manifest_rows(manifest, &["id", "path"])?;
    if rows.is_empty() {
        return Err(DataError::Manifest {
            path: manifest.into(),
            line: 1,
            detail: "manifest lists no utterances".into(),
        });
    }
    let teachers = load_teacher_outputs(teacher_file)?;
    match teachers.dims().0 {
        Some(k) if k != k_s => {
            return Err(DataError::Teacher {
                path: teacher_file.into(),
                line: 0,
                detail: format!("speech teacher has {k} classes, labeled data has {k_s}"),
            })
        }
        _ => {}
    }
    let k_v = teachers.dims().1.ok_or_else(|| DataError::Teacher {
        path: teacher_file.into(),
        line: 0,
        detail: "no video teacher entries".into(),
    })?;
    let mut seen = HashSet::new();
    let mut utterances = Vec::with_capacity(rows.len());
    for (line, fields) in rows {
        let (id, rel) = (&fields[0], &fields[1]);
        if !seen.insert(id.clone()) {
            return Err(DataError::Manifest { path: manifest.into(), line, detail: format!("duplicate id '{id}'") });
        }
        let speech = teachers.speech.get(id).cloned().ok_or_else(|| DataError::Teacher {
            path: teacher_file.into(),
            line: 0,
            detail: format!("no speech teacher outputs for id '{id}'"),
        })?;
        let video = teachers.video.get(id).cloned().ok_or_else(|| DataError::Teacher {
            path: teacher_file.into(),
            line: 0,
            detail: format!("no video teacher outputs for id '{id}'"),
        })?;
        let audio = load_audio_at_16k(&resolve(manifest, rel))?;
        utterances.push(UnlabeledUtterance { id: id.clone(), audio, speech_teacher: speech, video_teacher: video });
    }
    Ok((utterances, k_v))
}

/// Speaker sets for one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<FoldSplit>,
}

/// Shuffle speakers (seeded) into `n` near-equal groups; fold f tests on
/// group f, validates on group (f+1) mod n, trains on the rest.
pub fn make_folds(speakers: &[String], n: usize, seed: u64) -> Result<FoldPlan> {
    if n < 2 {
        return Err(DataError::BadBatchSpec { detail: format!("need at least 2 folds, got {n}") });
    }
    if speakers.len() < n {
        return Err(DataError::NotEnoughSpeakers { have: speakers.len(), need: n });
    }
    let mut order: Vec<&String> = speakers.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &["folds"], &[])));
    let base = speakers.len() / n;
    let extra = speakers.len() % n;
    let mut groups: Vec<Vec<String>> = Vec::with_capacity(n);
    let mut at = 0;
    for g in 0..n {
        let size = base + usize::from(g < extra);
        groups.push(order[at..at + size].iter().map(|s| s.to_string()).collect());
        at += size;
    }
    let folds = (0..n)
        .map(|f| {
            let val_g = (f + 1) % n;
            let mut train = Vec::new();
            for (g, group) in groups.iter().enumerate() {
                if g != f && g != val_g {
                    train.extend(group.iter().cloned());
                }
            }
            FoldSplit { train, val: groups[val_g].clone(), test: groups[f].clone() }
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Index composition of one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

fn index_stream(n_items: usize, needed: usize, seed: u64, epoch: usize, tag: &str) -> Vec<usize> {
    let mut out = Vec::with_capacity(needed);
    let mut cycle = 0u64;
    while out.len() < needed {
        let mut idx: Vec<usize> = (0..n_items).collect();
        let s = derive_seed(seed, &["batches", tag], &[epoch as u64, cycle]);
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
        out.extend(idx);
        cycle += 1;
    }
    out.truncate(needed);
    out
}

/// Plan one epoch of mini-batches: `per_l` labeled plus `per_u` unlabeled
/// items per batch, every batch full. Each source is shuffled per epoch and
/// cycles independently; the epoch ends once the larger used source has been
/// seen in full (ties favor the labeled side).
pub fn make_batches(
    n_labeled: usize,
    n_unlabeled: usize,
    per_l: usize,
    per_u: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<BatchPlan>> {
    if per_l + per_u == 0 {
        return Err(DataError::BadBatchSpec { detail: "batch would be empty".into() });
    }
    if per_l > 0 && n_labeled == 0 {
        return Err(DataError::BadBatchSpec {
            detail: format!("{per_l} labeled items per batch requested but the labeled set is empty"),
        });
    }
    if per_u > 0 && n_unlabeled == 0 {
        return Err(DataError::BadBatchSpec {
            detail: format!("{per_u} unlabeled items per batch requested but the unlabeled set is empty"),
        });
    }
    let mut candidates = Vec::new();
    if per_l > 0 {
        candidates.push((n_labeled, per_l));
    }
    if per_u > 0 {
        candidates.push((n_unlabeled, per_u));
    }
    // Largest source wins; on a tie the labeled side (listed first) does.
    let mut major = candidates[0];
    for c in &candidates[1..] {
        if c.0 > major.0 {
            major = *c;
        }
    }
    let (major_items, major_quota) = major;
    let n_batches = major_items.div_ceil(major_quota);
    let lab = index_stream(n_labeled, n_batches * per_l, seed, epoch, "labeled");
    let unl = index_stream(n_unlabeled, n_batches * per_u, seed, epoch, "unlabeled");
    Ok((0..n_batches)
        .map(|b| BatchPlan {
            labeled: lab[b * per_l..(b + 1) * per_l].to_vec(),
            unlabeled: unl[b * per_u..(b + 1) * per_u].to_vec(),
        })
        .collect())
}

/// Keep a seeded per-speaker subset of the labeled utterances: every speaker
/// keeps ceil(fraction * their count), chosen by a permutation prefix so a
/// smaller fraction is always a subset of a larger one under the same seed.
/// Returns kept indices in ascending order.
pub fn subset_labeled(utterances: &[LabeledUtterance], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let speakers: Vec<&str> = utterances.iter().map(|u| u.speaker.as_str()).collect();
    subset_indices(&speakers, fraction, seed)
}

/// `subset_labeled` over bare speaker ids, one per item.
pub fn subset_indices(speakers: &[&str], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::BadFraction { value: fraction });
    }
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in speakers.iter().enumerate() {
        by_speaker.entry(s).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (speaker, mut idx) in by_speaker {
        let n = ((fraction * idx.len() as f64).ceil() as usize).min(idx.len());
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &["subset", speaker], &[])));
        keep.extend(idx.into_iter().take(n));
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Which teacher segments fall inside a 3 s crop starting at `t0` seconds:
/// all slots whose midpoints land in [t0, t0 + window). Falls back to the
/// slot nearest the window center if none do.
pub fn segments_in_window(n_segments: usize, slot_secs: f64, t0: f64, window_secs: f64) -> std::ops::Range<usize> {
    let lo = ((t0 / slot_secs - 0.5).ceil().max(0.0) as usize).min(n_segments);
    let hi = (((t0 + window_secs) / slot_secs - 0.5).ceil().max(0.0) as usize).min(n_segments);
    if lo < hi {
        lo..hi
    } else {
        let center = ((t0 + window_secs / 2.0) / slot_secs - 0.5).round().max(0.0) as usize;
        let idx = center.min(n_segments.saturating_sub(1));
        idx..idx + 1
    }
}

const EMOTION_NAMES: [&str; 8] =
    ["angry", "calm", "disgust", "fearful", "happy", "neutral", "sad", "surprised"];

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub labeled: LabeledDataset,
    pub unlabeled: Vec<UnlabeledUtterance>,
}

fn synth_wave(class: usize, rng: &mut ChaCha8Rng) -> Waveform {
    let carrier = 300.0 * 1.4f64.powi(class as i32) * (1.0 + (rng.random::<f64>() * 2.0 - 1.0) * 0.03);
    let mod_rate = 1.5 + 0.9 * class as f64;
    let phase = rng.random::<f64>() * TAU;
    let samples = (0..SEGMENT_SAMPLES)
        .map(|t| {
            let tt = t as f64 / SAMPLE_RATE as f64;
            let am = 1.0 + 0.5 * (TAU * mod_rate * tt).sin();
            0.55 * am * (TAU * carrier * tt + phase).sin() + 0.02 * (rng.random::<f64>() * 2.0 - 1.0)
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE).expect("synthesized audio is finite")
}

fn synth_teacher(class: usize, k: usize, noise: f64, rng: &mut ChaCha8Rng) -> EmotionDistribution {
    if noise <= 0.0 {
        let mut probs = vec![0.0; k];
        probs[class] = 1.0;
        return EmotionDistribution::new(probs).expect("one-hot is a distribution");
    }
    let logits: Vec<f64> = (0..k)
        .map(|i| f64::from(i == class) / noise + 0.1 * (rng.random::<f64>() * 2.0 - 1.0))
        .collect();
    EmotionDistribution::new(crate::tensor::softmax(&logits).expect("finite logits")).expect("softmax sums to 1")
}

/// Generate a deterministic synthetic corpus: each class is a 3 s
/// amplitude-modulated tone (class-specific carrier and modulation rate plus
/// a little noise), and unlabeled items carry oracle teacher outputs peaked
/// at the true class. `teacher_noise` of 0 gives exactly one-hot teachers.
pub fn gen_synth(
    n_labeled: usize,
    n_unlabeled: usize,
    k_s: usize,
    k_v: usize,
    teacher_noise: f64,
    seed: u64,
) -> Result<SynthDataset> {
    if k_s < 2 || k_v < 2 {
        return Err(DataError::BadSynthSpec { detail: format!("class counts must be at least 2, got K_S={k_s}, K_V={k_v}") });
    }
    if k_v > k_s {
        return Err(DataError::BadSynthSpec {
            detail: format!("K_V={k_v} exceeds K_S={k_s}; the video-class map K_S->K_V must be surjective"),
        });
    }
    if n_labeled == 0 {
        return Err(DataError::BadSynthSpec { detail: "need at least one labeled utterance".into() });
    }
    if !teacher_noise.is_finite() || teacher_noise < 0.0 {
        return Err(DataError::BadSynthSpec { detail: format!("teacher_noise must be finite and >= 0, got {teacher_noise}") });
    }
    let class_names: Vec<String> = if k_s <= EMOTION_NAMES.len() {
        EMOTION_NAMES[..k_s].iter().map(|s| s.to_string()).collect()
    } else {
        (0..k_s).map(|c| format!("class{c:02}")).collect()
    };
    let n_spk = n_labeled.min(5.max(n_labeled / 10));
    let mut utterances = Vec::with_capacity(n_labeled);
    for i in 0..n_labeled {
        let id = format!("lab{i:04}");
        let class = i % k_s;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["synth", &id], &[]));
        utterances.push(LabeledUtterance {
            speaker: format!("spk{:02}", i % n_spk),
            audio: synth_wave(class, &mut rng),
            label: class,
            id,
        });
    }
    let mut unlabeled = Vec::with_capacity(n_unlabeled);
    for j in 0..n_unlabeled {
        let id = format!("unl{j:04}");
        let class = j % k_s;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["synth", &id], &[]));
        let audio = synth_wave(class, &mut rng);
        let speech_teacher = (0..6).map(|_| synth_teacher(class, k_s, teacher_noise, &mut rng)).collect();
        let video_teacher = (0..5).map(|_| synth_teacher(class % k_v, k_v, teacher_noise, &mut rng)).collect();
        unlabeled.push(UnlabeledUtterance { id, audio, speech_teacher, video_teacher });
    }
    Ok(SynthDataset { labeled: LabeledDataset { utterances, class_names }, unlabeled })
}

/// Manifest and teacher-file paths produced by `write_synth`.
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub labeled_manifest: PathBuf,
    pub unlabeled_manifest: PathBuf,
    pub teacher_file: PathBuf,
}

fn io_err<E: fmt::Display>(path: &Path) -> impl FnOnce(E) -> DataError + '_ {
    move |e| DataError::Io { path: path.into(), detail: e.to_string() }
}

/// Write a synthetic dataset to disk in the exact formats the loaders read:
/// 16-bit WAV files under `audio/`, CSV manifests, and a JSON-lines teacher
/// file.
pub fn write_synth(dir: &Path, data: &SynthDataset) -> Result<SynthPaths> {
    let audio_dir = dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(io_err(&audio_dir))?;

    let mut labeled = String::from("id,speaker,path,label\n");
    for u in &data.labeled.utterances {
        let rel = format!("audio/{}.wav", u.id);
        write_wav(&dir.join(&rel), &u.audio).map_err(|e| DataError::Audio { path: dir.join(&rel), source: e })?;
        labeled.push_str(&format!("{},{},{},{}\n", u.id, u.speaker, rel, data.labeled.class_names[u.label]));
    }
    let labeled_manifest = dir.join("labeled.csv");
    fs::write(&labeled_manifest, labeled).map_err(io_err(&labeled_manifest))?;

    let mut unlabeled = String::from("id,path\n");
    let mut teachers = String::new();
    for u in &data.unlabeled {
        let rel = format!("audio/{}.wav", u.id);
        write_wav(&dir.join(&rel), &u.audio).map_err(|e| DataError::Audio { path: dir.join(&rel), source: e })?;
        unlabeled.push_str(&format!("{},{}\n", u.id, rel));
        for (teacher, segs) in [("speech", &u.speech_teacher), ("video", &u.video_teacher)] {
            let line = TeacherLine {
                id: u.id.clone(),
                teacher: teacher.into(),
                segments: segs.iter().map(|d| d.probs().to_vec()).collect(),
            };
            teachers.push_str(&serde_json::to_string(&line).expect("teacher line serializes"));
            teachers.push('\n');
        }
    }
    let unlabeled_manifest = dir.join("unlabeled.csv");
    fs::write(&unlabeled_manifest, unlabeled).map_err(io_err(&unlabeled_manifest))?;
    let teacher_file = dir.join("teachers.jsonl");
    fs::write(&teacher_file, teachers).map_err(io_err(&teacher_file))?;

    Ok(SynthPaths { labeled_manifest, unlabeled_manifest, teacher_file })
}
