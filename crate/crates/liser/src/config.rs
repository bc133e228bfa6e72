//! Run configuration: `key = value` files with `#` comments, environment and
//! flag overrides, a stable digest for checkpoint headers, and the
//! `run.json` record that makes a finished run re-executable.

use crate::checkpoint::write_atomic;
use crate::loss::LossWeights;
use crate::seeds::fnv1a;
use crate::train::{Configuration, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

pub enum ConfigError {
    Io { path: PathBuf, detail: String },
    /// A line that is not a comment, section, or `key = value` pair.
    Parse { line: usize, detail: String },
    UnknownKey { line: usize, key: String },
    BadValue { line: usize, key: String, detail: String },
    /// A required input path is absent or does not exist.
    MissingInput { key: String, detail: String },
    /// Cross-field inconsistency after all overrides are applied.
    Invalid { detail: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, detail } => {
                write!(f, "cannot read config {}: {detail}", path.display())
            }
            ConfigError::Parse { line, detail } => write!(f, "config line {line}: {detail}"),
            ConfigError::UnknownKey { line, key } => {
                write!(f, "config line {line}: unknown key \"{key}\"")
            }
            ConfigError::BadValue { line, key, detail } => {
                write!(f, "config line {line}: bad value for \"{key}\": {detail}")
            }
            ConfigError::MissingInput { key, detail } => write!(f, "{key}: {detail}"),
            ConfigError::Invalid { detail } => write!(f, "invalid config: {detail}"),
        }
    }
}

impl fmt::Debug for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

/// Everything a run needs, resolved from defaults, then a config file, then
/// the `LISER_SEED` environment variable, then command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub configuration: Configuration,
    pub lambda_sd: f64,
    pub lambda_vd: f64,
    /// Search the lambda grid per fold instead of using fixed lambdas.
    pub grid_search: bool,
    pub max_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub labeled_per_batch: usize,
    pub seed: u64,
    /// Fraction of each speaker's training utterances to keep.
    pub labeled_fraction: f64,
    pub n_folds: usize,
    pub labeled_manifest: Option<PathBuf>,
    pub unlabeled_manifest: Option<PathBuf>,
    pub teacher_file: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Existing checkpoint to evaluate or fine-tune.
    pub checkpoint: Option<PathBuf>,
    /// Worker-parallelism cap; recorded in run.json.
    pub threads: usize,
    /// Keep a checkpoint per epoch instead of only the selected one.
    pub save_every_epoch: bool,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            configuration: Configuration::NoDstl,
            lambda_sd: 0.0,
            lambda_vd: 0.0,
            grid_search: false,
            max_epochs: 50,
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 25,
            labeled_per_batch: 13,
            seed: 0,
            labeled_fraction: 1.0,
            n_folds: 5,
            labeled_manifest: None,
            unlabeled_manifest: None,
            teacher_file: None,
            output_dir: None,
            checkpoint: None,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            save_every_epoch: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        line,
        key: key.to_string(),
        detail: e.to_string(),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            detail: format!("expected a boolean, got \"{other}\""),
        }),
    }
}

impl RunConfig {
    /// Apply one `key = value` pair. `line` is used only for error messages.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "configuration" => {
                self.configuration =
                    Configuration::parse(value).ok_or_else(|| ConfigError::BadValue {
                        line,
                        key: key.into(),
                        detail: format!(
                            "unknown configuration \"{value}\" (expected one of {})",
                            Configuration::ALL.map(|c| c.name()).join(", ")
                        ),
                    })?;
            }
            "lambda_sd" => self.lambda_sd = parse_num(line, key, value)?,
            "lambda_vd" => self.lambda_vd = parse_num(line, key, value)?,
            "grid_search" => self.grid_search = parse_bool(line, key, value)?,
            "max_epochs" => self.max_epochs = parse_num(line, key, value)?,
            "lr" => self.lr = parse_num(line, key, value)?,
            "weight_decay" => self.weight_decay = parse_num(line, key, value)?,
            "batch_size" => self.batch_size = parse_num(line, key, value)?,
            "labeled_per_batch" => self.labeled_per_batch = parse_num(line, key, value)?,
            "seed" => self.seed = parse_num(line, key, value)?,
            "labeled_fraction" => self.labeled_fraction = parse_num(line, key, value)?,
            "n_folds" => self.n_folds = parse_num(line, key, value)?,
            "labeled_manifest" => self.labeled_manifest = Some(PathBuf::from(value)),
            "unlabeled_manifest" => self.unlabeled_manifest = Some(PathBuf::from(value)),
            "teacher_file" => self.teacher_file = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "threads" => {
                self.threads = parse_num(line, key, value)?;
                if self.threads == 0 {
                    return Err(ConfigError::BadValue {
                        line,
                        key: key.into(),
                        detail: "threads must be at least 1".into(),
                    });
                }
            }
            "save_every_epoch" => self.save_every_epoch = parse_bool(line, key, value)?,
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
        Ok(())
    }

    /// Merge a config file into this config. Grammar: `key = value` lines,
    /// `#` starts a comment, `[section]` headers are tolerated and ignored,
    /// unknown keys are rejected.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let no_comment = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let trimmed = no_comment.trim();
            if trimmed.is_empty() {
                continue;
            }
            if trimmed.starts_with('[') && trimmed.ends_with(']') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Parse {
                    line,
                    detail: format!("expected \"key = value\", got \"{trimmed}\""),
                });
            };
            self.set(key.trim(), value.trim(), line)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.into(), detail: e.to_string() })?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Apply the `LISER_SEED` override; `value` is the raw variable content.
    pub fn apply_env_seed(&mut self, value: &str) -> Result<()> {
        self.seed = value.parse().map_err(|e: std::num::ParseIntError| ConfigError::BadValue {
            line: 0,
            key: "LISER_SEED".into(),
            detail: e.to_string(),
        })?;
        Ok(())
    }

    /// Will this run actually consume unlabeled audio and teacher outputs?
    /// True when the configuration has a distillation term that is either
    /// grid-searched or given a positive weight.
    pub fn wants_teachers(&self) -> bool {
        let distills = self.configuration.uses_speech() || self.configuration.uses_video();
        distills && (self.grid_search || self.lambda_sd > 0.0 || self.lambda_vd > 0.0)
    }

    /// Cross-field checks plus existence of every referenced input path.
    /// `needs` lists the path keys the current subcommand requires.
    pub fn validate(&self, needs: &[&str]) -> Result<()> {
        let lookup = |key: &str| -> &Option<PathBuf> {
            match key {
                "labeled_manifest" => &self.labeled_manifest,
                "unlabeled_manifest" => &self.unlabeled_manifest,
                "teacher_file" => &self.teacher_file,
                "checkpoint" => &self.checkpoint,
                "output_dir" => &self.output_dir,
                other => panic!("unknown path key {other}"),
            }
        };
        let mut required: Vec<&str> = needs.to_vec();
        if self.wants_teachers() && needs.contains(&"labeled_manifest") {
            for key in ["unlabeled_manifest", "teacher_file"] {
                if !required.contains(&key) {
                    required.push(key);
                }
            }
        }
        for key in &required {
            let Some(path) = lookup(key) else {
                return Err(ConfigError::MissingInput {
                    key: (*key).into(),
                    detail: format!(
                        "required for configuration {} but not set",
                        self.configuration
                    ),
                });
            };
            // The output directory is created on demand; inputs must exist.
            if *key != "output_dir" && !path.exists() {
                return Err(ConfigError::MissingInput {
                    key: (*key).into(),
                    detail: format!("path {} does not exist", path.display()),
                });
            }
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(ConfigError::Invalid {
                detail: format!("labeled_fraction must be in (0, 1], got {}", self.labeled_fraction),
            });
        }
        self.to_train_config().map_err(|e| ConfigError::Invalid { detail: e.to_string() })?;
        Ok(())
    }

    pub fn to_train_config(&self) -> std::result::Result<TrainConfig, crate::train::TrainError> {
        let weights = LossWeights::new(self.lambda_sd, self.lambda_vd)
            .map_err(crate::train::TrainError::Loss)?;
        let cfg = TrainConfig {
            configuration: self.configuration,
            weights,
            max_epochs: self.max_epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            labeled_per_batch: self.labeled_per_batch,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Stable hex digest of the resolved config; stored in checkpoint
    /// headers so a checkpoint can be matched to the run that produced it.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(canonical.as_bytes()))
    }
}

/// The `run.json` payload: the resolved config plus enough provenance to
/// re-execute the run identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub config_digest: String,
    pub crate_version: String,
    pub format_version: u32,
}

impl RunRecord {
    pub fn new(config: &RunConfig) -> RunRecord {
        RunRecord {
            config: config.clone(),
            config_digest: config.digest(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            format_version: 1,
        }
    }
}

/// Write `run.json` into the output directory (atomically) and return its path.
pub fn write_run_json(dir: &Path, config: &RunConfig) -> Result<PathBuf> {
    let record = RunRecord::new(config);
    let mut body = serde_json::to_string_pretty(&record).expect("record serializes");
    body.push('\n');
    let path = dir.join("run.json");
    write_atomic(&path, body.as_bytes())
        .map_err(|e| ConfigError::Io { path: path.clone(), detail: e.to_string() })?;
    Ok(path)
}
