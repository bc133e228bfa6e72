//! Command-line front end: argument parsing, subcommand dispatch, and the
//! exit-code contract (0 success, 1 usage error, 2 bad data or config,
//! 3 training divergence).

use crate::audio::{crop_or_pad_3s, mel::log_mel, AudioError, SegmentMode};
use crate::checkpoint::{
    load_student, save_student, write_atomic, write_file, Block, Checkpoint, CheckpointError,
    CheckpointHeader,
};
use crate::config::{write_run_json, ConfigError, RunConfig};
use crate::data::{gen_synth, load_labeled_manifest, load_unlabeled, write_synth, DataError};
use crate::eval::{evaluate, EvalError};
use crate::metrics::MetricsError;
use crate::model::StudentParams;
use crate::report::{
    build_report, fraction_curve_svg, fraction_series, scan_run_dirs, write_history_jsonl,
    write_summary, ReportError, RunSummary,
};
use crate::train::{
    run_ablation, run_cv, AblationKind, Configuration, CvOptions, CvSinks, EpochStats,
    TrainError, LAMBDA_GRID,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Print to stdout but ignore a closed pipe, so `liser eval | head` ends
/// quietly instead of panicking (Rust ignores SIGPIPE).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub enum CliError {
    Config(ConfigError),
    Train(TrainError),
    Data(DataError),
    Audio(AudioError),
    Checkpoint(CheckpointError),
    Report(ReportError),
    Metrics(MetricsError),
    Io { path: PathBuf, detail: String },
    /// Inputs that parse but cannot be used together (wrong classes ...).
    Input { detail: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Train(TrainError::Diverged { .. }) => EXIT_DIVERGED,
            _ => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Train(e) => write!(f, "{e}"),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Audio(e) => write!(f, "{e}"),
            CliError::Checkpoint(e) => write!(f, "{e}"),
            CliError::Report(e) => write!(f, "{e}"),
            CliError::Metrics(e) => write!(f, "{e}"),
            CliError::Io { path, detail } => write!(f, "{}: {detail}", path.display()),
            CliError::Input { detail } => write!(f, "{detail}"),
        }
    }
}

impl fmt::Debug for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl std::error::Error for CliError {}

macro_rules! from_err {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::$variant(e)
            }
        }
    };
}
from_err!(Config, ConfigError);
from_err!(Train, TrainError);
from_err!(Data, DataError);
from_err!(Audio, AudioError);
from_err!(Checkpoint, CheckpointError);
from_err!(Report, ReportError);
from_err!(Metrics, MetricsError);

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Train(TrainError::from(e))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn parse_configuration(s: &str) -> std::result::Result<Configuration, String> {
    Configuration::parse(s).ok_or_else(|| {
        format!("unknown configuration \"{s}\" (expected one of {})", configuration_names())
    })
}

fn configuration_names() -> String {
    Configuration::ALL.map(|c| c.name()).join(", ")
}

fn parse_ablation(s: &str) -> std::result::Result<AblationKind, String> {
    AblationKind::parse(s).ok_or_else(|| {
        format!(
            "unknown ablation \"{s}\" (expected one of {})",
            AblationKind::ALL.map(|k| k.name()).join(", ")
        )
    })
}

/// Config file plus per-key overrides, shared by the data-consuming
/// subcommands. Precedence: file, then LISER_SEED, then these flags.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Config file with `key = value` lines (# comments).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Training configuration (no-dstl, vid-dstl, sp-dstl, vid-sp-dstl,
    /// conf-vid-sp-dstl, distill-ce, two-stage-train).
    #[arg(long, value_parser = parse_configuration)]
    configuration: Option<Configuration>,
    /// Speech distillation weight.
    #[arg(long)]
    lambda_sd: Option<f64>,
    /// Video distillation weight.
    #[arg(long)]
    lambda_vd: Option<f64>,
    /// Search the lambda grid per fold instead of fixed weights.
    #[arg(long)]
    grid_search: bool,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Labeled rows per mixed batch; the rest are unlabeled.
    #[arg(long)]
    labeled_per_batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of each speaker's training utterances to keep.
    #[arg(long)]
    labeled_fraction: Option<f64>,
    #[arg(long)]
    n_folds: Option<usize>,
    /// CSV/TSV manifest of labeled utterances (id,speaker,path,label).
    #[arg(long, value_name = "FILE")]
    labeled_manifest: Option<PathBuf>,
    /// CSV/TSV manifest of unlabeled utterances (id,path).
    #[arg(long, value_name = "FILE")]
    unlabeled_manifest: Option<PathBuf>,
    /// JSON-lines teacher outputs for the unlabeled utterances.
    #[arg(long, value_name = "FILE")]
    teacher_file: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Checkpoint to start from (train) or to evaluate (eval).
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Worker-parallelism cap; recorded in run.json.
    #[arg(long)]
    threads: Option<usize>,
    /// Keep a checkpoint after every epoch, not just the selected one.
    #[arg(long)]
    save_every_epoch: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Ok(value) = std::env::var("LISER_SEED") {
            cfg.apply_env_seed(&value)?;
        }
        if let Some(v) = self.configuration {
            cfg.configuration = v;
        }
        if let Some(v) = self.lambda_sd {
            cfg.lambda_sd = v;
        }
        if let Some(v) = self.lambda_vd {
            cfg.lambda_vd = v;
        }
        if self.grid_search {
            cfg.grid_search = true;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.labeled_per_batch {
            cfg.labeled_per_batch = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.labeled_fraction {
            cfg.labeled_fraction = v;
        }
        if let Some(v) = self.n_folds {
            cfg.n_folds = v;
        }
        if let Some(v) = &self.labeled_manifest {
            cfg.labeled_manifest = Some(v.clone());
        }
        if let Some(v) = &self.unlabeled_manifest {
            cfg.unlabeled_manifest = Some(v.clone());
        }
        if let Some(v) = &self.teacher_file {
            cfg.teacher_file = Some(v.clone());
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = Some(v.clone());
        }
        if let Some(v) = &self.checkpoint {
            cfg.checkpoint = Some(v.clone());
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if self.save_every_epoch {
            cfg.save_every_epoch = true;
        }
        Ok(cfg)
    }
}

#[derive(Parser)]
#[command(
    name = "liser",
    version,
    about = "Lightweight speech emotion recognition trained with audio-visual distillation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cache log-Mel features for every manifest entry into a container file.
    Featurize(FeaturizeCmd),
    /// Train one configuration with speaker-disjoint cross-validation.
    Train(TrainCmd),
    /// Evaluate a checkpoint on a labeled manifest (report JSON on stdout).
    Eval(EvalCmd),
    /// Run a paired ablation: distill-ce, two-stage, or labeled-fraction.
    Ablate(AblateCmd),
    /// Summarize completed run directories into tables and plots.
    Report(ReportCmd),
    /// Generate a synthetic dataset with oracle teacher outputs.
    GenSynth(GenSynthCmd),
}

#[derive(Args)]
struct FeaturizeCmd {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Manifest to featurize; defaults to the labeled manifest.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Output container; defaults to OUTPUT_DIR/features.lisr.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Labeled manifest to evaluate; defaults to the labeled manifest.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct AblateCmd {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Which ablation to run.
    #[arg(long, value_parser = parse_ablation)]
    kind: AblationKind,
}

#[derive(Args)]
struct ReportCmd {
    /// Run directories (each holding a summary.json).
    #[arg(required = true, value_name = "DIR")]
    run_dirs: Vec<PathBuf>,
    /// Also write table.txt, report.json, and any SVG here.
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GenSynthCmd {
    #[arg(long, value_name = "DIR")]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    n_labeled: usize,
    #[arg(long, default_value_t = 50)]
    n_unlabeled: usize,
    /// Speech emotion classes.
    #[arg(long, default_value_t = 4)]
    k_s: usize,
    /// Video emotion classes (at most k_s).
    #[arg(long, default_value_t = 3)]
    k_v: usize,
    /// Teacher softness: 0 gives exact one-hot teachers.
    #[arg(long, default_value_t = 0.3)]
    teacher_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parse and dispatch. Returns the process exit code instead of exiting so
/// tests can call it in-process.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not errors.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Featurize(cmd) => cmd_featurize(cmd),
        Command::Train(cmd) => cmd_train(cmd),
        Command::Eval(cmd) => cmd_eval(cmd),
        Command::Ablate(cmd) => cmd_ablate(cmd),
        Command::Report(cmd) => cmd_report(cmd),
        Command::GenSynth(cmd) => cmd_gen_synth(cmd),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.into(), detail: e.to_string() }
}

#[derive(Serialize)]
struct GenSynthRecord {
    n_labeled: usize,
    n_unlabeled: usize,
    k_s: usize,
    k_v: usize,
    teacher_noise: f64,
    seed: u64,
    crate_version: &'static str,
}

fn cmd_gen_synth(cmd: GenSynthCmd) -> Result<()> {
    let data = gen_synth(cmd.n_labeled, cmd.n_unlabeled, cmd.k_s, cmd.k_v, cmd.teacher_noise, cmd.seed)?;
    let paths = write_synth(&cmd.output_dir, &data)?;
    let record = GenSynthRecord {
        n_labeled: cmd.n_labeled,
        n_unlabeled: cmd.n_unlabeled,
        k_s: cmd.k_s,
        k_v: cmd.k_v,
        teacher_noise: cmd.teacher_noise,
        seed: cmd.seed,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    let run_json = cmd.output_dir.join("run.json");
    let mut body = serde_json::to_string_pretty(&record).expect("record serializes");
    body.push('\n');
    write_atomic(&run_json, body.as_bytes()).map_err(io_err(&run_json))?;
    say!("wrote {} labeled and {} unlabeled utterances", cmd.n_labeled, cmd.n_unlabeled);
    say!("labeled manifest:   {}", paths.labeled_manifest.display());
    say!("unlabeled manifest: {}", paths.unlabeled_manifest.display());
    say!("teacher file:       {}", paths.teacher_file.display());
    Ok(())
}

fn cmd_featurize(cmd: FeaturizeCmd) -> Result<()> {
    let mut cfg = cmd.cfg.resolve()?;
    if let Some(m) = &cmd.manifest {
        cfg.labeled_manifest = Some(m.clone());
    }
    let needs: &[&str] =
        if cmd.output.is_some() { &["labeled_manifest"] } else { &["labeled_manifest", "output_dir"] };
    cfg.validate(needs)?;
    let manifest = cfg.labeled_manifest.clone().expect("validated above");
    let output = match &cmd.output {
        Some(p) => p.clone(),
        None => cfg.output_dir.clone().expect("validated above").join("features.lisr"),
    };
    let dataset = load_labeled_manifest(&manifest)?;
    let mut blocks = Vec::new();
    let mut windows = 0usize;
    for u in &dataset.utterances {
        let segments = crop_or_pad_3s(&u.audio, SegmentMode::Eval)?;
        let mut data = Vec::new();
        for s in &segments {
            data.extend_from_slice(log_mel(&s.samples)?.data());
        }
        windows += segments.len();
        blocks.push(Block {
            name: u.id.clone(),
            shape: vec![segments.len(), crate::model::INPUT_BANDS, crate::model::INPUT_FRAMES],
            data,
        });
    }
    let ck = Checkpoint {
        header: CheckpointHeader {
            k_s: dataset.k_s(),
            k_v: 0,
            class_names: dataset.class_names.clone(),
            config_digest: cfg.digest(),
        },
        blocks,
    };
    write_file(&output, &ck)?;
    if let Some(dir) = &cfg.output_dir {
        write_run_json(dir, &cfg)?;
    }
    say!(
        "cached log-Mel features for {} utterances ({} windows) at {}",
        dataset.utterances.len(),
        windows,
        output.display()
    );
    Ok(())
}

/// Load everything a training run needs and hand back the pieces shared by
/// `train` and `ablate`.
struct LoadedData {
    labeled: crate::data::LabeledDataset,
    unlabeled: Vec<crate::data::UnlabeledUtterance>,
    k_v: usize,
    init: Option<StudentParams>,
}

fn load_for_training(cfg: &RunConfig) -> Result<LoadedData> {
    let manifest = cfg.labeled_manifest.as_ref().expect("validated");
    let labeled = load_labeled_manifest(manifest)?;
    let (unlabeled, k_v) = if cfg.wants_teachers() {
        let um = cfg.unlabeled_manifest.as_ref().expect("validated");
        let tf = cfg.teacher_file.as_ref().expect("validated");
        load_unlabeled(um, tf, labeled.k_s())?
    } else {
        // The video head still needs a class count for its (unused) shape.
        (Vec::new(), 2)
    };
    let init = match &cfg.checkpoint {
        Some(path) => {
            let (params, header) = load_student(path)?;
            if header.k_s != labeled.k_s() {
                return Err(CliError::Input {
                    detail: format!(
                        "checkpoint {} was trained with {} classes but the manifest has {}",
                        path.display(),
                        header.k_s,
                        labeled.k_s()
                    ),
                });
            }
            Some(params)
        }
        None => None,
    };
    let k_v = init.as_ref().map_or(k_v, |p| p.k_v);
    Ok(LoadedData { labeled, unlabeled, k_v, init })
}

fn cmd_train(cmd: TrainCmd) -> Result<()> {
    let cfg = cmd.cfg.resolve()?;
    cfg.validate(&["labeled_manifest", "output_dir"])?;
    let out_dir = cfg.output_dir.clone().expect("validated above");
    write_run_json(&out_dir, &cfg)?;
    let loaded = load_for_training(&cfg)?;
    let train_cfg = cfg.to_train_config().expect("validated above");
    let digest = cfg.digest();
    let class_names = loaded.labeled.class_names.clone();
    let opts = CvOptions {
        n_folds: cfg.n_folds,
        labeled_fraction: cfg.labeled_fraction,
        grid: if cfg.grid_search { Some(&LAMBDA_GRID) } else { None },
        init: loaded.init.as_ref(),
    };
    let mut fold_error: Option<CliError> = None;
    let mut on_fold = |fold: &crate::train::FoldOutcome| {
        if fold_error.is_some() {
            return;
        }
        let dir = out_dir.join(format!("fold{}", fold.fold));
        let save = (|| -> Result<()> {
            save_student(&dir.join("best.lisr"), &fold.params, &class_names, &digest)?;
            write_history_jsonl(&dir.join("history.jsonl"), &fold.history)?;
            if let Some(cells) = &fold.grid {
                let mut body = serde_json::to_string_pretty(cells).expect("cells serialize");
                body.push('\n');
                let path = dir.join("grid.json");
                write_atomic(&path, body.as_bytes()).map_err(io_err(&path))?;
            }
            Ok(())
        })();
        if let Err(e) = save {
            fold_error = Some(e);
            return;
        }
        say!(
            "fold {}: UAR {:.3}  WAR {:.3}  (best epoch {}, lambda_sd {}, lambda_vd {})",
            fold.fold,
            fold.report.uar,
            fold.report.war,
            fold.best_epoch,
            fold.weights.lambda_sd,
            fold.weights.lambda_vd
        );
    };
    let mut on_epoch_store;
    let mut on_epoch: Option<&mut dyn FnMut(usize, &EpochStats, &StudentParams)> =
        if cfg.save_every_epoch {
            let out_dir = out_dir.clone();
            let class_names = class_names.clone();
            let digest = digest.clone();
            on_epoch_store = move |fold: usize, stats: &EpochStats, params: &StudentParams| {
                let path = out_dir
                    .join(format!("fold{fold}"))
                    .join(format!("stage{}-epoch{:03}.lisr", stats.stage, stats.epoch));
                if let Err(e) = save_student(&path, params, &class_names, &digest) {
                    eprintln!("warning: could not save {}: {e}", path.display());
                }
            };
            Some(&mut on_epoch_store)
        } else {
            None
        };
    let cv = run_cv(
        &train_cfg,
        &loaded.labeled,
        &loaded.unlabeled,
        loaded.k_v,
        &opts,
        CvSinks { on_fold: Some(&mut on_fold), on_epoch: on_epoch.take() },
    )?;
    if let Some(e) = fold_error {
        return Err(e);
    }
    let summary =
        RunSummary::from_cv(cfg.configuration, cfg.labeled_fraction, cfg.seed, &cv);
    let summary_path = write_summary(&out_dir, &summary)?;
    say!("mean over {} folds: UAR {:.3}  WAR {:.3}", cv.folds.len(), cv.mean_uar, cv.mean_war);
    say!("wrote {}", summary_path.display());
    Ok(())
}

fn cmd_eval(cmd: EvalCmd) -> Result<()> {
    let mut cfg = cmd.cfg.resolve()?;
    if let Some(m) = &cmd.manifest {
        cfg.labeled_manifest = Some(m.clone());
    }
    cfg.validate(&["checkpoint", "labeled_manifest"])?;
    let (params, header) = load_student(cfg.checkpoint.as_ref().expect("validated"))?;
    let dataset = load_labeled_manifest(cfg.labeled_manifest.as_ref().expect("validated"))?;
    if dataset.class_names != header.class_names {
        return Err(CliError::Input {
            detail: format!(
                "checkpoint classes [{}] do not match manifest classes [{}]",
                header.class_names.join(", "),
                dataset.class_names.join(", ")
            ),
        });
    }
    let items: Vec<(&crate::audio::Waveform, usize)> =
        dataset.utterances.iter().map(|u| (&u.audio, u.label)).collect();
    let report = evaluate(&params, &items, dataset.k_s())?;
    say!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Some(dir) = &cfg.output_dir {
        write_run_json(dir, &cfg)?;
    }
    Ok(())
}

fn slug(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn cmd_ablate(cmd: AblateCmd) -> Result<()> {
    let cfg = cmd.cfg.resolve()?;
    cfg.validate(&["labeled_manifest", "output_dir"])?;
    let out_dir = cfg.output_dir.clone().expect("validated above");
    write_run_json(&out_dir, &cfg)?;
    let loaded = load_for_training(&cfg)?;
    let train_cfg = cfg.to_train_config().expect("validated above");
    let opts = CvOptions {
        n_folds: cfg.n_folds,
        labeled_fraction: cfg.labeled_fraction,
        grid: if cfg.grid_search { Some(&LAMBDA_GRID) } else { None },
        init: loaded.init.as_ref(),
    };
    let mut arm_error: Option<CliError> = None;
    let mut index = 0usize;
    let seed = cfg.seed;
    let mut on_run = |run: &crate::train::AblationRun| {
        if arm_error.is_some() {
            return;
        }
        let dir = out_dir.join(format!("{:02}-{}", index, slug(&run.label)));
        index += 1;
        let summary =
            RunSummary::from_cv(run.configuration, run.labeled_fraction, seed, &run.cv);
        if let Err(e) = write_summary(&dir, &summary) {
            arm_error = Some(e.into());
            return;
        }
        say!(
            "{:24}  UAR {:.3}  WAR {:.3}",
            run.label, run.cv.mean_uar, run.cv.mean_war
        );
    };
    let runs = run_ablation(
        cmd.kind,
        &train_cfg,
        &loaded.labeled,
        &loaded.unlabeled,
        loaded.k_v,
        &opts,
        Some(&mut on_run),
    )?;
    if let Some(e) = arm_error {
        return Err(e);
    }
    if cmd.kind == AblationKind::LabeledFraction {
        let svg = fraction_curve_svg(&fraction_series(&runs));
        let path = out_dir.join("fraction-curve.svg");
        write_atomic(&path, svg.as_bytes()).map_err(io_err(&path))?;
        say!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_report(cmd: ReportCmd) -> Result<()> {
    let scan = scan_run_dirs(&cmd.run_dirs);
    for (dir, reason) in &scan.skipped {
        eprintln!("warning: skipping {}: {reason}", dir.display());
    }
    let report = build_report(&scan)?;
    {
        use std::io::Write;
        let _ = write!(std::io::stdout(), "{}", report.table_text);
    }
    if let Some(dir) = &cmd.output_dir {
        let table = dir.join("table.txt");
        write_atomic(&table, report.table_text.as_bytes()).map_err(io_err(&table))?;
        let json = dir.join("report.json");
        write_atomic(&json, report.table_json.as_bytes()).map_err(io_err(&json))?;
        if let Some(svg) = &report.svg {
            let path = dir.join("fraction-curve.svg");
            write_atomic(&path, svg.as_bytes()).map_err(io_err(&path))?;
        }
        say!("wrote report files to {}", dir.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_become_directory_safe_slugs() {
        assert_eq!(slug("vid-sp-dstl @ 0.25"), "vid-sp-dstl-0.25");
        assert_eq!(slug("no-dstl @ 1.00"), "no-dstl-1.00");
        assert_eq!(slug("Two Words"), "two-words");
    }

    #[test]
    fn usage_errors_and_help_use_the_right_exit_codes() {
        assert_eq!(run(["liser", "--help"]), EXIT_OK);
        assert_eq!(run(["liser", "no-such-command"]), EXIT_USAGE);
        assert_eq!(run(["liser", "train", "--no-such-flag"]), EXIT_USAGE);
        assert_eq!(run::<[&str; 1], &str>(["liser"]), EXIT_USAGE);
    }

    #[test]
    fn missing_inputs_exit_with_the_data_code() {
        // No labeled manifest configured at all.
        assert_eq!(run(["liser", "train", "--output-dir", "/tmp/liser-nowhere"]), EXIT_DATA);
    }
}
