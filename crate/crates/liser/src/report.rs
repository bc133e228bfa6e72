//! Run artifacts and reporting: per-run summaries, epoch histories as JSON
//! lines, cross-configuration comparison tables, and the labeled-fraction
//! curve as a standalone SVG.

use crate::checkpoint::write_atomic;
use crate::metrics::EvalReport;
use crate::train::{AblationRun, Configuration, CvOutcome, EpochStats};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub enum ReportError {
    Io { path: PathBuf, detail: String },
    Json { path: PathBuf, detail: String },
    /// No complete run directory was found.
    NothingToReport,
}

impl fmt::Display for ReportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportError::Io { path, detail } => write!(f, "{}: {detail}", path.display()),
            ReportError::Json { path, detail } => {
                write!(f, "{}: bad JSON: {detail}", path.display())
            }
            ReportError::NothingToReport => write!(f, "no complete run directories found"),
        }
    }
}

impl fmt::Debug for ReportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl std::error::Error for ReportError {}

type Result<T> = std::result::Result<T, ReportError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ReportError + '_ {
    move |e| ReportError::Io { path: path.into(), detail: e.to_string() }
}

/// What one fold contributed to a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub lambda_sd: f64,
    pub lambda_vd: f64,
    pub best_epoch: usize,
    pub test_speakers: Vec<String>,
    pub report: EvalReport,
}

/// The per-run record written as `summary.json`; a run directory is
/// considered complete once this file exists and parses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub configuration: String,
    pub labeled_fraction: f64,
    pub seed: u64,
    pub mean_uar: f64,
    pub mean_war: f64,
    pub folds: Vec<FoldSummary>,
}

impl RunSummary {
    pub fn from_cv(
        configuration: Configuration,
        labeled_fraction: f64,
        seed: u64,
        cv: &CvOutcome,
    ) -> RunSummary {
        RunSummary {
            configuration: configuration.name().to_string(),
            labeled_fraction,
            seed,
            mean_uar: cv.mean_uar,
            mean_war: cv.mean_war,
            folds: cv
                .folds
                .iter()
                .map(|f| FoldSummary {
                    fold: f.fold,
                    lambda_sd: f.weights.lambda_sd,
                    lambda_vd: f.weights.lambda_vd,
                    best_epoch: f.best_epoch,
                    test_speakers: f.test_speakers.clone(),
                    report: f.report.clone(),
                })
                .collect(),
        }
    }
}

/// Write one JSON object per epoch (stage, epoch, train_loss, val_uar,
/// val_war) to `path`, atomically.
pub fn write_history_jsonl(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut body = String::new();
    for e in history {
        body.push_str(&serde_json::to_string(e).expect("epoch stats serialize"));
        body.push('\n');
    }
    write_atomic(path, body.as_bytes()).map_err(io_err(path))
}

pub fn read_history_jsonl(path: &Path) -> Result<Vec<EpochStats>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| ReportError::Json { path: path.into(), detail: e.to_string() })?,
        );
    }
    Ok(out)
}

pub fn write_summary(dir: &Path, summary: &RunSummary) -> Result<PathBuf> {
    let path = dir.join("summary.json");
    let mut body = serde_json::to_string_pretty(summary).expect("summary serializes");
    body.push('\n');
    write_atomic(&path, body.as_bytes()).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text)
        .map_err(|e| ReportError::Json { path: path.clone(), detail: e.to_string() })
}

/// Results of walking candidate run directories: parsed summaries plus the
/// directories that were skipped and why.
pub struct ScanOutcome {
    pub runs: Vec<(PathBuf, RunSummary)>,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Read `summary.json` from each directory; incomplete or unreadable runs
/// are collected in `skipped` rather than failing the whole report.
pub fn scan_run_dirs(dirs: &[PathBuf]) -> ScanOutcome {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for dir in dirs {
        match read_summary(dir) {
            Ok(s) => runs.push((dir.clone(), s)),
            Err(e) => skipped.push((dir.clone(), e.to_string())),
        }
    }
    ScanOutcome { runs, skipped }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub configuration: String,
    pub labeled_fraction: f64,
    pub uar: f64,
    pub war: f64,
}

fn configuration_rank(name: &str) -> usize {
    Configuration::ALL
        .iter()
        .position(|c| c.name() == name)
        .unwrap_or(Configuration::ALL.len())
}

/// Build comparison rows ordered by the canonical configuration order
/// (supervised baseline first, then the distillation variants), with the
/// labeled fraction as a tie-breaker.
pub fn comparison_rows(summaries: &[RunSummary]) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = summaries
        .iter()
        .map(|s| TableRow {
            configuration: s.configuration.clone(),
            labeled_fraction: s.labeled_fraction,
            uar: s.mean_uar,
            war: s.mean_war,
        })
        .collect();
    rows.sort_by(|a, b| {
        configuration_rank(&a.configuration)
            .cmp(&configuration_rank(&b.configuration))
            .then(a.configuration.cmp(&b.configuration))
            .then(a.labeled_fraction.partial_cmp(&b.labeled_fraction).unwrap())
    });
    rows
}

/// Render rows as an aligned plain-text table.
pub fn render_table_text(rows: &[TableRow]) -> String {
    let mut out = String::new();
    let any_fraction = rows.iter().any(|r| r.labeled_fraction != 1.0);
    let width = rows
        .iter()
        .map(|r| r.configuration.len())
        .chain(["configuration".len()])
        .max()
        .unwrap_or(13);
    if any_fraction {
        let _ = writeln!(out, "{:width$}  {:>8}  {:>6}  {:>6}", "configuration", "labeled", "UAR", "WAR");
    } else {
        let _ = writeln!(out, "{:width$}  {:>6}  {:>6}", "configuration", "UAR", "WAR");
    }
    for r in rows {
        if any_fraction {
            let _ = writeln!(
                out,
                "{:width$}  {:>8.2}  {:>6.3}  {:>6.3}",
                r.configuration, r.labeled_fraction, r.uar, r.war
            );
        } else {
            let _ = writeln!(out, "{:width$}  {:>6.3}  {:>6.3}", r.configuration, r.uar, r.war);
        }
    }
    out
}

/// Points for one curve in the labeled-fraction plot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionSeries {
    pub label: String,
    /// (labeled fraction, mean test UAR), sorted by fraction ascending.
    pub points: Vec<(f64, f64)>,
}

/// Group ablation runs into per-configuration curves over the labeled
/// fraction, each sorted by fraction.
pub fn fraction_series(runs: &[AblationRun]) -> Vec<FractionSeries> {
    let mut series: Vec<FractionSeries> = Vec::new();
    for run in runs {
        let name = run.configuration.name().to_string();
        let entry = match series.iter_mut().find(|s| s.label == name) {
            Some(s) => s,
            None => {
                series.push(FractionSeries { label: name, points: Vec::new() });
                series.last_mut().unwrap()
            }
        };
        entry.points.push((run.labeled_fraction, run.cv.mean_uar));
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }
    series
}

const SVG_PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Render UAR-vs-labeled-fraction curves as a standalone SVG.
pub fn fraction_curve_svg(series: &[FractionSeries]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (64.0, 24.0, 28.0, 56.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let x_of = |fraction: f64| left + fraction * plot_w;
    let y_of = |uar: f64| top + (1.0 - uar) * plot_h;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "  <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    // Axes with ticks every 0.25 on both scales.
    let _ = writeln!(
        svg,
        "  <line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    let _ = writeln!(svg, "  <line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>", top + plot_h);
    for i in 0..=4 {
        let v = i as f64 * 0.25;
        let x = x_of(v);
        let y = y_of(v);
        let _ = writeln!(
            svg,
            "  <line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>",
            top + plot_h,
            top + plot_h + 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{v:.2}</text>",
            top + plot_h + 20.0
        );
        let _ = writeln!(
            svg,
            "  <line x1=\"{}\" y1=\"{y}\" x2=\"{left}\" y2=\"{y}\" stroke=\"black\"/>",
            left - 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"12\">{v:.2}</text>",
            left - 9.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">labeled fraction</text>",
        left + plot_w / 2.0,
        h - 14.0
    );
    let _ = writeln!(
        svg,
        "  <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 {})\">test UAR</text>",
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        let path: Vec<String> =
            s.points.iter().map(|(f, u)| format!("{:.1},{:.1}", x_of(*f), y_of(*u))).collect();
        let _ = writeln!(
            svg,
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            path.join(" ")
        );
        for (f, u) in &s.points {
            let _ = writeln!(
                svg,
                "  <circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>",
                x_of(*f),
                y_of(*u)
            );
        }
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            left + plot_w - 150.0,
            top + 16.0 + 16.0 * i as f64,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Assemble the report for a set of scanned runs: a text table plus a JSON
/// document, and a labeled-fraction SVG when fraction-ablation runs exist.
pub struct Report {
    pub table_text: String,
    pub table_json: String,
    pub svg: Option<String>,
}

pub fn build_report(scan: &ScanOutcome) -> Result<Report> {
    if scan.runs.is_empty() {
        return Err(ReportError::NothingToReport);
    }
    let summaries: Vec<RunSummary> = scan.runs.iter().map(|(_, s)| s.clone()).collect();
    let rows = comparison_rows(&summaries);
    let table_text = render_table_text(&rows);
    let mut table_json = serde_json::to_string_pretty(&rows).expect("rows serialize");
    table_json.push('\n');
    let fractions: Vec<&RunSummary> =
        summaries.iter().filter(|s| s.labeled_fraction != 1.0).collect();
    let svg = if fractions.is_empty() {
        None
    } else {
        let mut series: Vec<FractionSeries> = Vec::new();
        for s in &summaries {
            let entry = match series.iter_mut().find(|e| e.label == s.configuration) {
                Some(e) => e,
                None => {
                    series.push(FractionSeries { label: s.configuration.clone(), points: Vec::new() });
                    series.last_mut().unwrap()
                }
            };
            entry.points.push((s.labeled_fraction, s.mean_uar));
        }
        for e in &mut series {
            e.points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        }
        Some(fraction_curve_svg(&series))
    };
    Ok(Report { table_text, table_json, svg })
}
