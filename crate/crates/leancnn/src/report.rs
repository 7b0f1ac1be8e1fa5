//! Report rendering and run-directory artifacts.
//!
//! Percentages print with two decimals. Every file a run writes except
//! `manifest.json` is a pure function of the run's numbers, so a repeated run
//! reproduces them byte for byte. The JSON schema of `report.json` is
//! documented in `docs/report-schema.md`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use leancnn_core::{
    Averaging, ConfusionMatrix, LayerPlan, MetricsReport, Model, ModelKind, ModelSpec,
};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointMeta};
use crate::error::{Error, Result};
use crate::train::{EpochRecord, FewShotRow, RunResult, SweepResult};

pub const REPORT_SCHEMA: u32 = 1;

/// Parameter count printed for BTMCNN in the literature.
pub const PUBLISHED_BTMCNN_PARAMS: usize = 51_476_484;
pub const VGG16_PARAMS: usize = 138_357_544;

pub const CONFIG_FILE: &str = "config.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CHECKPOINT_FILE: &str = "model.lcnn";
pub const SUMMARY_FILE: &str = "summary.md";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Markdown,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Usage(format!("unknown report format {other:?}"))),
        }
    }
}

/// `0.98671` → `"98.67"`.
pub fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// `51475908` → `"51,475,908"`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn averaging_label(a: &Averaging) -> String {
    match a {
        Averaging::Binary { positive } => format!("binary (positive class index {positive})"),
        Averaging::Macro => "macro (unweighted mean over classes)".into(),
    }
}

/// Note comparing a computed count with the published BTMCNN figure. Only
/// the published configuration (1 channel, 4 classes, 224 px) has one.
pub fn param_note(spec: &ModelSpec) -> Option<String> {
    if spec.kind != ModelKind::Btmcnn || *spec != ModelSpec::btmcnn(4) {
        return None;
    }
    let ours = spec.param_count();
    let gap = PUBLISHED_BTMCNN_PARAMS.abs_diff(ours);
    Some(format!(
        "computed parameter count {} differs from the published {} by {}; layer-by-layer sums are in the summary",
        thousands(ours),
        thousands(PUBLISHED_BTMCNN_PARAMS),
        thousands(gap)
    ))
}

fn describe(plan: &LayerPlan) -> String {
    match *plan {
        LayerPlan::Conv {
            in_channels,
            out_channels,
            kernel,
            ..
        } => format!("conv {kernel}x{kernel} {in_channels}->{out_channels}"),
        LayerPlan::BatchNorm { channels } => format!("batchnorm {channels}"),
        LayerPlan::Dense {
            in_features,
            out_features,
        } => format!("dense {in_features}->{out_features}"),
        other => format!("{other:?}").to_lowercase(),
    }
}

/// Per-layer parameter table, markdown.
pub fn param_table(spec: &ModelSpec) -> String {
    let mut out = String::from("| layer | parameters |\n|---|---:|\n");
    for (i, plan) in spec.plan().iter().enumerate() {
        let n = plan.param_count();
        if n > 0 {
            let _ = writeln!(out, "| {i}: {} | {} |", describe(plan), thousands(n));
        }
    }
    let _ = writeln!(out, "| total | {} |", thousands(spec.param_count()));
    out
}

pub fn render_report(report: &MetricsReport, format: Format) -> Result<String> {
    let rows = [
        ("accuracy", report.accuracy),
        ("precision", report.precision),
        ("recall", report.recall),
        ("f1", report.f1),
    ];
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(report)? + "\n",
        Format::Markdown => {
            let mut out = format!(
                "averaging: {}\n\n| metric | % |\n|---|---:|\n",
                averaging_label(&report.averaging)
            );
            for (name, v) in rows {
                let _ = writeln!(out, "| {name} | {} |", pct(v));
            }
            if report.per_class.len() > 2 || matches!(report.averaging, Averaging::Macro) {
                out.push_str(
                    "\n| class | precision | recall | f1 | support |\n|---|---:|---:|---:|---:|\n",
                );
                for c in &report.per_class {
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} | {} | {} |",
                        c.class,
                        pct(c.precision),
                        pct(c.recall),
                        pct(c.f1),
                        c.support
                    );
                }
            }
            if report.is_undefined() {
                let _ = writeln!(
                    out,
                    "\nundefined (zero denominator, reported as 0): {}",
                    report.undefined.join(", ")
                );
            }
            out
        }
        Format::Csv => {
            let mut out = String::from("metric,percent\n");
            for (name, v) in rows {
                let _ = writeln!(out, "{name},{}", pct(v));
            }
            out
        }
    })
}

/// Header row and column carry the class names; rows are true classes.
pub fn confusion_csv(cm: &ConfusionMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let names = cm.class_names();
    let mut header = vec!["true\\pred".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend((0..names.len()).map(|j| cm.get(i, j).to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn trace_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "train_accuracy", "eval_accuracy"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.train_loss.to_string(),
            h.train_accuracy.to_string(),
            h.eval_accuracy.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_trace(text: &str) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Format(format!("bad trace value {:?}", field(i))))
        };
        out.push(EpochRecord {
            epoch: num(0)? as usize,
            train_loss: num(1)?,
            train_accuracy: num(2)?,
            eval_accuracy: if field(3).is_empty() {
                None
            } else {
                Some(num(3)?)
            },
        });
    }
    Ok(out)
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub model: ModelSpec,
    pub param_count: usize,
    pub param_note: Option<String>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    /// FNV-1a over all persisted tensors, hex.
    pub initial_fingerprint: String,
    pub final_fingerprint: String,
}

impl RunReport {
    pub fn from_run(run: &RunResult) -> Self {
        Self {
            schema: REPORT_SCHEMA,
            model: run.spec,
            param_count: run.param_count,
            param_note: param_note(&run.spec),
            epochs: run.config.epochs,
            lr: run.config.lr,
            seed: run.config.seed,
            train_size: run.train_size,
            test_size: run.test_size,
            metrics: run.evaluation.report.clone(),
            confusion: run.evaluation.confusion.clone(),
            initial_fingerprint: format!("{:016x}", run.initial_fingerprint),
            final_fingerprint: format!("{:016x}", run.final_fingerprint),
        }
    }
}

/// Creates `<out>/<name>`, or `<name>-1`, `<name>-2`, ... if taken. Existing
/// directories are never reused.
pub fn create_run_dir(out: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for n in 0.. {
        let candidate = if n == 0 {
            out.join(name)
        } else {
            out.join(format!("{name}-{n}"))
        };
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&candidate, e)),
        }
    }
    unreachable!()
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes config, trace, report, confusion matrix, checkpoint and summary
/// into `dir`. `config` is the resolved configuration echo.
pub fn write_run(
    dir: &Path,
    run: &RunResult,
    model: &Model<f32>,
    config: &serde_json::Value,
) -> Result<()> {
    write_file(
        &dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(config)? + "\n",
    )?;
    write_file(&dir.join(TRACE_FILE), trace_csv(&run.history)?)?;
    write_file(
        &dir.join(REPORT_FILE),
        serde_json::to_string_pretty(&RunReport::from_run(run))? + "\n",
    )?;
    write_file(
        &dir.join(CONFUSION_FILE),
        confusion_csv(&run.evaluation.confusion)?,
    )?;
    let meta = CheckpointMeta {
        epochs: run.config.epochs as u32,
        lr: run.config.lr,
    };
    checkpoint::save(model, meta, dir.join(CHECKPOINT_FILE))?;
    write_file(&dir.join(SUMMARY_FILE), run_summary(dir)?)
}

/// Human summary rebuilt from the files of a run directory. Depends only on
/// `report.json` and `trace.csv`, so re-running it reproduces `summary.md`.
pub fn run_summary(dir: &Path) -> Result<String> {
    let report: RunReport = serde_json::from_str(&read_file(&dir.join(REPORT_FILE))?)
        .map_err(|e| Error::Format(format!("{}: {e}", dir.join(REPORT_FILE).display())))?;
    let trace = read_trace(&read_file(&dir.join(TRACE_FILE))?)?;
    let spec = report.model;
    let mut out = String::new();
    let _ = writeln!(out, "# Run summary: {}\n", spec.kind.name());
    let _ = writeln!(
        out,
        "- input: {}x{}x{}\n- classes: {}\n- parameters: {}",
        spec.in_channels,
        spec.input_size,
        spec.input_size,
        report.confusion.class_names().join(", "),
        thousands(report.param_count)
    );
    if let Some(note) = &report.param_note {
        let _ = writeln!(out, "- note: {note}");
    }
    let _ = writeln!(
        out,
        "- lr {}, epochs {}, seed {}\n- train samples {}, test samples {}\n",
        report.lr, report.epochs, report.seed, report.train_size, report.test_size
    );
    out.push_str("## Test metrics\n\n");
    out.push_str(&render_report(&report.metrics, Format::Markdown)?);
    out.push_str("\n## Confusion matrix (rows true, columns predicted)\n\n");
    let names = report.confusion.class_names();
    let _ = writeln!(out, "| | {} |", names.join(" | "));
    let _ = writeln!(out, "|---|{}", "---:|".repeat(names.len()));
    for (i, name) in names.iter().enumerate() {
        let cells: Vec<String> = (0..names.len())
            .map(|j| report.confusion.get(i, j).to_string())
            .collect();
        let _ = writeln!(out, "| {name} | {} |", cells.join(" | "));
    }
    if let Some(last) = trace.last() {
        let _ = writeln!(
            out,
            "\n## Training\n\n{} epochs, final train loss {:.6}, train accuracy {}%",
            trace.len(),
            last.train_loss,
            pct(last.train_accuracy)
        );
    } else {
        out.push_str("\n## Training\n\nnone in this run\n");
    }
    if report.param_note.is_some() {
        out.push_str("\n## Parameters by layer\n\n");
        out.push_str(&param_table(&spec));
    }
    Ok(out)
}

pub fn sweep_markdown(spec: &ModelSpec, sweep: &SweepResult) -> String {
    let mut out = format!("# Learning-rate sweep: {}\n\n", spec.kind.name());
    out.push_str("| lr | accuracy | precision | recall | f1 | tp | tn | fp | fn |\n|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for e in &sweep.entries {
        match &e.result {
            Some(r) => {
                let m = &r.evaluation.report;
                let counts = if r.evaluation.confusion.num_classes() == 2 {
                    let c = r.evaluation.confusion.one_vs_rest(1);
                    [c.tp, c.tn, c.fp, c.fn_].map(|v| v.to_string())
                } else {
                    ["-".to_string(), "-".into(), "-".into(), "-".into()]
                };
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    e.lr,
                    pct(m.accuracy),
                    pct(m.precision),
                    pct(m.recall),
                    pct(m.f1),
                    counts.join(" | ")
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "| {} | failed: {} |||||||| ",
                    e.lr,
                    e.error.as_deref().unwrap_or("unknown")
                );
            }
        }
    }
    match (sweep.best_lr, sweep.best_accuracy) {
        (Some(lr), Some(acc)) => {
            let _ = writeln!(
                out,
                "\nbest lr: {lr} (accuracy {}%; ties go to the lower rate)",
                pct(acc)
            );
        }
        _ => out.push_str("\nbest lr: none (every run failed)\n"),
    }
    out
}

pub fn few_shot_markdown(spec: &ModelSpec, rows: &[FewShotRow]) -> String {
    let mut out = format!("# Few-shot results: {}\n\n", spec.kind.name());
    out.push_str(
        "| shots per class | training images | images seen | accuracy |\n|---:|---:|---:|---:|\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.k,
            r.subset_size,
            r.samples_seen,
            pct(r.accuracy)
        );
    }
    out
}
