//! Inference latency and training time.
//!
//! Latency runs on synthetic uniform batches so that disk and decoding stay
//! out of the measurement. Every report carries batch size, thread count and
//! a hardware descriptor, and keeps its raw samples.

use std::fmt::Write as _;
use std::time::Instant;

use leancnn_core::{Model, ModelSpec, Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::report::{pct, thousands};
use crate::train::{TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch: usize,
    pub warmup: usize,
    pub measured: usize,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub input_size: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch: 128,
            warmup: 2,
            measured: 10,
            threads: 0,
            input_size: 224,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.measured < 5 {
            return Err(Error::Config(format!(
                "need at least 5 measured iterations, got {}",
                self.measured
            )));
        }
        if self.warmup < 1 {
            return Err(Error::Config("need at least 1 warmup iteration".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_threads(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub samples_ms: Vec<f64>,
}

impl LatencyStats {
    /// Nearest-rank p95; median averages the middle pair for even counts.
    pub fn from_samples(samples_ms: Vec<f64>) -> Result<Self> {
        if samples_ms.is_empty() || samples_ms.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data(
                "latency samples must be finite and non-empty".into(),
            ));
        }
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(Self {
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms,
            p95_ms: sorted[rank - 1],
            samples_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub model: String,
    pub spec: ModelSpec,
    pub batch: usize,
    pub threads: usize,
    pub param_count: usize,
    pub stats: LatencyStats,
    pub ms_per_image: f64,
}

/// Published inference times (ms per batch of 128), shown beside our own
/// numbers and labeled as such.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteratureRow {
    pub dataset: String,
    pub model: String,
    pub ms_per_batch: f64,
}

pub fn literature_rows() -> Vec<LiteratureRow> {
    let rows = [
        ("Br35H", "BTBCNN", 0.9),
        ("Br35H", "BTMCNN", 1.2),
        ("Br35H", "ResNet18", 3.8),
        ("Br35H", "VGG16", 2.8),
        ("Brain Tumor MRI", "BTBCNN", 0.9),
        ("Brain Tumor MRI", "BTMCNN", 1.4),
        ("Brain Tumor MRI", "ResNet18", 4.0),
        ("Brain Tumor MRI", "VGG16", 2.8),
    ];
    rows.iter()
        .map(|&(d, m, ms)| LiteratureRow {
            dataset: d.into(),
            model: m.into(),
            ms_per_batch: ms,
        })
        .collect()
}

/// Published 50-epoch training times on the MRI dataset, in seconds.
pub const LITERATURE_TRAINING_SECONDS: [(&str, f64); 3] =
    [("BTMCNN", 550.37), ("ResNet18", 569.48), ("VGG16", 2474.92)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub hardware: String,
    pub config: BenchConfig,
    pub threads: usize,
    pub entries: Vec<BenchEntry>,
    pub literature: Vec<LiteratureRow>,
}

/// CPU model, logical core count, OS and architecture.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{cpu}; {cores} logical cores; {}-{}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// Eval-mode forward passes on one synthetic batch. Warmup passes are
/// discarded. Call inside [`with_threads`] to pin the thread count.
pub fn time_inference(model: &Model<f32>, cfg: &BenchConfig) -> Result<BenchEntry> {
    cfg.validate()?;
    let mut dims = vec![cfg.batch];
    dims.extend_from_slice(model.input_dims());
    let x = Tensor::<f32>::uniform(&dims, &mut Rng::new(cfg.seed), 0.0, 1.0)?;
    for _ in 0..cfg.warmup {
        std::hint::black_box(model.infer(x.clone())?);
    }
    let mut samples = Vec::with_capacity(cfg.measured);
    for _ in 0..cfg.measured {
        let input = x.clone();
        let start = Instant::now();
        std::hint::black_box(model.infer(input)?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let stats = LatencyStats::from_samples(samples)?;
    let spec = model
        .spec()
        .copied()
        .ok_or_else(|| Error::Config("benchmarks need a model built from a spec".into()))?;
    Ok(BenchEntry {
        model: spec.kind.name().into(),
        spec,
        batch: cfg.batch,
        threads: rayon::current_num_threads(),
        param_count: model.param_count(),
        ms_per_image: stats.median_ms / cfg.batch as f64,
        stats,
    })
}

/// Builds each spec in turn (one model in memory at a time) and times it on
/// the same pool.
pub fn bench_models(specs: &[ModelSpec], cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let threads = cfg.resolved_threads();
    let entries = with_threads(threads, || {
        specs
            .iter()
            .map(|spec| {
                let spec = spec.with_input_size(cfg.input_size);
                let model = Model::<f32>::build(spec, cfg.seed)?;
                log::info!("timing {} at batch {}", spec.kind.name(), cfg.batch);
                time_inference(&model, cfg)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(BenchReport {
        hardware: hardware_descriptor(),
        config: cfg.clone(),
        threads,
        entries,
        literature: literature_rows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTime {
    pub model: String,
    pub epochs: usize,
    pub dataset_size: usize,
    pub batch: usize,
    pub threads: usize,
    pub seconds: f64,
    pub epoch_seconds: Vec<f64>,
    pub hardware: String,
}

/// Wall-clock of the full training loop for `config.epochs` epochs.
pub fn time_training(
    spec: ModelSpec,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainingTime> {
    let mut trainer = Trainer::new(spec, config.clone())?;
    let mut epoch_seconds = Vec::with_capacity(config.epochs);
    let start = Instant::now();
    for _ in 0..config.epochs {
        let t = Instant::now();
        trainer.run_epoch(data, None)?;
        epoch_seconds.push(t.elapsed().as_secs_f64());
    }
    Ok(TrainingTime {
        model: spec.kind.name().into(),
        epochs: config.epochs,
        dataset_size: data.len(),
        batch: config.batch,
        threads: if config.deterministic {
            1
        } else {
            rayon::current_num_threads()
        },
        seconds: start.elapsed().as_secs_f64(),
        epoch_seconds,
        hardware: hardware_descriptor(),
    })
}

pub fn bench_markdown(report: &BenchReport) -> String {
    let mut out = String::from("# Inference latency\n\n");
    let _ = writeln!(
        out,
        "hardware: {}\nthreads: {}, batch: {}, input: {}x{}, warmup: {}, measured: {}\n",
        report.hardware,
        report.threads,
        report.config.batch,
        report.config.input_size,
        report.config.input_size,
        report.config.warmup,
        report.config.measured
    );
    out.push_str("| model | parameters | median ms/batch | mean ms/batch | p95 ms/batch | ms/image |\n|---|---:|---:|---:|---:|---:|\n");
    for e in &report.entries {
        let _ = writeln!(
            out,
            "| {} | {} | {:.2} | {:.2} | {:.2} | {:.3} |",
            e.model,
            thousands(e.param_count),
            e.stats.median_ms,
            e.stats.mean_ms,
            e.stats.p95_ms,
            e.ms_per_image
        );
    }
    if let [a, b, ..] = report.entries.as_slice() {
        let _ = writeln!(
            out,
            "\n{} / {} median ratio: {}%",
            a.model,
            b.model,
            pct(a.stats.median_ms / b.stats.median_ms)
        );
    }
    out.push_str("\n## Literature values (not measured here; hardware unknown)\n\n| dataset | model | ms/batch of 128 |\n|---|---|---:|\n");
    for r in &report.literature {
        let _ = writeln!(out, "| {} | {} | {} |", r.dataset, r.model, r.ms_per_batch);
    }
    out
}

pub fn training_markdown(t: &TrainingTime) -> String {
    let mut out = format!(
        "# Training time\n\nhardware: {}\nmodel {}, {} epochs, {} samples, batch {}, threads {}: {:.2} s\n",
        t.hardware, t.model, t.epochs, t.dataset_size, t.batch, t.threads, t.seconds
    );
    out.push_str("\n## Literature values, 50 epochs on the MRI dataset (not measured here)\n\n| model | seconds |\n|---|---:|\n");
    for (m, s) in LITERATURE_TRAINING_SECONDS {
        let _ = writeln!(out, "| {m} | {s} |");
    }
    out
}
