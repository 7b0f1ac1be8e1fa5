//! Command-line front end. `main.rs` only forwards to [`main_with`].

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use leancnn_core::preprocess::PreprocessConfig;
use leancnn_core::{ModelKind, ModelSpec};
use serde_json::json;

use crate::bench::{self, BenchConfig};
use crate::checkpoint;
use crate::config::{unix_now, Layers, RunManifest, LAYOUT_VERSION};
use crate::dataset::{Dataset, DatasetManifest, SplitMode};
use crate::error::{Error, Result};
use crate::report::{self, Format, RunReport, MANIFEST_FILE};
use crate::train::{self, Evaluation, RunResult, TrainConfig, DEFAULT_LRS, DEFAULT_SHOTS};

#[derive(Debug, Parser)]
#[command(
    name = "leancnn",
    version,
    about = "Train, evaluate and benchmark the BTBCNN and BTMCNN classifiers"
)]
pub struct Cli {
    /// Output directory for run artifacts [default: runs]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print machine-readable JSON instead of the human summary
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single-threaded kernels
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Flat key = value config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index an image folder tree and print class and split counts
    Scan(ScanArgs),
    /// Train one model and evaluate it on the test split
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split
    Eval(EvalArgs),
    /// One training run per learning rate
    Sweep(SweepArgs),
    /// Train on k images per class for several k
    Fewshot(FewShotArgs),
    /// Inference latency on synthetic batches, optionally training time
    Bench(BenchArgs),
    /// Rebuild the summary of an existing run directory
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    pub root: PathBuf,
    /// Write the manifest cache (JSON) here
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct SplitArgs {
    /// Use the dataset's Training/Testing folders
    #[arg(long)]
    pub split_folders: bool,
    /// Seeded random split with this train fraction
    #[arg(long)]
    pub split_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset root folder or manifest JSON
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Square input side in pixels [default: 224]
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Comma-separated classes mapped to the positive label (BTBCNN)
    #[arg(long)]
    pub positive: Option<String>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Seed of the ratio split [default: 42]
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// btbcnn or btmcnn
    #[arg(long)]
    pub model: Option<String>,
    /// [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initialization and shuffling seed [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test accuracy every N epochs (0 = only at the end)
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// [default: 0.0005]
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by train
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// [default: 32]
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Comma-separated learning rates [default: 0.001,0.0005,0.0001,0.00005]
    #[arg(long)]
    pub lrs: Option<String>,
}

#[derive(Debug, Args)]
pub struct FewShotArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// [default: 0.0005]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated shots per class [default: 0,5,10,15,20,40,80]
    #[arg(long)]
    pub shots: Option<String>,
    /// Seed for drawing the subsets [default: 7]
    #[arg(long)]
    pub sampler_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated models [default: btbcnn,btmcnn]
    #[arg(long)]
    pub models: Option<String>,
    /// [default: 128]
    #[arg(long)]
    pub batch: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub warmup: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    pub measured: Option<usize>,
    /// [default: 224]
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Also time this many training epochs on --data
    #[arg(long)]
    pub train_epochs: Option<usize>,
    /// Dataset for the training-time measurement
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub run_dir: PathBuf,
    /// md, json or csv (metrics only for json and csv)
    #[arg(long)]
    pub format: Option<String>,
    /// Compare with the stored summary and fail if it differs
    #[arg(long)]
    pub check: bool,
}

/// Flag values keyed like the config file.
struct Flags(BTreeMap<String, String>);

impl Flags {
    fn set<T: ToString>(&mut self, key: &str, v: Option<T>) {
        if let Some(v) = v {
            self.0.insert(key.into(), v.to_string());
        }
    }

    fn on(&mut self, key: &str, v: bool) {
        if v {
            self.0.insert(key.into(), "true".into());
        }
    }

    fn data(&mut self, d: &DataArgs) {
        self.set("data", d.data.as_ref().map(|p| p.display().to_string()));
        self.set("input_size", d.input_size);
        self.set("positive", d.positive.clone());
        if d.split.split_folders {
            self.0.insert("split".into(), "folders".into());
        }
        if let Some(r) = d.split.split_ratio {
            self.0.insert("split".into(), "ratio".into());
            self.0.insert("split_ratio".into(), r.to_string());
        }
        self.set("split_seed", d.split_seed);
    }

    fn fit(&mut self, f: &FitArgs) {
        self.set("model", f.model.clone());
        self.set("epochs", f.epochs);
        self.set("batch", f.batch);
        self.set("seed", f.seed);
        self.set("eval_every", f.eval_every);
    }
}

fn collect_flags(cli: &Cli) -> BTreeMap<String, String> {
    let mut f = Flags(BTreeMap::new());
    f.set("out", cli.out.as_ref().map(|p| p.display().to_string()));
    f.on("json", cli.json);
    f.set("threads", cli.threads);
    f.on("deterministic", cli.deterministic);
    match &cli.command {
        Command::Scan(a) => f.set(
            "manifest",
            a.manifest.as_ref().map(|p| p.display().to_string()),
        ),
        Command::Train(a) => {
            f.data(&a.data);
            f.fit(&a.fit);
            f.set("lr", a.lr);
        }
        Command::Eval(a) => {
            f.data(&a.data);
            f.set(
                "checkpoint",
                a.checkpoint.as_ref().map(|p| p.display().to_string()),
            );
            f.set("batch", a.batch);
        }
        Command::Sweep(a) => {
            f.data(&a.data);
            f.fit(&a.fit);
            f.set("lrs", a.lrs.clone());
        }
        Command::Fewshot(a) => {
            f.data(&a.data);
            f.fit(&a.fit);
            f.set("lr", a.lr);
            f.set("shots", a.shots.clone());
            f.set("sampler_seed", a.sampler_seed);
        }
        Command::Bench(a) => {
            f.set("models", a.models.clone());
            f.set("batch", a.batch);
            f.set("warmup", a.warmup);
            f.set("measured", a.measured);
            f.set("input_size", a.input_size);
            f.set("train_epochs", a.train_epochs);
            f.set("data", a.data.as_ref().map(|p| p.display().to_string()));
        }
        Command::Report(a) => f.set("format", a.format.clone()),
    }
    f.0
}

/// Per-invocation state shared by the subcommands.
struct Ctx {
    layers: Layers,
    command: Vec<String>,
    started: f64,
    json: bool,
    deterministic: bool,
    threads: usize,
}

impl Ctx {
    fn out_dir(&self) -> Result<PathBuf> {
        self.layers
            .get("out", PathBuf::from("runs").display().to_string())
            .map(PathBuf::from)
    }

    fn model_kind(&self) -> Result<ModelKind> {
        let name: String = self
            .layers
            .opt("model")?
            .ok_or_else(|| Error::Usage("missing --model (btbcnn or btmcnn)".into()))?;
        ModelKind::parse(&name).ok_or_else(|| {
            Error::Usage(format!("unknown model {name:?}; expected btbcnn or btmcnn"))
        })
    }

    fn train_config(&self, lr_default: f64) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            lr: self.layers.get("lr", lr_default)?,
            epochs: self.layers.get("epochs", d.epochs)?,
            batch: self.layers.get("batch", d.batch)?,
            seed: self.layers.get("seed", d.seed)?,
            sampler_seed: self.layers.get("sampler_seed", d.sampler_seed)?,
            loss: None,
            eval_every: self.layers.get("eval_every", d.eval_every)?,
            deterministic: self.deterministic,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn write_manifest(&self, dir: &Path, artifacts: Vec<PathBuf>) -> Result<()> {
        let finished = unix_now();
        let m = RunManifest {
            layout_version: LAYOUT_VERSION,
            engine_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            config_file: self.layers.file_path.clone(),
            resolved: self.layers.resolved(),
            started_unix: self.started,
            finished_unix: finished,
            wall_seconds: finished - self.started,
            artifacts,
            hardware: bench::hardware_descriptor(),
        };
        report::write_file(
            &dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&m)? + "\n",
        )
    }

    fn emit(&self, human: &str, machine: &serde_json::Value) -> Result<()> {
        let text = if self.json {
            serde_json::to_string_pretty(machine)? + "\n"
        } else {
            human.to_string()
        };
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes())
            .map_err(|e| Error::io("stdout", e))
    }
}

/// Datasets for one command after class mapping and splitting.
struct Loaded {
    spec: ModelSpec,
    train: Dataset,
    test: Dataset,
    /// Deterministic description echoed into `config.json`.
    echo: serde_json::Value,
}

fn open_manifest(path: &Path) -> Result<DatasetManifest> {
    if path.is_file() {
        DatasetManifest::load(path)
    } else {
        DatasetManifest::scan(path)
    }
}

fn load_data(ctx: &Ctx, kind: ModelKind, need_train: bool) -> Result<Loaded> {
    let l = &ctx.layers;
    let data: PathBuf = l
        .opt::<String>("data")?
        .map(PathBuf::from)
        .ok_or_else(|| Error::Usage("missing --data".into()))?;
    let mut manifest = open_manifest(&data)?;
    let positive: Option<Vec<String>> = l.list("positive")?;
    match kind {
        ModelKind::Btbcnn => {
            let pos = positive.unwrap_or_else(|| manifest.default_positive_classes());
            if pos.is_empty() || pos.len() == manifest.num_classes() {
                return Err(Error::Config(format!(
                    "cannot tell positive from negative among classes {:?}; pass --positive",
                    manifest.class_names
                )));
            }
            manifest = manifest.binarize(&pos)?;
        }
        ModelKind::Btmcnn if positive.is_some() => {
            return Err(Error::Usage("--positive applies to btbcnn only".into()));
        }
        ModelKind::Btmcnn => {}
    }
    let size: usize = l.get("input_size", leancnn_core::model::DEFAULT_INPUT_SIZE)?;
    let ratio: f64 = l.get("split_ratio", 0.8)?;
    let seed: u64 = l.get("split_seed", 42)?;
    let split_name: String = l.get("split", "auto".to_string())?;
    let mode = match split_name.as_str() {
        "auto" => SplitMode::Auto { ratio, seed },
        "folders" => SplitMode::Folders,
        "ratio" => SplitMode::Ratio { ratio, seed },
        other => {
            return Err(Error::Config(format!(
                "unknown split mode {other:?}; expected auto, folders or ratio"
            )))
        }
    };
    let (train_idx, test_idx) = manifest.split(mode)?;
    let cfg = PreprocessConfig {
        target_size: size,
        ..PreprocessConfig::default()
    };
    let train_idx = if need_train { train_idx } else { Vec::new() };
    log::info!(
        "loading {} training and {} test images",
        train_idx.len(),
        test_idx.len()
    );
    let train = Dataset::load(&manifest, &train_idx, &cfg)?;
    let test = Dataset::load(&manifest, &test_idx, &cfg)?;
    let spec = match kind {
        ModelKind::Btbcnn => ModelSpec::btbcnn(),
        ModelKind::Btmcnn => ModelSpec::btmcnn(manifest.num_classes()),
    }
    .with_input_size(size);
    spec.validate()?;
    let echo = json!({
        "data": data.display().to_string(),
        "classes": manifest.class_names,
        "split": split_name,
        "split_ratio": ratio,
        "split_seed": seed,
        "train_size": train.len(),
        "test_size": test.len(),
    });
    Ok(Loaded {
        spec,
        train,
        test,
        echo,
    })
}

fn config_echo(loaded: &Loaded, cfg: &TrainConfig) -> serde_json::Value {
    json!({
        "model": loaded.spec,
        "loss": cfg.loss_for(&loaded.spec),
        "train": cfg,
        "dataset": loaded.echo,
    })
}

fn lr_tag(lr: f64) -> String {
    format!("lr-{lr}")
}

fn cmd_scan(ctx: &Ctx, a: &ScanArgs) -> Result<()> {
    let m = DatasetManifest::scan(&a.root)?;
    let manifest_path: Option<String> = ctx.layers.opt("manifest")?;
    if let Some(p) = &manifest_path {
        m.save(p)?;
    }
    let hist = m.class_histogram();
    let mut human = format!(
        "root: {}\nimages: {}\nclasses:\n",
        a.root.display(),
        m.len()
    );
    for (name, n) in m.class_names.iter().zip(&hist) {
        human.push_str(&format!("  {name}: {n}\n"));
    }
    if m.has_predefined_split() {
        human.push_str(&format!(
            "predefined split: {} train, {} test\n",
            m.count_split(crate::dataset::SplitTag::Train),
            m.count_split(crate::dataset::SplitTag::Test)
        ));
    } else {
        human.push_str("predefined split: none (ratio split applies)\n");
    }
    let pos = m.default_positive_classes();
    human.push_str(&format!(
        "default positive classes for btbcnn: {}\n",
        if pos.is_empty() {
            "none".into()
        } else {
            pos.join(", ")
        }
    ));
    ctx.emit(
        &human,
        &json!({
            "root": a.root.display().to_string(),
            "images": m.len(),
            "classes": m.class_names,
            "histogram": hist,
            "predefined_split": m.has_predefined_split(),
            "manifest": manifest_path,
        }),
    )
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let kind = ctx.model_kind()?;
    let cfg = ctx.train_config(TrainConfig::default().lr)?;
    let loaded = load_data(ctx, kind, cfg.epochs > 0)?;
    let out = ctx.out_dir()?;
    let (run, model) = train::train(loaded.spec, &loaded.train, &loaded.test, &cfg)?;
    let dir = report::create_run_dir(&out, &format!("train-{}-{}", kind.name(), lr_tag(cfg.lr)))?;
    report::write_run(&dir, &run, &model, &config_echo(&loaded, &cfg))?;
    ctx.write_manifest(&dir, run_artifacts(&dir))?;
    let summary = report::run_summary(&dir)?;
    ctx.emit(
        &format!("{summary}\nrun directory: {}\n", dir.display()),
        &json!({"run_dir": dir, "report": RunReport::from_run(&run)}),
    )
}

fn run_artifacts(dir: &Path) -> Vec<PathBuf> {
    [
        report::CONFIG_FILE,
        report::TRACE_FILE,
        report::REPORT_FILE,
        report::CONFUSION_FILE,
        report::CHECKPOINT_FILE,
        report::SUMMARY_FILE,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect()
}

fn cmd_eval(ctx: &Ctx) -> Result<()> {
    let path: PathBuf = ctx
        .layers
        .opt::<String>("checkpoint")?
        .map(PathBuf::from)
        .ok_or_else(|| Error::Usage("missing --checkpoint".into()))?;
    let (model, meta) = checkpoint::load(&path)?;
    let spec = *model
        .spec()
        .ok_or_else(|| Error::Format("checkpoint has no model spec".into()))?;
    let batch: usize = ctx.layers.get("batch", TrainConfig::default().batch)?;
    let mut loaded = load_data(ctx, spec.kind, false)?;
    if loaded.spec != spec {
        return Err(Error::Config(format!(
            "checkpoint expects {} classes at {} px, data gives {} classes at {} px",
            spec.num_classes, spec.input_size, loaded.spec.num_classes, loaded.spec.input_size
        )));
    }
    loaded.echo["checkpoint"] = json!(path.display().to_string());
    let evaluation: Evaluation = train::evaluate(&model, &loaded.test, batch)?;
    let cfg = TrainConfig {
        lr: meta.lr,
        epochs: meta.epochs as usize,
        batch,
        ..TrainConfig::default()
    };
    let fp = model.fingerprint();
    let run = RunResult {
        spec,
        config: cfg.clone(),
        history: Vec::new(),
        evaluation,
        train_size: 0,
        test_size: loaded.test.len(),
        param_count: model.param_count(),
        train_samples_seen: 0,
        initial_fingerprint: fp,
        final_fingerprint: fp,
        wall_seconds: 0.0,
    };
    let dir = report::create_run_dir(&ctx.out_dir()?, &format!("eval-{}", spec.kind.name()))?;
    report::write_run(&dir, &run, &model, &config_echo(&loaded, &cfg))?;
    ctx.write_manifest(&dir, run_artifacts(&dir))?;
    let summary = report::run_summary(&dir)?;
    ctx.emit(
        &format!("{summary}\nrun directory: {}\n", dir.display()),
        &json!({"run_dir": dir, "report": RunReport::from_run(&run)}),
    )
}

fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let kind = ctx.model_kind()?;
    let base = ctx.train_config(TrainConfig::default().lr)?;
    let lrs: Vec<f64> = ctx
        .layers
        .list("lrs")?
        .unwrap_or_else(|| DEFAULT_LRS.to_vec());
    let loaded = load_data(ctx, kind, base.epochs > 0)?;
    let dir = report::create_run_dir(&ctx.out_dir()?, &format!("sweep-{}", kind.name()))?;
    let mut artifacts = Vec::new();
    let sweep = train::lr_sweep(
        loaded.spec,
        &loaded.train,
        &loaded.test,
        &lrs,
        &base,
        |run, model| {
            let sub = report::create_run_dir(&dir, &lr_tag(run.config.lr))?;
            report::write_run(&sub, run, model, &config_echo(&loaded, &run.config))?;
            artifacts.extend(run_artifacts(&sub));
            Ok(())
        },
    )?;
    let md = report::sweep_markdown(&loaded.spec, &sweep);
    report::write_file(
        &dir.join(SWEEP_JSON),
        serde_json::to_string_pretty(&sweep)? + "\n",
    )?;
    report::write_file(&dir.join(SWEEP_MD), &md)?;
    artifacts.extend([dir.join(SWEEP_JSON), dir.join(SWEEP_MD)]);
    ctx.write_manifest(&dir, artifacts)?;
    let failed = sweep.entries.iter().filter(|e| e.result.is_none()).count();
    ctx.emit(
        &format!("{md}\nsweep directory: {}\n", dir.display()),
        &json!({"sweep_dir": dir, "best_lr": sweep.best_lr, "best_accuracy": sweep.best_accuracy, "failed_runs": failed,
                "entries": sweep.entries.iter().map(|e| json!({"lr": e.lr, "accuracy": e.result.as_ref().map(|r| r.accuracy()), "error": e.error})).collect::<Vec<_>>()}),
    )?;
    if sweep.best_lr.is_none() {
        return Err(Error::Data("every sweep run failed".into()));
    }
    Ok(())
}

pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_MD: &str = "sweep.md";
pub const FEWSHOT_JSON: &str = "fewshot.json";
pub const FEWSHOT_MD: &str = "fewshot.md";
pub const BENCH_JSON: &str = "bench.json";
pub const BENCH_MD: &str = "bench.md";

fn cmd_fewshot(ctx: &Ctx) -> Result<()> {
    let kind = ctx.model_kind()?;
    let cfg = ctx.train_config(TrainConfig::default().lr)?;
    let shots: Vec<usize> = ctx
        .layers
        .list("shots")?
        .unwrap_or_else(|| DEFAULT_SHOTS.to_vec());
    if shots.is_empty() {
        return Err(Error::Usage("--shots is empty".into()));
    }
    let loaded = load_data(ctx, kind, true)?;
    let rows = train::few_shot_experiment(loaded.spec, &loaded.train, &loaded.test, &shots, &cfg)?;
    let dir = report::create_run_dir(&ctx.out_dir()?, &format!("fewshot-{}", kind.name()))?;
    let md = report::few_shot_markdown(&loaded.spec, &rows);
    let payload = json!({"config": config_echo(&loaded, &cfg), "rows": rows});
    report::write_file(
        &dir.join(FEWSHOT_JSON),
        serde_json::to_string_pretty(&payload)? + "\n",
    )?;
    report::write_file(&dir.join(FEWSHOT_MD), &md)?;
    ctx.write_manifest(&dir, vec![dir.join(FEWSHOT_JSON), dir.join(FEWSHOT_MD)])?;
    ctx.emit(
        &format!("{md}\nfew-shot directory: {}\n", dir.display()),
        &json!({"dir": dir, "rows": rows}),
    )
}

fn cmd_bench(ctx: &Ctx) -> Result<()> {
    let l = &ctx.layers;
    let d = BenchConfig::default();
    let cfg = BenchConfig {
        batch: l.get("batch", d.batch)?,
        warmup: l.get("warmup", d.warmup)?,
        measured: l.get("measured", d.measured)?,
        threads: ctx.threads,
        input_size: l.get("input_size", d.input_size)?,
        seed: l.get("seed", d.seed)?,
    };
    cfg.validate()?;
    let names: Vec<String> = l
        .list("models")?
        .unwrap_or_else(|| vec!["btbcnn".to_string(), "btmcnn".to_string()]);
    let specs = names
        .iter()
        .map(|n| {
            ModelKind::parse(n).map(ModelSpec::for_kind).ok_or_else(|| {
                Error::Usage(format!("unknown model {n:?}; expected btbcnn or btmcnn"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = bench::bench_models(&specs, &cfg)?;
    let mut md = bench::bench_markdown(&report);
    let mut payload = json!({"inference": report});
    if let Some(epochs) = l.opt::<usize>("train_epochs")? {
        let mut times = Vec::new();
        for spec in &specs {
            let loaded = load_data(ctx, spec.kind, true)?;
            let tc = TrainConfig {
                epochs,
                ..ctx.train_config(TrainConfig::default().lr)?
            };
            let t = bench::with_threads(cfg.resolved_threads(), || {
                bench::time_training(loaded.spec, &loaded.train, &tc)
            })??;
            md.push('\n');
            md.push_str(&bench::training_markdown(&t));
            times.push(t);
        }
        payload["training"] = json!(times);
    }
    let dir = report::create_run_dir(&ctx.out_dir()?, "bench")?;
    report::write_file(
        &dir.join(BENCH_JSON),
        serde_json::to_string_pretty(&payload)? + "\n",
    )?;
    report::write_file(&dir.join(BENCH_MD), &md)?;
    ctx.write_manifest(&dir, vec![dir.join(BENCH_JSON), dir.join(BENCH_MD)])?;
    ctx.emit(
        &format!("{md}\nbench directory: {}\n", dir.display()),
        &payload,
    )
}

fn cmd_report(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    let dir = &a.run_dir;
    if !dir.is_dir() {
        return Err(Error::Data(format!("path not found: {}", dir.display())));
    }
    let format: Format = ctx.layers.get("format", "md".to_string())?.parse()?;
    let (text, stored) = if dir.join(report::REPORT_FILE).is_file() {
        let text = match format {
            Format::Markdown => report::run_summary(dir)?,
            f => {
                let r: RunReport = serde_json::from_str(&read(&dir.join(report::REPORT_FILE))?)?;
                report::render_report(&r.metrics, f)?
            }
        };
        (text, dir.join(report::SUMMARY_FILE))
    } else if dir.join(SWEEP_JSON).is_file() {
        let sweep: train::SweepResult = serde_json::from_str(&read(&dir.join(SWEEP_JSON))?)?;
        let spec = sweep
            .entries
            .iter()
            .find_map(|e| e.result.as_ref().map(|r| r.spec))
            .ok_or_else(|| Error::Data("sweep has no successful run".into()))?;
        (report::sweep_markdown(&spec, &sweep), dir.join(SWEEP_MD))
    } else {
        return Err(Error::Data(format!(
            "{} is not a run or sweep directory",
            dir.display()
        )));
    };
    if a.check {
        let old = read(&stored)?;
        if format == Format::Markdown && old != text {
            return Err(Error::Data(format!(
                "{} differs from the regenerated summary",
                stored.display()
            )));
        }
    }
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("stdout", e))
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::io(p, e))
}

fn run(cli: Cli, command: Vec<String>) -> Result<()> {
    let layers = Layers::load(collect_flags(&cli), cli.config.as_deref())?;
    let deterministic: bool = layers.get("deterministic", false)?;
    let json: bool = layers.get("json", false)?;
    let threads: usize = if deterministic {
        1
    } else {
        layers.get("threads", 0usize)?
    };
    if threads > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let ctx = Ctx {
        layers,
        command,
        started: unix_now(),
        json,
        deterministic,
        threads,
    };
    match &cli.command {
        Command::Scan(a) => cmd_scan(&ctx, a),
        Command::Train(_) => cmd_train(&ctx),
        Command::Eval(_) => cmd_eval(&ctx),
        Command::Sweep(_) => cmd_sweep(&ctx),
        Command::Fewshot(_) => cmd_fewshot(&ctx),
        Command::Bench(_) => cmd_bench(&ctx),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Failures print one line on stderr.
pub fn main_with(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", Error::Usage(first.to_string()).one_line());
            return 1;
        }
    };
    match run(cli, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.one_line());
            e.exit_code()
        }
    }
}
