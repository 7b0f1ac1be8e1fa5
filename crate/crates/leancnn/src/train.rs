//! Training loop, evaluation, the learning-rate sweep and the few-shot
//! protocol.
//!
//! A run trains for exactly `epochs` epochs with no early stopping and then
//! evaluates on the test set. Mini-batch order is a permutation seeded by the
//! run seed and the epoch number, so `(seed, config, data)` fix every number a
//! run reports.

use std::time::Instant;

use leancnn_core::metrics::{binary_metrics, multiclass_metrics};
use leancnn_core::sampling::batch_indices;
use leancnn_core::{
    Adam, AdamConfig, ConfusionMatrix, LossKind, MetricsReport, Model, ModelSpec, Rng,
};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Learning rates of the standard sweep.
pub const DEFAULT_LRS: [f64; 4] = [0.001, 0.0005, 0.0001, 0.00005];

/// Shots per class of the standard few-shot protocol.
pub const DEFAULT_SHOTS: [usize; 7] = [0, 5, 10, 15, 20, 40, 80];

/// Seed for drawing few-shot subsets, independent of the init seed.
pub const DEFAULT_SAMPLER_SEED: u64 = 7;

/// Stream id separating mini-batch shuffling from weight initialization.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// 0 evaluates the freshly initialized model.
    pub epochs: usize,
    pub batch: usize,
    /// Weight initialization and shuffling.
    pub seed: u64,
    /// Few-shot subset sampling.
    pub sampler_seed: u64,
    /// `None` picks the loss matching the model: BCE for one logit, cross
    /// entropy otherwise.
    pub loss: Option<LossKind>,
    /// Test accuracy every this many epochs; 0 only at the end.
    pub eval_every: usize,
    /// Single-threaded kernels.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0005,
            epochs: 50,
            batch: 32,
            seed: 42,
            sampler_seed: DEFAULT_SAMPLER_SEED,
            loss: None,
            eval_every: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn loss_for(&self, spec: &ModelSpec) -> LossKind {
        self.loss.unwrap_or_else(|| spec.loss_kind())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the mini-batch losses.
    pub train_loss: f64,
    /// Fraction of training samples classified correctly during the
    /// train-mode passes (dropout active).
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
}

/// Outcome of one run. Wall-clock time is kept out of serialized forms so
/// that repeated runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    pub evaluation: Evaluation,
    pub train_size: usize,
    pub test_size: usize,
    pub param_count: usize,
    /// Distinct training samples that reached the model.
    pub train_samples_seen: usize,
    pub initial_fingerprint: u64,
    pub final_fingerprint: u64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl RunResult {
    pub fn accuracy(&self) -> f64 {
        self.evaluation.report.accuracy
    }
}

/// One pass over `data` in eval mode.
pub fn evaluate(model: &Model<f32>, data: &Dataset, batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let width = model.output_width();
    let classes = data.num_classes();
    if (width == 1 && classes != 2) || (width > 1 && width != classes) {
        return Err(Error::Config(format!(
            "model with {width} outputs cannot score a {classes}-class dataset"
        )));
    }
    let mut cm = ConfusionMatrix::new(data.class_names().to_vec())?;
    let order: Vec<usize> = (0..data.len()).collect();
    for idx in order.chunks(batch.max(1)) {
        let (x, labels) = data.batch(idx)?;
        let preds = model.predict(x)?;
        cm.extend(labels.into_iter().zip(preds))?;
    }
    let report = if classes == 2 {
        binary_metrics(&cm)?
    } else {
        multiclass_metrics(&cm)
    };
    Ok(Evaluation {
        confusion: cm,
        report,
    })
}

/// Epoch-at-a-time training state.
pub struct Trainer {
    model: Model<f32>,
    adam: Adam<f32>,
    config: TrainConfig,
    loss: LossKind,
    history: Vec<EpochRecord>,
    last_finite: Option<f64>,
}

impl Trainer {
    pub fn new(spec: ModelSpec, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::build(spec, config.seed)?;
        Ok(Self::from_model(model, config, spec.loss_kind()))
    }

    pub fn from_model(mut model: Model<f32>, config: TrainConfig, default_loss: LossKind) -> Self {
        model.set_parallel(!config.deterministic);
        Self {
            adam: Adam::new(AdamConfig::with_lr(config.lr)),
            loss: config.loss.unwrap_or(default_loss),
            model,
            config,
            history: Vec::new(),
            last_finite: None,
        }
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// One epoch over `train`, then test accuracy if the schedule asks for
    /// it. A non-finite loss aborts with the last finite value.
    pub fn run_epoch(&mut self, train: &Dataset, test: Option<&Dataset>) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let epoch = self.history.len() + 1;
        let shuffle_seed = Rng::derive(self.config.seed, SHUFFLE_STREAM).seed();
        let batches = batch_indices(
            train.len(),
            self.config.batch,
            true,
            shuffle_seed,
            epoch as u64,
        )?;
        let (mut total, mut correct) = (0.0f64, 0usize);
        for (b, idx) in batches.iter().enumerate() {
            let (x, labels) = train.batch(idx)?;
            let out = self
                .model
                .train_step(&mut self.adam, x, &labels, self.loss)?;
            let loss = out.loss as f64;
            if !out.updated || !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss,
                    last_finite: self.last_finite,
                });
            }
            self.last_finite = Some(loss);
            total += loss * idx.len() as f64;
            correct += out.correct;
        }
        let eval_accuracy = match test {
            Some(t)
                if self.config.eval_every > 0 && epoch.is_multiple_of(self.config.eval_every) =>
            {
                Some(evaluate(&self.model, t, self.config.batch)?.report.accuracy)
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            eval_accuracy,
        };
        self.history.push(record.clone());
        Ok(record)
    }
}

/// Fresh model, exactly `config.epochs` epochs, then a test evaluation.
pub fn train(
    spec: ModelSpec,
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
) -> Result<(RunResult, Model<f32>)> {
    let start = Instant::now();
    let mut trainer = Trainer::new(spec, config.clone())?;
    let initial_fingerprint = trainer.model.fingerprint();
    train.reset_audit();
    for _ in 0..config.epochs {
        trainer.run_epoch(train, Some(test))?;
    }
    let evaluation = evaluate(&trainer.model, test, config.batch)?;
    let model = trainer.model;
    let result = RunResult {
        spec,
        config: config.clone(),
        history: trainer.history,
        evaluation,
        train_size: train.len(),
        test_size: test.len(),
        param_count: model.param_count(),
        train_samples_seen: train.accessed(),
        initial_fingerprint,
        final_fingerprint: model.fingerprint(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((result, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub lr: f64,
    pub result: Option<RunResult>,
    /// Why the run failed, if it did.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub best_lr: Option<f64>,
    pub best_accuracy: Option<f64>,
}

/// Highest test accuracy wins; equal accuracies go to the lower rate.
pub fn pick_best(entries: &[SweepEntry]) -> Option<(f64, f64)> {
    entries
        .iter()
        .filter_map(|e| e.result.as_ref().map(|r| (e.lr, r.accuracy())))
        .fold(None, |best, (lr, acc)| match best {
            Some((blr, bacc)) if acc < bacc || (acc == bacc && lr >= blr) => Some((blr, bacc)),
            _ => Some((lr, acc)),
        })
}

/// One independent run per learning rate, each from the same fresh
/// initialization. A failed run is recorded and the sweep moves on.
/// `on_run` sees each finished model before it is dropped.
pub fn lr_sweep(
    spec: ModelSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    lrs: &[f64],
    base: &TrainConfig,
    mut on_run: impl FnMut(&RunResult, &Model<f32>) -> Result<()>,
) -> Result<SweepResult> {
    if lrs.is_empty() {
        return Err(Error::Config(
            "learning-rate sweep needs at least one rate".into(),
        ));
    }
    let mut entries = Vec::with_capacity(lrs.len());
    for &lr in lrs {
        let config = TrainConfig { lr, ..base.clone() };
        let outcome = train(spec, train_set, test_set, &config).and_then(|(r, m)| {
            on_run(&r, &m)?;
            Ok(r)
        });
        entries.push(match outcome {
            Ok(r) => SweepEntry {
                lr,
                result: Some(r),
                error: None,
            },
            Err(e) => {
                log::warn!("sweep run at lr {lr} failed: {}", e.one_line());
                SweepEntry {
                    lr,
                    result: None,
                    error: Some(e.one_line()),
                }
            }
        });
    }
    let best = pick_best(&entries);
    Ok(SweepResult {
        entries,
        best_lr: best.map(|b| b.0),
        best_accuracy: best.map(|b| b.1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotRow {
    pub k: usize,
    pub subset_size: usize,
    /// Distinct training images the model was shown (audit counter).
    pub samples_seen: usize,
    pub accuracy: f64,
    pub report: MetricsReport,
    pub initial_fingerprint: u64,
    pub final_fingerprint: u64,
}

/// For each `k`: fresh init, train on `k` images per class (no training at
/// `k = 0`), evaluate on the full test set.
pub fn few_shot_experiment(
    spec: ModelSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    ks: &[usize],
    config: &TrainConfig,
) -> Result<Vec<FewShotRow>> {
    let classes = train_set.num_classes();
    ks.iter()
        .map(|&k| {
            let subset = train_set.few_shot(k, config.sampler_seed)?;
            let cfg = TrainConfig {
                epochs: if k == 0 { 0 } else { config.epochs },
                ..config.clone()
            };
            let (run, _) = train(spec, &subset, test_set, &cfg)?;
            if run.train_samples_seen > k * classes {
                return Err(Error::Data(format!(
                    "{k}-shot run saw {} training images, more than {}",
                    run.train_samples_seen,
                    k * classes
                )));
            }
            Ok(FewShotRow {
                k,
                subset_size: subset.len(),
                samples_seen: run.train_samples_seen,
                accuracy: run.accuracy(),
                report: run.evaluation.report,
                initial_fingerprint: run.initial_fingerprint,
                final_fingerprint: run.final_fingerprint,
            })
        })
        .collect()
}
