//! Training loop: binary cross-entropy, Adam, the plateau/restart schedule and
//! the single-cycle fine-tuning phase.

mod adam;
mod schedule;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dataset::FrameSample;
use crate::error::{Error, Result};
use crate::imaging::PreprocessParams;
use crate::loader::ImageLoader;
use crate::model::{save_checkpoint, CheckpointMeta, HeadKind, Model};
use crate::multidomain::{derive_seed, EpochComposition, MultiDomainSet};
use crate::scalar::Scalar;

pub use adam::{Adam, AdamConfig};
pub use schedule::{step_schedule, Phase, ScheduleAction, ScheduleConfig, ScheduleState, ScheduleStep};

const SALT_SHUFFLE: u64 = 11;
const SALT_AUGMENT: u64 = 12;
const SALT_DROPOUT: u64 = 13;

/// File name of the best checkpoint inside a training output directory.
pub const BEST_CHECKPOINT: &str = "best.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Defaults to the head's learning rate ([`default_lr`]).
    pub initial_lr: Option<f64>,
    pub lr_patience: usize,
    pub restart_patience: usize,
    pub restart_lr_decay: f64,
    pub max_restarts: usize,
    pub finetune_lr_divisor: f64,
    /// Hard cap on epochs per run, on top of the schedule's own stop.
    pub max_epochs: usize,
    /// Decision threshold for training and validation accuracy.
    pub threshold: f64,
    pub adam: AdamConfig,
    /// Keep decoded frames in memory across epochs.
    pub cache_images: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        TrainConfig {
            batch_size: 4,
            initial_lr: None,
            lr_patience: s.lr_patience,
            restart_patience: s.restart_patience,
            restart_lr_decay: s.restart_lr_decay,
            max_restarts: s.max_restarts,
            finetune_lr_divisor: 10.0,
            max_epochs: 300,
            threshold: 0.5,
            adam: AdamConfig::default(),
            cache_images: true,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            lr_patience: self.lr_patience,
            restart_patience: self.restart_patience,
            restart_lr_decay: self.restart_lr_decay,
            max_restarts: self.max_restarts,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.schedule().validate();
        if self.batch_size == 0 {
            errs.push("train.batch_size must be >= 1".into());
        }
        if let Some(lr) = self.initial_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                errs.push(format!("train.initial_lr must be > 0, got {lr}"));
            }
        }
        if !(self.finetune_lr_divisor > 0.0) {
            errs.push(format!(
                "train.finetune_lr_divisor must be > 0, got {}",
                self.finetune_lr_divisor
            ));
        }
        if self.max_epochs == 0 {
            errs.push("train.max_epochs must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            errs.push(format!("train.threshold must be in [0, 1], got {}", self.threshold));
        }
        errs.extend(self.adam.validate());
        errs
    }

    /// Learning rate of the baseline phase for `head`.
    pub fn baseline_lr(&self, head: HeadKind) -> Result<f64> {
        match self.initial_lr {
            Some(lr) => Ok(lr),
            None => default_lr(head),
        }
    }

    pub fn finetune_lr(&self, head: HeadKind) -> Result<f64> {
        Ok(self.baseline_lr(head)? / self.finetune_lr_divisor)
    }
}

/// Starting learning rate of each trainable head.
pub fn default_lr(head: HeadKind) -> Result<f64> {
    match head {
        HeadKind::XFishMp => Ok(1e-5),
        HeadKind::XFishHmMp => Ok(1e-4),
        HeadKind::XFishHm => Err(Error::WrongVariant {
            expected: "pooled (XFishMp or XFishHmMp)",
            found: head.name(),
        }),
    }
}

/// Where each epoch's training list comes from.
#[derive(Debug, Clone, Copy)]
pub enum TrainSource<'a> {
    Plain(&'a [FrameSample]),
    MultiDomain(&'a MultiDomainSet),
}

impl TrainSource<'_> {
    fn epoch(&self, epoch: usize) -> (Vec<FrameSample>, Option<EpochComposition>) {
        match self {
            TrainSource::Plain(s) => (s.to_vec(), None),
            TrainSource::MultiDomain(set) => {
                let (samples, comp) = set.draw_epoch(epoch);
                (samples, Some(comp))
            }
        }
    }
}

/// Everything a run needs besides the model, data and hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub preprocess: &'a PreprocessParams,
    pub augment: &'a AugmentConfig,
    pub loader: &'a ImageLoader,
    /// Directory for the best checkpoint; nothing is written when `None`.
    pub out_dir: Option<&'a Path>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub action: ScheduleAction,
    pub improved: bool,
    pub n_train: usize,
    #[serde(skip_deserializing)]
    pub composition: Option<EpochComposition>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub head: HeadKind,
    pub phase: Phase,
    pub seed: u64,
    pub initial_lr: f64,
    pub schedule: ScheduleConfig,
    pub n_validation: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_checkpoint: Option<PathBuf>,
    pub stop_reason: String,
}

impl TrainReport {
    /// Feed the recorded validation accuracies through a fresh schedule.
    pub fn replay_actions(&self) -> Vec<ScheduleAction> {
        let mut state = ScheduleState::new(self.initial_lr, self.phase);
        self.epochs
            .iter()
            .map(|e| {
                let step = step_schedule(&state, e.val_acc, &self.schedule);
                state = step.state;
                step.action
            })
            .collect()
    }
}

/// Fraction of `samples` whose score lands on the label's side of `threshold`.
pub fn accuracy<T: Scalar>(
    model: &Model<T>,
    samples: &[FrameSample],
    preprocess: &PreprocessParams,
    loader: &ImageLoader,
    threshold: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::arg("accuracy needs at least one sample"));
    }
    let mut correct = 0usize;
    for s in samples {
        let x = loader.eval_input::<T>(s.path(), preprocess)?;
        let p = model.score(&x)?.as_f64();
        if (p >= threshold) == (s.label() == 1) {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Baseline training with restarts.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    source: TrainSource<'_>,
    validation: &[FrameSample],
    config: &TrainConfig,
    ctx: &TrainContext<'_>,
) -> Result<TrainReport> {
    let lr = config.baseline_lr(model.head())?;
    run(model, source, validation, config, ctx, lr, Phase::Baseline)
}

/// One cycle from an already trained model at a reduced learning rate.
pub fn finetune<T: Scalar>(
    model: &mut Model<T>,
    source: TrainSource<'_>,
    validation: &[FrameSample],
    config: &TrainConfig,
    ctx: &TrainContext<'_>,
) -> Result<TrainReport> {
    let lr = config.finetune_lr(model.head())?;
    run(model, source, validation, config, ctx, lr, Phase::Finetune)
}

fn run<T: Scalar>(
    model: &mut Model<T>,
    source: TrainSource<'_>,
    validation: &[FrameSample],
    config: &TrainConfig,
    ctx: &TrainContext<'_>,
    initial_lr: f64,
    phase: Phase,
) -> Result<TrainReport> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if !model.head().is_pooled() {
        return Err(Error::WrongVariant {
            expected: "pooled (XFishMp or XFishHmMp)",
            found: model.head().name(),
        });
    }
    if validation.is_empty() {
        return Err(Error::arg("validation set is empty"));
    }
    if ctx.preprocess.target() != model.input_size() {
        return Err(Error::arg(format!(
            "preprocessing target {:?} does not match the model input {:?}",
            ctx.preprocess.target(),
            model.input_size()
        )));
    }
    let schedule = config.schedule();
    let mut state = ScheduleState::new(initial_lr, phase);
    let mut adam = Adam::new(config.adam);
    let mut best_weights = model.export_weights();
    let mut best_epoch = 0;
    let mut best_checkpoint = None;
    let mut epochs = Vec::new();
    let mut stop_reason = format!("reached max_epochs ({})", config.max_epochs);

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let lr = state.lr;
        let (mut samples, composition) = source.epoch(epoch);
        if samples.is_empty() {
            return Err(Error::arg("training set is empty"));
        }
        samples.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            ctx.seed,
            SALT_SHUFFLE,
            epoch as u64,
        )));
        let (train_loss, train_acc) = train_epoch(model, &mut adam, &samples, epoch, lr, config, ctx)?;
        let val_acc = accuracy(model, validation, ctx.preprocess, ctx.loader, config.threshold)?;
        let step = step_schedule(&state, val_acc, &schedule);
        state = step.state;
        if step.improved {
            best_weights = model.export_weights();
            best_epoch = epoch;
            if let Some(dir) = ctx.out_dir {
                let mut meta = CheckpointMeta::new(model, ctx.preprocess, config.threshold);
                meta.epoch = Some(epoch);
                meta.val_acc = Some(val_acc);
                let path = dir.join(BEST_CHECKPOINT);
                save_checkpoint(model, &meta, &path)?;
                best_checkpoint = Some(path);
            }
        }
        if step.action == ScheduleAction::Restart {
            model.import_weights(&best_weights)?;
            adam.reset();
        }
        log::info!(
            "epoch {epoch}: lr {lr:.3e} loss {train_loss:.4} acc {train_acc:.4} val {val_acc:.4} -> {:?}",
            step.action
        );
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            train_acc,
            val_acc,
            action: step.action,
            improved: step.improved,
            n_train: samples.len(),
            composition,
            seconds: started.elapsed().as_secs_f64(),
        });
        if step.action == ScheduleAction::Stop {
            stop_reason = match phase {
                Phase::Finetune => format!("no improvement for {} epochs", schedule.restart_patience),
                Phase::Baseline => format!("no improvement after {} restarts", schedule.max_restarts),
            };
            break;
        }
    }
    model.import_weights(&best_weights)?;
    Ok(TrainReport {
        head: model.head(),
        phase,
        seed: ctx.seed,
        initial_lr,
        schedule,
        n_validation: validation.len(),
        epochs,
        best_epoch,
        best_val_acc: state.best_val_acc,
        best_checkpoint,
        stop_reason,
    })
}

fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    adam: &mut Adam<T>,
    samples: &[FrameSample],
    epoch: usize,
    lr: f64,
    config: &TrainConfig,
    ctx: &TrainContext<'_>,
) -> Result<(f64, f64)> {
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, SALT_DROPOUT, epoch as u64));
    let aug_base = derive_seed(ctx.seed, SALT_AUGMENT, epoch as u64);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (b, batch) in samples.chunks(config.batch_size).enumerate() {
        model.zero_grad();
        let scale = T::lit(1.0 / batch.len() as f64);
        for (i, s) in batch.iter().enumerate() {
            let index = (b * config.batch_size + i) as u64;
            let x = ctx
                .loader
                .train_input::<T>(s.path(), ctx.preprocess, ctx.augment, derive_seed(aug_base, index, 0))?;
            let label = T::lit(s.label() as f64);
            let ex = model.train_example(&x, label, scale, &mut dropout_rng)?;
            let loss = ex.loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    lr,
                    batch: batch
                        .iter()
                        .map(|s| format!("{} (label {})", s.path().display(), s.label()))
                        .collect(),
                });
            }
            loss_sum += loss;
            if (ex.prob.as_f64() >= config.threshold) == (s.label() == 1) {
                correct += 1;
            }
        }
        adam.step(model, lr);
    }
    let n = samples.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}
