//! Mini-batch training, evaluation and the optimizer.

mod history;
mod optimizer;

pub use history::{EpochRecord, History, HISTORY_HEADER};
pub use optimizer::RmsProp;

use std::time::Instant;

use log::{debug, info};

use crate::data::{normalize, DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::loss::{LossSpec, MetricsAccumulator, MetricsReport, PixelPrediction};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::unet::{Checkpoint, HistorySummary, ModelConfig, OptimizerSettings, Unet};

/// Anything that maps an input batch to a probability batch.
pub trait Predictor {
    fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Predictor for Unet<f32> {
    fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.forward_eval(x)
    }
}

impl<F> Predictor for F
where
    F: Fn(&Tensor<f32>) -> Result<Tensor<f32>>,
{
    fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Seeds weight initialization, shuffling and regularization noise.
    pub seed: u64,
    pub optimizer: OptimizerSettings,
    /// Binarization threshold for accuracy and hard counts.
    pub threshold: f64,
    /// Stop once an epoch's training soft Dice reaches this value.
    pub stop_at_train_dice: Option<f64>,
    /// Fit min-max statistics on the training split and apply them.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            optimizer: OptimizerSettings::default(),
            threshold: 0.5,
            stop_at_train_dice: None,
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::parameter("batch_size must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::parameter("patience must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::parameter("max_epochs must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::parameter("threshold must lie in (0, 1]"));
        }
        RmsProp::new(self.optimizer).map(|_| ())
    }
}

/// Why training ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    TargetReached,
    Hook,
}

/// Returned by the per-epoch hook of [`train_with_hook`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation-loss weights plus run metadata.
    pub checkpoint: Checkpoint<f32>,
    pub history: History,
    pub stop: StopReason,
    /// Weights after the last epoch, whether or not they were the best.
    pub last_model: Unet<f32>,
}

/// Stacks samples into an `N x C x H x W` input and `N x 1 x H x W` mask.
pub fn batch_tensors(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::contract("cannot build an empty batch"))?;
    let (c, h, w) = (first.channels, first.height(), first.width());
    let mut x = Vec::with_capacity(samples.len() * c * h * w);
    let mut y = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.channels, s.height(), s.width()) != (c, h, w) {
            return Err(Error::shape("samples in a batch must share extents and channels"));
        }
        if s.input.len() != c * h * w || s.mask.len() != h * w {
            return Err(Error::shape("sample buffers do not match their extents"));
        }
        x.extend_from_slice(&s.input);
        y.extend(s.mask.iter().map(|&m| m as f32));
    }
    Ok((
        Tensor::from_vec(&[samples.len(), c, h, w], x)?,
        Tensor::from_vec(&[samples.len(), 1, h, w], y)?,
    ))
}

/// Aggregate metrics of `predictor` over `samples` (already normalized).
pub fn evaluate(
    predictor: &dyn Predictor,
    samples: &[Sample],
    loss: &LossSpec,
    batch_size: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::parameter("batch_size must be >= 1"));
    }
    let mut acc = MetricsAccumulator::new();
    let refs: Vec<&Sample> = samples.iter().collect();
    for chunk in refs.chunks(batch_size) {
        let (x, y) = batch_tensors(chunk)?;
        let p = predictor.predict(&x)?;
        let pred = PixelPrediction::new(&p, &y)?;
        let l = loss.loss(&pred)?.item()? as f64;
        acc.add(&pred, l, chunk.len() as f64, threshold);
    }
    Ok(acc.report(loss.alpha, loss.beta, loss.smooth_eps))
}

/// Evaluates a checkpoint on raw samples, applying its stored normalization.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint<f32>,
    samples: &[Sample],
    batch_size: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    let mut samples = samples.to_vec();
    if let Some(stats) = &ckpt.norm {
        normalize(&mut samples, Some(stats))?;
    }
    let model = ckpt.model.detached();
    evaluate(&model, &samples, &ckpt.model.config().loss, batch_size, threshold)
}

/// Trains a fresh model on `split.train`, validating on `split.validation`.
pub fn train(cfg: &TrainConfig, model: ModelConfig, split: &DatasetSplit) -> Result<TrainOutcome> {
    train_with_hook(cfg, model, &split.train, &split.validation, |_| EpochControl::Continue)
}

/// [`train`] with explicit sample lists and a hook called after every epoch.
pub fn train_with_hook(
    cfg: &TrainConfig,
    model_cfg: ModelConfig,
    train_samples: &[Sample],
    val_samples: &[Sample],
    mut hook: impl FnMut(&EpochRecord) -> EpochControl,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(Error::contract("training and validation sets must be non-empty"));
    }
    let mut root = Rng::new(cfg.seed);
    let mut init_rng = root.fork();
    let mut shuffle_rng = root.fork();
    let mut noise_rng = root.fork();

    let mut train_set = train_samples.to_vec();
    let mut val_set = val_samples.to_vec();
    let norm = if cfg.normalize {
        let stats = normalize(&mut train_set, None)?;
        normalize(&mut val_set, Some(&stats))?;
        Some(stats)
    } else {
        None
    };

    let loss_spec = model_cfg.loss;
    let mut model = Unet::<f32>::new(model_cfg, &mut init_rng)?;
    let mut opt = RmsProp::new(cfg.optimizer)?;
    let mut history = History::default();
    let mut best: Option<(f64, usize, Unet<f32>)> = None;
    let mut since_best = 0;
    let mut stop = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut train_acc = MetricsAccumulator::new();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let (x, y) = batch_tensors(&batch)?;
            debug_assert!(model.parameters().iter().all(|(_, p)| p.grad().is_none()));
            let p = model.forward_train(&x, &mut noise_rng)?;
            let pred = PixelPrediction::new(&p, &y)?;
            let loss = loss_spec.loss(&pred)?;
            let lv = loss.item()? as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    loss: lv,
                });
            }
            loss.backward()?;
            train_acc.add(&pred, lv, batch.len() as f64, cfg.threshold);
            drop(loss);
            drop(p);
            opt.step(&mut model.parameters_mut())?;
        }
        let train_report = train_acc.report(loss_spec.alpha, loss_spec.beta, loss_spec.smooth_eps);
        let val = evaluate(&model.detached(), &val_set, &loss_spec, cfg.batch_size, cfg.threshold)?;
        if !val.loss_value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: val.loss_value,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: train_report.loss_value,
            val_loss: val.loss_value,
            val_dice: val.dice_coefficient,
            val_tversky: val.tversky_coefficient,
            val_accuracy: val.accuracy,
            seconds: started.elapsed().as_secs_f64(),
            train_dice: Some(train_report.dice_coefficient),
        };
        debug!(
            "epoch {epoch}: train loss {:.5} dice {:.4}, val loss {:.5} dice {:.4}",
            record.train_loss, train_report.dice_coefficient, record.val_loss, record.val_dice
        );
        history.epochs.push(record);

        if best.as_ref().is_none_or(|(l, _, _)| record.val_loss < *l) {
            best = Some((record.val_loss, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg
            .stop_at_train_dice
            .is_some_and(|t| train_report.dice_coefficient >= t)
        {
            stop = StopReason::TargetReached;
            break;
        }
        if hook(&record) == EpochControl::Stop {
            stop = StopReason::Hook;
            break;
        }
        if since_best >= cfg.patience {
            stop = StopReason::EarlyStopping;
            break;
        }
    }

    let (best_loss, best_epoch, best_model) = best.expect("at least one epoch ran");
    info!(
        "training stopped after {} epoch(s) ({stop:?}); best validation loss {best_loss:.5} at epoch {best_epoch}",
        history.len()
    );
    let mut checkpoint = Checkpoint::new(best_model);
    checkpoint.norm = norm;
    checkpoint.optimizer = cfg.optimizer;
    checkpoint.seed = cfg.seed;
    checkpoint.history = HistorySummary {
        epochs_run: history.len(),
        best_epoch,
        best_val_loss: best_loss,
        final_train_loss: history.epochs.last().map_or(0.0, |e| e.train_loss),
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        stop,
        last_model: model,
    })
}
