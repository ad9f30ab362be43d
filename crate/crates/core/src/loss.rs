//! Losses and overlap metrics for imbalanced binary segmentation.
//!
//! Overlap terms use soft (probability-weighted) counts over every pixel of
//! the batch:
//!
//! * intersection `I = Σ p·y`
//! * false positives `FP = Σ p·(1 - y)`
//! * false negatives `FN = Σ (1 - p)·y`
//!
//! so the Tversky coefficient is `(I + s) / (I + α·FP + β·FN + s)` and the
//! Dice coefficient is `(2I + s) / (Σp + Σy + s)`, with the smoothing term
//! `s` making two empty masks agree perfectly (coefficient 1).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before any log.
pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_SMOOTH: f64 = 1e-6;
pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_BETA: f64 = 0.7;
pub const DEFAULT_GAMMA: f64 = 2.0;

/// Predicted probabilities paired with binary truth of the same shape.
#[derive(Debug, Clone, Copy)]
pub struct PixelPrediction<'a, T: Element> {
    p: &'a Tensor<T>,
    y: &'a Tensor<T>,
}

impl<'a, T: Element> PixelPrediction<'a, T> {
    pub fn new(p: &'a Tensor<T>, y: &'a Tensor<T>) -> Result<Self> {
        p.check_same_shape(y, "prediction vs truth")?;
        if let Some(v) = y.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
            return Err(Error::Domain(format!("truth label {v} is not 0 or 1")));
        }
        if let Some(v) = p.data().iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Domain(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self { p, y })
    }

    pub fn p(&self) -> &Tensor<T> {
        self.p
    }

    pub fn y(&self) -> &Tensor<T> {
        self.y
    }

    fn clamped(&self) -> Tensor<T> {
        let eps = T::from_f64_lossy(PROB_CLAMP);
        self.p.clamp(eps, T::one() - eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Bce,
    Dice,
    Tversky,
    Focal,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Dice => "dice",
            LossKind::Tversky => "tversky",
            LossKind::Focal => "focal",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(LossKind::Bce),
            "dice" => Ok(LossKind::Dice),
            "tversky" => Ok(LossKind::Tversky),
            "focal" => Ok(LossKind::Focal),
            other => Err(Error::parameter(format!(
                "unknown loss '{other}' (expected bce, dice, tversky or focal)"
            ))),
        }
    }
}

/// Which loss to train with, plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// False-positive weight of the Tversky coefficient.
    pub alpha: f64,
    /// False-negative weight of the Tversky coefficient.
    pub beta: f64,
    /// Focusing exponent of the focal loss.
    pub gamma: f64,
    pub smooth_eps: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::new(LossKind::Tversky)
    }
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            smooth_eps: DEFAULT_SMOOTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::parameter("tversky alpha and beta must be >= 0"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::parameter("focal gamma must be >= 0"));
        }
        if !(self.smooth_eps > 0.0) {
            return Err(Error::parameter("smooth_eps must be > 0"));
        }
        Ok(())
    }

    pub fn loss<T: Element>(&self, pred: &PixelPrediction<'_, T>) -> Result<Tensor<T>> {
        self.validate()?;
        match self.kind {
            LossKind::Bce => bce_loss(pred),
            LossKind::Dice => dice_loss(pred, self.smooth_eps),
            LossKind::Tversky => tversky_loss(pred, self.alpha, self.beta, self.smooth_eps),
            LossKind::Focal => focal_loss(pred, self.gamma),
        }
    }
}

/// Mean binary cross-entropy: `-log p` where `y = 1`, `-log(1 - p)` elsewhere.
pub fn bce_loss<T: Element>(pred: &PixelPrediction<'_, T>) -> Result<Tensor<T>> {
    let p = pred.clamped();
    let y = pred.y();
    let pos = y.mul(&p.try_log()?)?;
    let neg = y.rsub_scalar(T::one()).mul(&p.rsub_scalar(T::one()).try_log()?)?;
    Ok(pos.add(&neg)?.mean_all().neg())
}

/// Mean focal loss `-(1 - p_t)^γ log p_t`, with `p_t = p` on positives and
/// `1 - p` on negatives. Equal to [`bce_loss`] at `γ = 0`.
pub fn focal_loss<T: Element>(pred: &PixelPrediction<'_, T>, gamma: f64) -> Result<Tensor<T>> {
    if !(gamma >= 0.0) {
        return Err(Error::parameter(format!("focal gamma {gamma} must be >= 0")));
    }
    let p = pred.clamped();
    let y = pred.y();
    let one = T::one();
    let p_t = y
        .mul(&p)?
        .add(&y.rsub_scalar(one).mul(&p.rsub_scalar(one))?)?;
    let weight = p_t.rsub_scalar(one).pow_scalar(T::from_f64_lossy(gamma));
    Ok(weight.mul(&p_t.try_log()?)?.mean_all().neg())
}

struct SoftCounts<T: Element> {
    intersection: Tensor<T>,
    false_pos: Tensor<T>,
    false_neg: Tensor<T>,
}

fn soft_counts<T: Element>(pred: &PixelPrediction<'_, T>) -> Result<SoftCounts<T>> {
    let (p, y) = (pred.p(), pred.y());
    let one = T::one();
    Ok(SoftCounts {
        intersection: p.mul(y)?.sum_all(),
        false_pos: p.mul(&y.rsub_scalar(one))?.sum_all(),
        false_neg: p.rsub_scalar(one).mul(y)?.sum_all(),
    })
}

/// Soft Tversky coefficient, differentiable in `p`.
pub fn tversky_coefficient<T: Element>(
    pred: &PixelPrediction<'_, T>,
    alpha: f64,
    beta: f64,
    smooth_eps: f64,
) -> Result<Tensor<T>> {
    let c = soft_counts(pred)?;
    let s = T::from_f64_lossy(smooth_eps);
    let num = c.intersection.add_scalar(s);
    let den = c
        .intersection
        .add(&c.false_pos.mul_scalar(T::from_f64_lossy(alpha)))?
        .add(&c.false_neg.mul_scalar(T::from_f64_lossy(beta)))?
        .add_scalar(s);
    num.div(&den)
}

pub fn tversky_loss<T: Element>(
    pred: &PixelPrediction<'_, T>,
    alpha: f64,
    beta: f64,
    smooth_eps: f64,
) -> Result<Tensor<T>> {
    Ok(tversky_coefficient(pred, alpha, beta, smooth_eps)?.rsub_scalar(T::one()))
}

/// Soft Dice coefficient, differentiable in `p`.
pub fn dice_coefficient<T: Element>(pred: &PixelPrediction<'_, T>, smooth_eps: f64) -> Result<Tensor<T>> {
    let (p, y) = (pred.p(), pred.y());
    let s = T::from_f64_lossy(smooth_eps);
    let two = T::one() + T::one();
    let num = p.mul(y)?.sum_all().mul_scalar(two).add_scalar(s);
    let den = p.sum_all().add(&y.sum_all())?.add_scalar(s);
    num.div(&den)
}

pub fn dice_loss<T: Element>(pred: &PixelPrediction<'_, T>, smooth_eps: f64) -> Result<Tensor<T>> {
    Ok(dice_coefficient(pred, smooth_eps)?.rsub_scalar(T::one()))
}

/// Fraction of pixels whose thresholded prediction (`p >= threshold` is
/// positive) equals the truth.
pub fn pixel_accuracy<T: Element>(pred: &PixelPrediction<'_, T>, threshold: f64) -> f64 {
    let th = T::from_f64_lossy(threshold);
    let correct = pred
        .p()
        .data()
        .iter()
        .zip(pred.y().data())
        .filter(|(&p, &y)| (p >= th) == (y == T::one()))
        .count();
    correct as f64 / pred.p().numel() as f64
}

/// Aggregate evaluation results over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub dice_coefficient: f64,
    pub tversky_coefficient: f64,
    /// Mean per-sample loss under the configured [`LossSpec`].
    pub loss_value: f64,
    /// Dice from thresholded (hard) counts.
    pub hard_dice: f64,
    /// Tversky from thresholded (hard) counts.
    pub hard_tversky: f64,
    pub pixels: u64,
}

/// Running totals for dataset-level metrics, fed one prediction at a time.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    inter: f64,
    sum_p: f64,
    sum_y: f64,
    false_pos: f64,
    false_neg: f64,
    hard_tp: u64,
    hard_fp: u64,
    hard_fn: u64,
    correct: u64,
    pixels: u64,
    loss_sum: f64,
    loss_weight: f64,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one prediction. `loss` is weighted by `weight` (usually the
    /// number of samples it was computed over).
    pub fn add<T: Element>(&mut self, pred: &PixelPrediction<'_, T>, loss: f64, weight: f64, threshold: f64) {
        let th = T::from_f64_lossy(threshold);
        for (&p, &y) in pred.p().data().iter().zip(pred.y().data()) {
            let (pf, yf) = (p.to_f64_lossy(), y.to_f64_lossy());
            self.inter += pf * yf;
            self.sum_p += pf;
            self.sum_y += yf;
            self.false_pos += pf * (1.0 - yf);
            self.false_neg += (1.0 - pf) * yf;
            let hard = p >= th;
            let truth = y == T::one();
            match (hard, truth) {
                (true, true) => self.hard_tp += 1,
                (true, false) => self.hard_fp += 1,
                (false, true) => self.hard_fn += 1,
                (false, false) => {}
            }
            if hard == truth {
                self.correct += 1;
            }
        }
        self.pixels += pred.p().numel() as u64;
        self.loss_sum += loss * weight;
        self.loss_weight += weight;
    }

    pub fn is_empty(&self) -> bool {
        self.pixels == 0
    }

    pub fn report(&self, alpha: f64, beta: f64, smooth_eps: f64) -> MetricsReport {
        let s = smooth_eps;
        let tversky = |i: f64, fp: f64, fne: f64| (i + s) / (i + alpha * fp + beta * fne + s);
        let (tp, fp, fne) = (self.hard_tp as f64, self.hard_fp as f64, self.hard_fn as f64);
        MetricsReport {
            accuracy: if self.pixels == 0 {
                0.0
            } else {
                self.correct as f64 / self.pixels as f64
            },
            dice_coefficient: (2.0 * self.inter + s) / (self.sum_p + self.sum_y + s),
            tversky_coefficient: tversky(self.inter, self.false_pos, self.false_neg),
            loss_value: if self.loss_weight > 0.0 {
                self.loss_sum / self.loss_weight
            } else {
                0.0
            },
            hard_dice: (2.0 * tp + s) / (2.0 * tp + fp + fne + s),
            hard_tversky: tversky(tp, fp, fne),
            pixels: self.pixels,
        }
    }
}
