//! Inference on gridded frames, thresholding, connected-component regions
//! of interest, overlay images and timing.

mod components;
mod overlay;
mod timing;

pub use components::{extract_rois, read_rois_csv, threshold_mask, write_rois_csv, RoiBox, ROI_HEADER};
pub use overlay::{render_overlay, write_overlay, Overlay, BOX_COLOR};
pub use timing::{benchmark, TimingReport, FRAMES_PER_MONTH};

use chrono::{DateTime, Duration, Utc};

use crate::data::{format_timestamp, GridFrame, GridSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unet::{Checkpoint, Unet};

/// Default confidence threshold.
pub const DEFAULT_TAU: f64 = 0.7;
/// Default speckle filter, in pixels.
pub const DEFAULT_MIN_AREA: usize = 4;

/// A checkpoint prepared for repeated inference.
#[derive(Debug, Clone)]
pub struct Inference {
    model: Unet<f32>,
    norm: Option<crate::data::NormStats>,
}

impl Inference {
    pub fn new(ckpt: &Checkpoint<f32>) -> Self {
        Self {
            model: ckpt.model.detached(),
            norm: ckpt.norm.clone(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.model.config().in_channels
    }

    /// Probability map for a raw `channels x height x width` input on `spec`.
    pub fn predict_raw(&self, spec: &GridSpec, input: &[f32]) -> Result<Vec<f32>> {
        let c = self.in_channels();
        if input.len() != c * spec.len() {
            return Err(Error::shape(format!(
                "input holds {} values, expected {c} x {} x {}",
                input.len(),
                spec.height,
                spec.width
            )));
        }
        let mut x = input.to_vec();
        if let Some(stats) = &self.norm {
            stats.apply(&mut x)?;
        }
        let t = Tensor::from_vec(&[1, c, spec.height, spec.width], x)?;
        Ok(self.model.forward_eval(&t)?.to_vec())
    }

    /// Probability map valid at the newest frame, stacking it with its
    /// predecessors at `cadence` spacing (newest first).
    pub fn predict(&self, frames: &[GridFrame], cadence: Duration) -> Result<GridFrame> {
        let newest = frames
            .iter()
            .max_by_key(|f| f.timestamp)
            .ok_or_else(|| Error::contract("no frames to run inference on"))?;
        let c = self.in_channels();
        let needed: Vec<DateTime<Utc>> = (0..c as i32).map(|k| newest.timestamp - cadence * k).collect();
        let mut chosen = Vec::with_capacity(c);
        let mut missing = Vec::new();
        for t in &needed {
            match frames.iter().find(|f| f.timestamp == *t) {
                Some(f) => chosen.push(f),
                None => missing.push(format_timestamp(*t)),
            }
        }
        if !missing.is_empty() {
            return Err(Error::contract(format!(
                "inference at {} needs frames at {}",
                format_timestamp(newest.timestamp),
                missing.join(", ")
            )));
        }
        let spec = newest.spec;
        let mut input = Vec::with_capacity(c * spec.len());
        for f in chosen {
            if f.spec.width != spec.width || f.spec.height != spec.height {
                return Err(Error::shape("frames must share grid extents"));
            }
            input.extend_from_slice(&f.values);
        }
        let probs = self.predict_raw(&spec, &input)?;
        GridFrame::new(spec, newest.timestamp, probs)
    }
}

/// Runs `ckpt` on the newest of `frames`; see [`Inference::predict`].
pub fn infer(ckpt: &Checkpoint<f32>, frames: &[GridFrame], cadence: Duration) -> Result<GridFrame> {
    Inference::new(ckpt).predict(frames, cadence)
}
