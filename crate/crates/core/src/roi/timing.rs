use std::time::Instant;

use super::Inference;
use crate::data::GridSpec;
use crate::error::{Error, Result};

/// Eight frames a day for 31 days.
pub const FRAMES_PER_MONTH: usize = 248;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub frames_timed: usize,
    pub seconds_per_frame: f64,
    /// Wall time of a month of frames: measured when `month_measured`,
    /// otherwise extrapolated from the per-frame time.
    pub seconds_per_month: f64,
    pub month_measured: bool,
}

impl TimingReport {
    /// Measured month time over `FRAMES_PER_MONTH` times the per-frame time.
    pub fn month_ratio(&self) -> f64 {
        self.seconds_per_month / (FRAMES_PER_MONTH as f64 * self.seconds_per_frame)
    }

    /// Whether the month time lies within 10% of the extrapolated value.
    pub fn consistent(&self) -> bool {
        (self.month_ratio() - 1.0).abs() <= 0.1
    }
}

/// Times single-frame inference on `input` after one untimed warm-up run.
/// With `measure_month`, a separate run of [`FRAMES_PER_MONTH`] frames is
/// timed as well.
pub fn benchmark(
    model: &Inference,
    spec: &GridSpec,
    input: &[f32],
    n_frames: usize,
    measure_month: bool,
) -> Result<TimingReport> {
    if n_frames == 0 {
        return Err(Error::parameter("benchmark needs at least one frame"));
    }
    model.predict_raw(spec, input)?;
    let t = Instant::now();
    for _ in 0..n_frames {
        model.predict_raw(spec, input)?;
    }
    let per_frame = (t.elapsed().as_secs_f64() / n_frames as f64).max(f64::MIN_POSITIVE);
    let month = if measure_month {
        let t = Instant::now();
        for _ in 0..FRAMES_PER_MONTH {
            model.predict_raw(spec, input)?;
        }
        t.elapsed().as_secs_f64()
    } else {
        per_frame * FRAMES_PER_MONTH as f64
    };
    Ok(TimingReport {
        frames_timed: n_frames,
        seconds_per_frame: per_frame,
        seconds_per_month: month,
        month_measured: measure_month,
    })
}
