use std::collections::HashMap;

use chrono::{DateTime, Datelike, Duration, Utc};

use super::grid::{GridFrame, GridSpec};
use super::labels::{rasterize_labels, LabelTable};
use crate::error::{Error, Result};

/// Three frames stacked as channels `(t, t - cadence, t - 2 * cadence)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedInput {
    pub timestamp: DateTime<Utc>,
    pub spec: GridSpec,
    /// `3 x height x width`, channel 0 is the newest frame.
    pub data: Vec<f32>,
}

/// One training/evaluation example: a temporal input stack and its truth
/// mask at the newest time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub timestamp: DateTime<Utc>,
    pub spec: GridSpec,
    pub channels: usize,
    /// `channels x height x width`.
    pub input: Vec<f32>,
    /// `height x width`, values in `{0, 1}`.
    pub mask: Vec<u8>,
}

impl Sample {
    pub fn year(&self) -> i32 {
        self.timestamp.year()
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn positive_pixels(&self) -> usize {
        self.mask.iter().filter(|&&v| v == 1).count()
    }
}

/// Builds one stacked input for every frame whose two predecessors exist on
/// the cadence. Gaps simply produce no input.
///
/// Frames must be sorted by time with no duplicate timestamps, and share a
/// grid.
pub fn stack_temporal(frames: &[GridFrame], cadence: Duration) -> Result<Vec<StackedInput>> {
    if cadence <= Duration::zero() {
        return Err(Error::parameter("cadence must be positive"));
    }
    for pair in frames.windows(2) {
        if pair[1].timestamp == pair[0].timestamp {
            return Err(Error::contract(format!(
                "duplicate frame timestamp {}",
                pair[0].timestamp
            )));
        }
        if pair[1].timestamp < pair[0].timestamp {
            return Err(Error::contract("frames must be sorted by timestamp"));
        }
        if pair[1].spec.width != pair[0].spec.width || pair[1].spec.height != pair[0].spec.height {
            return Err(Error::shape("frames must share grid extents"));
        }
    }
    let by_time: HashMap<DateTime<Utc>, &GridFrame> = frames.iter().map(|f| (f.timestamp, f)).collect();
    let mut out = Vec::new();
    for f in frames {
        let (Some(prev1), Some(prev2)) = (
            by_time.get(&(f.timestamp - cadence)),
            by_time.get(&(f.timestamp - cadence * 2)),
        ) else {
            continue;
        };
        let mut data = Vec::with_capacity(3 * f.values.len());
        data.extend_from_slice(&f.values);
        data.extend_from_slice(&prev1.values);
        data.extend_from_slice(&prev2.values);
        out.push(StackedInput {
            timestamp: f.timestamp,
            spec: f.spec,
            data,
        });
    }
    Ok(out)
}

/// Pairs stacked inputs with masks rasterized from the label records valid
/// at each input's newest time step.
pub fn build_samples(
    stacks: Vec<StackedInput>,
    labels: &LabelTable,
    box_size: usize,
    wind_min: Option<f64>,
) -> Result<Vec<Sample>> {
    stacks
        .into_iter()
        .map(|s| {
            let records = labels.at(s.timestamp);
            let r = rasterize_labels(&records, &s.spec, box_size, wind_min)?;
            Ok(Sample {
                timestamp: s.timestamp,
                spec: s.spec,
                channels: 3,
                input: s.data,
                mask: r.mask,
            })
        })
        .collect()
}
