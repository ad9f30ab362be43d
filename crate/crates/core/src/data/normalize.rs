use log::warn;

use super::sample::Sample;
use crate::error::{Error, Result};

/// Per-channel min/max fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    /// Fits statistics over every pixel of every sample.
    pub fn fit(samples: &[Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::contract("cannot fit normalization on an empty split"))?;
        let channels = first.channels;
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for s in samples {
            if s.channels != channels {
                return Err(Error::shape("samples disagree on channel count"));
            }
            let plane = s.input.len() / channels;
            for c in 0..channels {
                for &v in &s.input[c * plane..(c + 1) * plane] {
                    let v = v as f64;
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        Ok(Self { min, max })
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    /// Scales a `channels x plane` buffer in place. Constant channels map to 0.
    pub fn apply(&self, input: &mut [f32]) -> Result<()> {
        let channels = self.channels();
        if channels == 0 || input.len() % channels != 0 {
            return Err(Error::shape(format!(
                "input of {} values does not split into {channels} channels",
                input.len()
            )));
        }
        let plane = input.len() / channels;
        for c in 0..channels {
            let (lo, hi) = (self.min[c], self.max[c]);
            let span = hi - lo;
            let chunk = &mut input[c * plane..(c + 1) * plane];
            if span > 0.0 {
                for v in chunk {
                    *v = ((*v as f64 - lo) / span) as f32;
                }
            } else {
                chunk.fill(0.0);
            }
        }
        Ok(())
    }

    fn warn_constant(&self) {
        for c in 0..self.channels() {
            if self.max[c] - self.min[c] <= 0.0 {
                warn!("channel {c} is constant in the training data; it will be scaled to 0");
            }
        }
    }
}

/// Min-max scales every sample's input to `[0, 1]` per channel.
///
/// When `stats` is `None` they are fitted on `samples` (which should be the
/// training split); the statistics used are returned either way.
pub fn normalize(samples: &mut [Sample], stats: Option<&NormStats>) -> Result<NormStats> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => {
            let s = NormStats::fit(samples)?;
            s.warn_constant();
            s
        }
    };
    for s in samples.iter_mut() {
        if s.channels != stats.channels() {
            return Err(Error::shape(format!(
                "sample has {} channels, statistics have {}",
                s.channels,
                stats.channels()
            )));
        }
        stats.apply(&mut s.input)?;
    }
    Ok(stats)
}
