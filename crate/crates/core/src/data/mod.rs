//! Gridded inputs, cyclone labels and dataset assembly.

mod grid;
mod labels;
mod normalize;
mod resample;
mod sample;
mod split;
mod synth;

pub use grid::{normalize_lon, GridFrame, GridSpec, Mask};
pub use labels::{
    format_timestamp, parse_timestamp, rasterize_labels, CycloneRecord, LabelTable, Rasterized,
};
pub use normalize::{normalize, NormStats};
pub use resample::resample_bilinear;
pub use sample::{build_samples, stack_temporal, Sample, StackedInput};
pub use split::{split_by_year, DatasetSplit, YearAssignment};
pub use synth::{synth_dataset, synth_scene, SynthParams, SynthScene};

use chrono::{DateTime, Utc};

/// File-name stem for a timestamp, e.g. `20180912T060000Z`.
pub fn timestamp_stem(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%M%SZ").to_string()
}
