//! On-disk dataset layout.
//!
//! ```text
//! DIR/frames/<stamp>.f32grid   input frames
//! DIR/labels.csv               cyclone records
//! DIR/masks/<stamp>.u8mask     rasterized truth masks
//! DIR/split.csv                timestamp,split
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use stormseg::data::{
    format_timestamp, parse_timestamp, stack_temporal, timestamp_stem, DatasetSplit, GridFrame, Mask, Sample,
    YearAssignment,
};
use stormseg::{Error, Result};

pub const FRAME_EXT: &str = "f32grid";
pub const MASK_EXT: &str = "u8mask";
pub const SPLIT_HEADER: [&str; 2] = ["timestamp", "split"];

pub fn frames_dir(data: &Path) -> PathBuf {
    data.join("frames")
}

pub fn masks_dir(data: &Path) -> PathBuf {
    data.join("masks")
}

pub fn labels_path(data: &Path) -> PathBuf {
    data.join("labels.csv")
}

pub fn split_path(data: &Path) -> PathBuf {
    data.join("split.csv")
}

pub fn frame_path(dir: &Path, t: DateTime<Utc>) -> PathBuf {
    dir.join(format!("{}.{FRAME_EXT}", timestamp_stem(t)))
}

pub fn mask_path(dir: &Path, t: DateTime<Utc>) -> PathBuf {
    dir.join(format!("{}.{MASK_EXT}", timestamp_stem(t)))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let io = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Every frame in `dir`, sorted by valid time.
pub fn read_frames(dir: &Path) -> Result<Vec<GridFrame>> {
    let mut frames = files_with_ext(dir, FRAME_EXT)?
        .iter()
        .map(|p| GridFrame::read(p))
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        return Err(Error::Contract(format!("no .{FRAME_EXT} files in {}", dir.display())));
    }
    frames.sort_by_key(|f| f.timestamp);
    Ok(frames)
}

/// Stacks frames into samples, pairing each with the mask at its newest
/// time step.
pub fn load_samples(data: &Path, cadence: Duration) -> Result<Vec<Sample>> {
    let frames = read_frames(&frames_dir(data))?;
    let masks = masks_dir(data);
    let mut samples = Vec::new();
    for stack in stack_temporal(&frames, cadence)? {
        let path = mask_path(&masks, stack.timestamp);
        if !path.exists() {
            return Err(Error::Contract(format!(
                "missing mask {} (run `rasterize` first)",
                path.display()
            )));
        }
        let mask = Mask::read(&path)?;
        if mask.spec.width != stack.spec.width || mask.spec.height != stack.spec.height {
            return Err(Error::Shape(format!("mask {} does not match its frames", path.display())));
        }
        samples.push(Sample {
            timestamp: stack.timestamp,
            spec: stack.spec,
            channels: 3,
            input: stack.data,
            mask: mask.values,
        });
    }
    if samples.is_empty() {
        return Err(Error::Contract(
            "no frame has two predecessors on the cadence".to_string(),
        ));
    }
    Ok(samples)
}

pub fn write_split(path: &Path, rows: &[(DateTime<Utc>, &str)]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SPLIT_HEADER)?;
    for (t, name) in rows {
        w.write_record([format_timestamp(*t).as_str(), name])
            ?;
    }
    w.flush().map_err(io)
}

pub fn read_split(path: &Path) -> Result<BTreeMap<DateTime<Utc>, String>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != SPLIT_HEADER {
        return Err(Error::Contract(format!("{}: expected header timestamp,split", path.display())));
    }
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let t = parse_timestamp(&rec[0])?;
        let name = rec[1].to_string();
        if !matches!(name.as_str(), "train" | "validation" | "test") {
            return Err(Error::Contract(format!("{}: unknown split `{name}`", path.display())));
        }
        out.insert(t, name);
    }
    Ok(out)
}

/// Partitions samples according to a split table. Samples absent from the
/// table are an error.
pub fn apply_split(samples: Vec<Sample>, table: &BTreeMap<DateTime<Utc>, String>) -> Result<DatasetSplit> {
    let mut split = DatasetSplit {
        years: YearAssignment::default(),
        ..DatasetSplit::default()
    };
    for s in samples {
        match table.get(&s.timestamp).map(String::as_str) {
            Some("train") => split.train.push(s),
            Some("validation") => split.validation.push(s),
            Some("test") => split.test.push(s),
            _ => {
                return Err(Error::Contract(format!(
                    "sample {} is not listed in the split table",
                    format_timestamp(s.timestamp)
                )))
            }
        }
    }
    Ok(split)
}
