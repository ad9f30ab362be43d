use std::collections::VecDeque;

use chrono::{DateTime, Utc};

use crate::data::{format_timestamp, parse_timestamp, GridFrame, Mask};
use crate::error::{Error, Result};

pub const ROI_HEADER: [&str; 11] = [
    "timestamp",
    "row_min",
    "row_max",
    "col_min",
    "col_max",
    "lat_min",
    "lat_max",
    "lon_min",
    "lon_max",
    "confidence",
    "area_pixels",
];

/// Binary mask of pixels whose probability is at least `tau`, compared in
/// the map's single precision. Thresholds that round to zero there select
/// every strictly positive pixel.
pub fn threshold_mask(prob: &GridFrame, tau: f64) -> Result<Mask> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::parameter(format!("threshold {tau} outside (0, 1]")));
    }
    let t = (tau as f32).max(f32::from_bits(1));
    let values = prob.values.iter().map(|&p| u8::from(p >= t)).collect();
    Mask::new(prob.spec, prob.timestamp, values)
}

/// Bounding box of one connected component.
///
/// On cyclic grids a component that crosses the last/first column has
/// `col_min > col_max`: it covers `col_min..width` and `0..=col_max`.
/// Longitudes are those of the edge pixel centres, so the same holds for
/// `lon_min > lon_max` when the box crosses the grid's longitude seam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    /// Highest probability inside the component.
    pub confidence: f64,
    pub area_pixels: usize,
}

impl RoiBox {
    pub fn wraps(&self) -> bool {
        self.col_min > self.col_max
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let in_rows = (self.row_min..=self.row_max).contains(&row);
        let in_cols = if self.wraps() {
            col >= self.col_min || col <= self.col_max
        } else {
            (self.col_min..=self.col_max).contains(&col)
        };
        in_rows && in_cols
    }

    /// Column spans covered by the box, one or two of them.
    pub fn col_ranges(&self, width: usize) -> Vec<std::ops::RangeInclusive<usize>> {
        if self.wraps() {
            vec![self.col_min..=width - 1, 0..=self.col_max]
        } else {
            vec![self.col_min..=self.col_max]
        }
    }
}

/// Column bounds of a set of occupied columns. On cyclic grids the box
/// skips the widest run of empty columns, which may lie across the seam.
fn column_bounds(occupied: &[bool], cyclic: bool) -> (usize, usize) {
    let w = occupied.len();
    let cols: Vec<usize> = (0..w).filter(|&c| occupied[c]).collect();
    let (first, last) = (cols[0], *cols.last().expect("non-empty"));
    if !cyclic || cols.len() == w {
        return (first, last);
    }
    let mut best_gap = first + (w - 1 - last);
    let mut bounds = (first, last);
    for pair in cols.windows(2) {
        let gap = pair[1] - pair[0] - 1;
        if gap > best_gap {
            best_gap = gap;
            bounds = (pair[1], pair[0]);
        }
    }
    bounds
}

/// 4-connected components of `mask` with at least `min_area` pixels, as
/// boxes sorted by descending confidence. On cyclic grids the first and
/// last columns are neighbours.
pub fn extract_rois(mask: &Mask, prob: &GridFrame, min_area: usize) -> Result<Vec<RoiBox>> {
    let spec = mask.spec;
    if prob.spec.width != spec.width || prob.spec.height != spec.height {
        return Err(Error::shape("probability map and mask extents differ"));
    }
    let (h, w) = (spec.height, spec.width);
    let mut label = vec![false; h * w];
    let mut rois = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if mask.values[start] == 0 || label[start] {
            continue;
        }
        label[start] = true;
        queue.push_back(start);
        let (mut rmin, mut rmax) = (usize::MAX, 0);
        let mut occupied = vec![false; w];
        let mut area = 0;
        let mut conf = f64::NEG_INFINITY;
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            area += 1;
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            occupied[c] = true;
            conf = conf.max(prob.values[i] as f64);
            let mut neighbours = [None; 4];
            if r > 0 {
                neighbours[0] = Some(i - w);
            }
            if r + 1 < h {
                neighbours[1] = Some(i + w);
            }
            if c > 0 {
                neighbours[2] = Some(i - 1);
            } else if spec.cyclic_longitude && w > 1 {
                neighbours[2] = Some(i + w - 1);
            }
            if c + 1 < w {
                neighbours[3] = Some(i + 1);
            } else if spec.cyclic_longitude && w > 1 {
                neighbours[3] = Some(i + 1 - w);
            }
            for j in neighbours.into_iter().flatten() {
                if mask.values[j] == 1 && !label[j] {
                    label[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if area < min_area {
            continue;
        }
        let (cmin, cmax) = column_bounds(&occupied, spec.cyclic_longitude);
        let (lat_a, lon_min) = spec.pixel_to_latlon(rmin, cmin);
        let (lat_b, lon_max) = spec.pixel_to_latlon(rmax, cmax);
        rois.push(RoiBox {
            row_min: rmin,
            row_max: rmax,
            col_min: cmin,
            col_max: cmax,
            lat_min: lat_a.min(lat_b),
            lat_max: lat_a.max(lat_b),
            lon_min,
            lon_max,
            confidence: conf,
            area_pixels: area,
        });
    }
    rois.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.row_min.cmp(&b.row_min))
            .then(a.col_min.cmp(&b.col_min))
    });
    Ok(rois)
}

/// Writes ROI rows under [`ROI_HEADER`].
pub fn write_rois_csv<W: std::io::Write>(w: W, rows: &[(DateTime<Utc>, RoiBox)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ROI_HEADER)?;
    for (t, r) in rows {
        out.write_record([
            format_timestamp(*t),
            r.row_min.to_string(),
            r.row_max.to_string(),
            r.col_min.to_string(),
            r.col_max.to_string(),
            r.lat_min.to_string(),
            r.lat_max.to_string(),
            r.lon_min.to_string(),
            r.lon_max.to_string(),
            r.confidence.to_string(),
            r.area_pixels.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_rois_csv<R: std::io::Read>(r: R) -> Result<Vec<(DateTime<Utc>, RoiBox)>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(ROI_HEADER) {
        return Err(Error::Config(format!("ROI header must be `{}`", ROI_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |k: usize| Error::Config(format!("ROI row {}: bad {}", n + 1, ROI_HEADER[k]));
        let int = |k: usize| rec[k].parse::<usize>().map_err(|_| bad(k));
        let float = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(k));
        rows.push((
            parse_timestamp(&rec[0])?,
            RoiBox {
                row_min: int(1)?,
                row_max: int(2)?,
                col_min: int(3)?,
                col_max: int(4)?,
                lat_min: float(5)?,
                lat_max: float(6)?,
                lon_min: float(7)?,
                lon_max: float(8)?,
                confidence: float(9)?,
                area_pixels: int(10)?,
            },
        ));
    }
    Ok(rows)
}
