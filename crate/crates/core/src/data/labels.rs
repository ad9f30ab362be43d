use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use log::warn;

use super::grid::{normalize_lon, GridSpec};
use crate::error::{Error, Result};

/// One cyclone centre observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CycloneRecord {
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    /// Degrees east in `[0, 360)`.
    pub lon: f64,
    /// Maximum sustained wind in knots; heuristic labels carry none.
    pub wind_kt: Option<f64>,
}

impl CycloneRecord {
    pub fn new(timestamp: DateTime<Utc>, lat: f64, lon: f64, wind_kt: Option<f64>) -> Result<Self> {
        if !(lat.abs() <= 90.0) {
            return Err(Error::Domain(format!("latitude {lat} outside [-90, 90]")));
        }
        if !lon.is_finite() {
            return Err(Error::Domain(format!("longitude {lon} is not finite")));
        }
        Ok(Self {
            timestamp,
            lat,
            lon: normalize_lon(lon),
            wind_kt,
        })
    }
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(Error::parameter(format!("cannot parse timestamp '{s}'")))
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Cyclone centre table, stored as CSV with header `timestamp,lat,lon,wind_kt`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    pub records: Vec<CycloneRecord>,
}

impl LabelTable {
    pub fn new(records: Vec<CycloneRecord>) -> Self {
        Self { records }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn at(&self, t: DateTime<Utc>) -> Vec<CycloneRecord> {
        self.records.iter().filter(|r| r.timestamp == t).cloned().collect()
    }

    pub fn extend(&mut self, other: LabelTable) {
        self.records.extend(other.records);
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["timestamp", "lat", "lon", "wind_kt"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::parameter(format!(
                "label table header must be {}, got {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let ctx = |e: Error| Error::parameter(format!("label row {}: {e}", line + 2));
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::parameter(format!("'{s}' is not a number")))
            };
            let ts = parse_timestamp(&row[0]).map_err(ctx)?;
            let lat = num(&row[1]).map_err(ctx)?;
            let lon = num(&row[2]).map_err(ctx)?;
            let wind = match row[3].trim() {
                "" => None,
                s => Some(num(s).map_err(ctx)?),
            };
            records.push(CycloneRecord::new(ts, lat, lon, wind).map_err(ctx)?);
        }
        Ok(Self { records })
    }

    pub fn to_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "lat", "lon", "wind_kt"])?;
        for r in &self.records {
            w.write_record([
                format_timestamp(r.timestamp),
                r.lat.to_string(),
                r.lon.to_string(),
                r.wind_kt.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<label table>", e))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(f)
    }
}

/// Result of [`rasterize_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rasterized {
    /// Row-major `{0, 1}` raster on the target grid.
    pub mask: Vec<u8>,
    /// Records that passed the wind filter but fell off the grid.
    pub skipped: usize,
    /// Records drawn.
    pub drawn: usize,
}

/// Pixel offsets covered by a `size`-wide box around its centre: odd sizes
/// are symmetric, even sizes span `[c - size/2, c + size/2 - 1]`.
pub(crate) fn box_span(size: usize) -> std::ops::RangeInclusive<i64> {
    let start = -((size / 2) as i64);
    start..=start + size as i64 - 1
}

/// Draws a `box_size` square of ones around the nearest pixel to each record.
///
/// With `wind_min` set, records without a wind value or below the threshold
/// are ignored. Boxes clip at the top and bottom rows, and wrap across the
/// dateline on cyclic grids (clip otherwise).
pub fn rasterize_labels(
    records: &[CycloneRecord],
    spec: &GridSpec,
    box_size: usize,
    wind_min: Option<f64>,
) -> Result<Rasterized> {
    if box_size == 0 {
        return Err(Error::parameter("box size must be >= 1"));
    }
    spec.validate()?;
    let (w, h) = (spec.width as i64, spec.height as i64);
    let mut mask = vec![0u8; spec.len()];
    let mut skipped = 0;
    let mut drawn = 0;
    for r in records {
        if let Some(min) = wind_min {
            if !r.wind_kt.is_some_and(|v| v >= min) {
                continue;
            }
        }
        let Some((row, col)) = spec.latlon_to_pixel(r.lat, r.lon) else {
            skipped += 1;
            continue;
        };
        drawn += 1;
        for dr in box_span(box_size) {
            let rr = row as i64 + dr;
            if rr < 0 || rr >= h {
                continue;
            }
            for dc in box_span(box_size) {
                let mut cc = col as i64 + dc;
                if spec.cyclic_longitude {
                    cc = cc.rem_euclid(w);
                } else if cc < 0 || cc >= w {
                    continue;
                }
                mask[(rr * w + cc) as usize] = 1;
            }
        }
    }
    if skipped > 0 {
        warn!("{skipped} cyclone record(s) fell outside the grid and were skipped");
    }
    Ok(Rasterized {
        mask,
        skipped,
        drawn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2017, 9, 6, 12, 0, 0).unwrap()
    }

    fn rec(lat: f64, lon: f64, wind: Option<f64>) -> CycloneRecord {
        CycloneRecord::new(t0(), lat, lon, wind).unwrap()
    }

    fn ones(mask: &[u8]) -> usize {
        mask.iter().filter(|&&v| v == 1).count()
    }

    #[test]
    fn interior_box_on_gfs() {
        let g = GridSpec::gfs();
        let r = rasterize_labels(&[rec(20.0, -150.0, Some(65.0))], &g, 25, Some(34.0)).unwrap();
        assert_eq!(ones(&r.mask), 625);
        for row in 128..=152 {
            for col in 408..=432 {
                assert_eq!(r.mask[row * 720 + col], 1);
            }
        }
    }

    #[test]
    fn weak_storm_is_filtered() {
        let g = GridSpec::gfs();
        let r = rasterize_labels(&[rec(20.0, 210.0, Some(30.0))], &g, 25, Some(34.0)).unwrap();
        assert_eq!(ones(&r.mask), 0);
        let r = rasterize_labels(&[rec(20.0, 210.0, None)], &g, 25, Some(34.0)).unwrap();
        assert_eq!(ones(&r.mask), 0);
        let r = rasterize_labels(&[rec(20.0, 210.0, None)], &g, 25, None).unwrap();
        assert_eq!(ones(&r.mask), 625);
    }

    #[test]
    fn dateline_wrap() {
        let g = GridSpec::gfs();
        let r = rasterize_labels(&[rec(0.0, 0.1, Some(50.0))], &g, 25, Some(34.0)).unwrap();
        assert_eq!(ones(&r.mask), 625);
        let row = 180;
        for col in (708..720).chain(0..=12) {
            assert_eq!(r.mask[row * 720 + col], 1, "col {col}");
        }
        assert_eq!(r.mask[row * 720 + 13], 0);
        assert_eq!(r.mask[row * 720 + 707], 0);
    }

    #[test]
    fn even_box_anchoring() {
        let g = GridSpec::regional(10, 10, 9.0, 0.0, -1.0, 1.0);
        let r = rasterize_labels(&[rec(4.0, 5.0, None)], &g, 4, None).unwrap();
        // centre (5, 5): rows and cols 3..=6
        for row in 0..10 {
            for col in 0..10 {
                let inside = (3..=6).contains(&row) && (3..=6).contains(&col);
                assert_eq!(r.mask[row * 10 + col] == 1, inside);
            }
        }
    }

    #[test]
    fn polar_clip_and_regional_clip() {
        let g = GridSpec::gfs();
        let r = rasterize_labels(&[rec(89.0, 100.0, None)], &g, 25, None).unwrap();
        // centre row 2: rows 0..=14 survive
        assert_eq!(ones(&r.mask), 15 * 25);
        let g = GridSpec::regional(10, 10, 9.0, 0.0, -1.0, 1.0);
        let r = rasterize_labels(&[rec(9.0, 0.0, None)], &g, 5, None).unwrap();
        assert_eq!(ones(&r.mask), 9);
    }

    #[test]
    fn off_grid_records_are_counted() {
        let g = GridSpec::regional(10, 10, 9.0, 0.0, -1.0, 1.0);
        let r = rasterize_labels(&[rec(50.0, 5.0, None), rec(5.0, 5.0, None)], &g, 3, None).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.drawn, 1);
    }

    #[test]
    fn csv_round_trip() {
        let table = LabelTable::new(vec![
            rec(20.25, 210.5, Some(65.0)),
            CycloneRecord::new(t0() + chrono::Duration::hours(3), -12.5, 359.75, None).unwrap(),
        ]);
        let mut buf = Vec::new();
        table.to_writer(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,lat,lon,wind_kt\n2017-09-06T12:00:00Z,"));
        assert_eq!(LabelTable::from_reader(buf.as_slice()).unwrap(), table);
    }

    #[test]
    fn csv_rejects_bad_header_and_values() {
        assert!(LabelTable::from_reader("time,lat,lon\n".as_bytes()).is_err());
        let bad = "timestamp,lat,lon,wind_kt\n2017-09-06T12:00:00Z,95,10,\n";
        assert!(LabelTable::from_reader(bad.as_bytes()).is_err());
    }

    #[test]
    fn longitude_is_normalized() {
        assert_eq!(rec(0.0, -150.0, None).lon, 210.0);
        assert_eq!(rec(0.0, 360.0, None).lon, 0.0);
    }
}
