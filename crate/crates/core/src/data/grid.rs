use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};

use crate::bytes::{read_file, write_file, ByteReader};
use crate::error::{Error, Result};

const GRID_MAGIC: &[u8; 4] = b"F32G";
const MASK_MAGIC: &[u8; 4] = b"U8MK";
const FORMAT_VERSION: u32 = 1;

/// Maps a longitude into `[0, 360)`.
pub fn normalize_lon(lon: f64) -> f64 {
    let l = lon.rem_euclid(360.0);
    if l >= 360.0 {
        0.0
    } else {
        l
    }
}

/// Regular latitude/longitude raster geometry. `(lat0, lon0)` is the centre
/// of pixel `(row 0, col 0)`; each row step moves `dlat` degrees and each
/// column step `dlon` degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub cyclic_longitude: bool,
}

impl GridSpec {
    /// Global half-degree grid, north to south, wrapping at the dateline.
    pub fn gfs() -> Self {
        Self {
            width: 720,
            height: 361,
            lat0: 90.0,
            lon0: 0.0,
            dlat: -0.5,
            dlon: 0.5,
            cyclic_longitude: true,
        }
    }

    /// Non-wrapping regional grid.
    pub fn regional(width: usize, height: usize, lat0: f64, lon0: f64, dlat: f64, dlon: f64) -> Self {
        Self {
            width,
            height,
            lat0,
            lon0,
            dlat,
            dlon,
            cyclic_longitude: false,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::parameter("grid extents must be positive"));
        }
        if !(self.dlat.is_finite() && self.dlon.is_finite()) || self.dlat == 0.0 || self.dlon == 0.0 {
            return Err(Error::parameter("grid steps must be finite and non-zero"));
        }
        if self.width as f64 * self.dlon.abs() > 360.0 + 1e-9 {
            return Err(Error::parameter("grid spans more than 360 degrees of longitude"));
        }
        if !(self.lat0.is_finite() && self.lon0.is_finite()) {
            return Err(Error::parameter("grid origin must be finite"));
        }
        Ok(())
    }

    /// Centre of a pixel; longitude normalized into `[0, 360)`.
    pub fn pixel_to_latlon(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.lat0 + row as f64 * self.dlat,
            normalize_lon(self.lon0 + col as f64 * self.dlon),
        )
    }

    /// Fractional row of a latitude.
    pub fn lat_to_row(&self, lat: f64) -> f64 {
        (lat - self.lat0) / self.dlat
    }

    /// Fractional column of a longitude. Cyclic grids measure eastward
    /// offsets in `[0, 360)`; regional grids take the nearest representative
    /// of the longitude to `lon0`.
    pub fn lon_to_col(&self, lon: f64) -> f64 {
        let diff = if self.cyclic_longitude {
            if self.dlon > 0.0 {
                normalize_lon(lon - self.lon0)
            } else {
                -normalize_lon(self.lon0 - lon)
            }
        } else {
            (lon - self.lon0 + 180.0).rem_euclid(360.0) - 180.0
        };
        diff / self.dlon
    }

    /// Nearest pixel to a coordinate, or `None` when it falls off the grid.
    pub fn latlon_to_pixel(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let row = self.lat_to_row(lat).round();
        if !(row >= 0.0 && row < self.height as f64) {
            return None;
        }
        let col = self.lon_to_col(lon).round();
        let col = if self.cyclic_longitude {
            (col as i64).rem_euclid(self.width as i64) as f64
        } else {
            col
        };
        if !(col >= 0.0 && col < self.width as f64) {
            return None;
        }
        Some((row as usize, col as usize))
    }

    fn write_header(&self, magic: &[u8; 4], timestamp: DateTime<Utc>, out: &mut Vec<u8>) {
        out.extend_from_slice(magic);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in [self.lat0, self.lon0, self.dlat, self.dlon] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(u8::from(self.cyclic_longitude));
        out.extend_from_slice(&timestamp.timestamp().to_le_bytes());
    }

    fn read_header(r: &mut ByteReader<'_>, magic: &[u8; 4]) -> Result<(Self, DateTime<Utc>)> {
        r.expect_magic(magic)?;
        let at = r.offset();
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let width = r.u32("width")? as usize;
        let height = r.u32("height")? as usize;
        let lat0 = r.f64("lat0")?;
        let lon0 = r.f64("lon0")?;
        let dlat = r.f64("dlat")?;
        let dlon = r.f64("dlon")?;
        let at = r.offset();
        let cyclic = match r.u8("cyclic flag")? {
            0 => false,
            1 => true,
            other => return Err(Error::format(at, format!("cyclic flag {other} is not 0 or 1"))),
        };
        let at = r.offset();
        let secs = r.i64("timestamp")?;
        let timestamp = Utc
            .timestamp_opt(secs, 0)
            .single()
            .ok_or_else(|| Error::format(at, format!("timestamp {secs} out of range")))?;
        let spec = Self {
            width,
            height,
            lat0,
            lon0,
            dlat,
            dlon,
            cyclic_longitude: cyclic,
        };
        spec.validate()
            .map_err(|e| Error::format(r.offset(), format!("invalid grid header: {e}")))?;
        if width.checked_mul(height).and_then(|n| n.checked_mul(4)).is_none() {
            return Err(Error::format(8, format!("grid {width}x{height} is too large")));
        }
        Ok((spec, timestamp))
    }
}

/// A single-channel raster with its geometry and valid time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFrame {
    pub spec: GridSpec,
    pub timestamp: DateTime<Utc>,
    /// Row-major, row 0 first.
    pub values: Vec<f32>,
}

impl GridFrame {
    pub fn new(spec: GridSpec, timestamp: DateTime<Utc>, values: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::shape(format!(
                "grid {}x{} needs {} values, got {}",
                spec.width,
                spec.height,
                spec.len(),
                values.len()
            )));
        }
        Ok(Self {
            spec,
            timestamp,
            values,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.spec.width + col]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(57 + 4 * self.values.len());
        self.spec.write_header(GRID_MAGIC, self.timestamp, &mut out);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let (spec, timestamp) = GridSpec::read_header(&mut r, GRID_MAGIC)?;
        let payload = r.take(spec.len() * 4, "grid payload")?;
        r.finish()?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
            .collect();
        Ok(Self {
            spec,
            timestamp,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Binary raster of cyclone (1) / background (0) pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub spec: GridSpec,
    pub timestamp: DateTime<Utc>,
    pub values: Vec<u8>,
}

impl Mask {
    pub fn new(spec: GridSpec, timestamp: DateTime<Utc>, values: Vec<u8>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::shape(format!(
                "mask needs {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Domain("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            spec,
            timestamp,
            values,
        })
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(57 + self.values.len());
        self.spec.write_header(MASK_MAGIC, self.timestamp, &mut out);
        out.extend_from_slice(&self.values);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let (spec, timestamp) = GridSpec::read_header(&mut r, MASK_MAGIC)?;
        let start = r.offset();
        let payload = r.take(spec.len(), "mask payload")?;
        r.finish()?;
        if let Some(i) = payload.iter().position(|&v| v > 1) {
            return Err(Error::format(
                start + i as u64,
                format!("mask value {} is not 0 or 1", payload[i]),
            ));
        }
        Ok(Self {
            spec,
            timestamp,
            values: payload.to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
