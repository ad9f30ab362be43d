use super::grid::{GridFrame, GridSpec};
use crate::error::{Error, Result};

/// Bilinear resize with corner alignment: the four corner pixel centres of
/// the source and target coincide, and the grid steps are rescaled to match.
pub fn resample_bilinear(frame: &GridFrame, new_width: usize, new_height: usize) -> Result<GridFrame> {
    if new_width < 2 || new_height < 2 {
        return Err(Error::parameter("resample target extents must be at least 2"));
    }
    let src = frame.spec;
    if new_width == src.width && new_height == src.height {
        return Ok(frame.clone());
    }
    let scale = |from: usize, to: usize| {
        if from < 2 {
            0.0
        } else {
            (from - 1) as f64 / (to - 1) as f64
        }
    };
    let sy = scale(src.height, new_height);
    let sx = scale(src.width, new_width);
    let mut values = Vec::with_capacity(new_width * new_height);
    for r in 0..new_height {
        let y = r as f64 * sy;
        let y0 = (y.floor() as usize).min(src.height - 1);
        let y1 = (y0 + 1).min(src.height - 1);
        let fy = y - y0 as f64;
        for c in 0..new_width {
            let x = c as f64 * sx;
            let x0 = (x.floor() as usize).min(src.width - 1);
            let x1 = (x0 + 1).min(src.width - 1);
            let fx = x - x0 as f64;
            let top = frame.get(y0, x0) as f64 * (1.0 - fx) + frame.get(y0, x1) as f64 * fx;
            let bottom = frame.get(y1, x0) as f64 * (1.0 - fx) + frame.get(y1, x1) as f64 * fx;
            values.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    let step = |d: f64, from: usize, to: usize| if from < 2 { d } else { d * (from - 1) as f64 / (to - 1) as f64 };
    let dlon = step(src.dlon, src.width, new_width);
    let spec = GridSpec {
        width: new_width,
        height: new_height,
        lat0: src.lat0,
        lon0: src.lon0,
        dlat: step(src.dlat, src.height, new_height),
        dlon,
        cyclic_longitude: src.cyclic_longitude && new_width as f64 * dlon.abs() <= 360.0 + 1e-9,
    };
    GridFrame::new(spec, frame.timestamp, values)
}
