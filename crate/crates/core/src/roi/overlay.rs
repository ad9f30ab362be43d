use std::path::Path;

use super::components::RoiBox;
use crate::bytes::write_file;
use crate::data::GridFrame;
use crate::error::{Error, Result};

/// Outline colour of ROI boxes.
pub const BOX_COLOR: [u8; 3] = [255, 0, 0];

const SHADE_ALPHA: f64 = 0.6;

/// What to draw over the grayscale frame.
#[derive(Debug, Clone, Copy)]
pub enum Overlay<'a> {
    None,
    Boxes(&'a [RoiBox]),
    /// Blue (low) to red (high) shading of a probability map.
    Probability(&'a GridFrame),
}

fn gray_levels(frame: &GridFrame) -> Vec<f64> {
    let (lo, hi) = frame
        .values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo) as f64;
    frame
        .values
        .iter()
        .map(|&v| if span > 0.0 { 255.0 * (v - lo) as f64 / span } else { 0.0 })
        .collect()
}

/// Colour ramp of the probability shading.
pub(crate) fn ramp(p: f64) -> [f64; 3] {
    let p = p.clamp(0.0, 1.0);
    [255.0 * p, 0.0, 255.0 * (1.0 - p)]
}

/// Renders a binary PPM (P6) image of `frame` with the chosen overlay.
pub fn render_overlay(frame: &GridFrame, overlay: Overlay<'_>) -> Result<Vec<u8>> {
    let (w, h) = (frame.spec.width, frame.spec.height);
    let gray = gray_levels(frame);
    let mut rgb: Vec<[u8; 3]> = gray.iter().map(|&g| [g.round() as u8; 3]).collect();
    match overlay {
        Overlay::None => {}
        Overlay::Probability(prob) => {
            if prob.spec.width != w || prob.spec.height != h {
                return Err(Error::shape("probability map and frame extents differ"));
            }
            for (i, px) in rgb.iter_mut().enumerate() {
                let c = ramp(prob.values[i] as f64);
                for k in 0..3 {
                    px[k] = ((1.0 - SHADE_ALPHA) * gray[i] + SHADE_ALPHA * c[k]).round() as u8;
                }
            }
        }
        Overlay::Boxes(rois) => {
            for r in rois {
                if r.row_max >= h || r.col_min >= w || r.col_max >= w {
                    return Err(Error::shape("ROI lies outside the frame"));
                }
                for cols in r.col_ranges(w) {
                    for c in cols.clone() {
                        rgb[r.row_min * w + c] = BOX_COLOR;
                        rgb[r.row_max * w + c] = BOX_COLOR;
                    }
                }
                for row in r.row_min..=r.row_max {
                    rgb[row * w + r.col_min] = BOX_COLOR;
                    rgb[row * w + r.col_max] = BOX_COLOR;
                }
            }
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    for px in rgb {
        out.extend_from_slice(&px);
    }
    Ok(out)
}

pub fn write_overlay(path: &Path, frame: &GridFrame, overlay: Overlay<'_>) -> Result<()> {
    write_file(path, &render_overlay(frame, overlay)?)
}
