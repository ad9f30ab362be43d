use std::f64::consts::PI;

use chrono::{DateTime, Duration, TimeZone, Utc};

use super::grid::{GridFrame, GridSpec};
use super::labels::{CycloneRecord, LabelTable};
use super::sample::{build_samples, stack_temporal, Sample};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Knobs for the synthetic cyclone scene generator. Distances are in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    /// Valid time of the oldest frame.
    pub start: DateTime<Utc>,
    pub cadence: Duration,
    pub background_terms: usize,
    pub background_amplitude: f64,
    pub pixel_noise: f64,
    pub band_amplitude: f64,
    pub band_width: f64,
    pub band_clumps: usize,
    pub clump_amplitude: f64,
    pub vortex_amplitude: (f64, f64),
    pub vortex_sigma: (f64, f64),
    /// Largest per-step displacement along each axis.
    pub drift: f64,
    /// Vortex centres keep at least this far from the grid edge.
    pub margin: f64,
    pub min_separation: f64,
    /// Range of cyclones per scene used by [`synth_dataset`].
    pub cyclones: (usize, usize),
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            start: Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap(),
            cadence: Duration::hours(3),
            background_terms: 6,
            background_amplitude: 0.04,
            pixel_noise: 0.01,
            band_amplitude: 0.5,
            band_width: 4.0,
            band_clumps: 5,
            clump_amplitude: 0.25,
            vortex_amplitude: (1.0, 1.2),
            vortex_sigma: (3.0, 5.0),
            drift: 1.5,
            margin: 10.0,
            min_separation: 24.0,
            cyclones: (1, 3),
        }
    }
}

impl SynthParams {
    /// The default 128 x 128 regional grid used for desk-scale experiments.
    pub fn default_grid() -> GridSpec {
        GridSpec::regional(128, 128, 40.0, 120.0, -0.5, 0.5)
    }
}

/// Three frames (oldest first) and the vortex centres at each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub frames: [GridFrame; 3],
    pub labels: LabelTable,
}

impl SynthScene {
    /// Stacks the frames and rasterizes the labels at the newest time.
    pub fn to_sample(&self, box_size: usize, wind_min: Option<f64>) -> Result<Sample> {
        let cadence = self.frames[1].timestamp - self.frames[0].timestamp;
        let stacks = stack_temporal(&self.frames, cadence)?;
        let mut samples = build_samples(stacks, &self.labels, box_size, wind_min)?;
        samples
            .pop()
            .ok_or_else(|| Error::contract("scene frames are not on a regular cadence"))
    }
}

struct Vortex {
    row: f64,
    col: f64,
    drift: (f64, f64),
    amplitude: f64,
    sigma_major: f64,
    sigma_minor: f64,
    angle: f64,
    wind: f64,
}

struct Wave {
    ky: f64,
    kx: f64,
    phase: f64,
}

fn place_vortices(rng: &mut Rng, spec: &GridSpec, n: usize, params: &SynthParams) -> Vec<Vortex> {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let lo = params.margin + 2.0 * params.drift;
    let mut placed: Vec<Vortex> = Vec::with_capacity(n);
    let mut attempts = 0;
    while placed.len() < n {
        let row = rng.uniform_range(lo, (h - 1.0 - lo).max(lo));
        let col = rng.uniform_range(lo, (w - 1.0 - lo).max(lo));
        attempts += 1;
        let clear = placed
            .iter()
            .all(|v| ((v.row - row).powi(2) + (v.col - col).powi(2)).sqrt() >= params.min_separation);
        if !clear && attempts < 1000 {
            continue;
        }
        let s1 = rng.uniform_range(params.vortex_sigma.0, params.vortex_sigma.1);
        let s2 = rng.uniform_range(params.vortex_sigma.0, params.vortex_sigma.1);
        placed.push(Vortex {
            row,
            col,
            drift: (
                rng.uniform_range(-params.drift, params.drift),
                rng.uniform_range(-params.drift, params.drift),
            ),
            amplitude: rng.uniform_range(params.vortex_amplitude.0, params.vortex_amplitude.1),
            sigma_major: s1.max(s2),
            sigma_minor: s1.min(s2),
            angle: rng.uniform_range(0.0, PI),
            wind: rng.uniform_range(35.0, 130.0).round(),
        });
    }
    placed
}

/// Generates one scene: smooth background waves, a bright meandering band
/// with clumps, and `n_cyclones` drifting anisotropic Gaussian vortices.
pub fn synth_scene(rng: &mut Rng, spec: &GridSpec, n_cyclones: usize, params: &SynthParams) -> Result<SynthScene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let waves: Vec<Wave> = (0..params.background_terms)
        .map(|_| Wave {
            ky: rng.uniform_range(0.5, 3.0) * 2.0 * PI / h as f64,
            kx: rng.uniform_range(0.5, 3.0) * 2.0 * PI / w as f64,
            phase: rng.uniform_range(0.0, 2.0 * PI),
        })
        .collect();
    let band_row = rng.uniform_range(0.25, 0.75) * h as f64;
    let band_meander = rng.uniform_range(2.0, 6.0);
    let band_period = rng.uniform_range(0.5, 1.5) * w as f64;
    let band_phase = rng.uniform_range(0.0, 2.0 * PI);
    let clumps: Vec<(f64, f64)> = (0..params.band_clumps)
        .map(|_| (rng.uniform_range(0.0, w as f64), rng.uniform_range(2.0, 4.0)))
        .collect();
    let vortices = place_vortices(rng, spec, n_cyclones, params);

    let mut frames = Vec::with_capacity(3);
    let mut records = Vec::with_capacity(3 * n_cyclones);
    for step in 0..3 {
        let timestamp = params.start + params.cadence * step;
        let back = (2 - step) as f64;
        let centres: Vec<(f64, f64)> = vortices
            .iter()
            .map(|v| (v.row - back * v.drift.0, v.col - back * v.drift.1))
            .collect();
        let mut values = Vec::with_capacity(h * w);
        for r in 0..h {
            let y = r as f64;
            for c in 0..w {
                let x = c as f64;
                let mut v = 0.0;
                for wv in &waves {
                    v += params.background_amplitude * (wv.ky * y + wv.kx * x + wv.phase).cos();
                }
                let centre = band_row + band_meander * (2.0 * PI * x / band_period + band_phase).sin();
                let d = (y - centre) / params.band_width;
                let mut band = params.band_amplitude * (-0.5 * d * d).exp();
                for &(cx, sigma) in &clumps {
                    let dx = (x - cx) / sigma;
                    band += params.clump_amplitude * (-0.5 * (dx * dx + d * d)).exp();
                }
                v += band;
                for (vx, &(cr, cc)) in vortices.iter().zip(&centres) {
                    let (dy, dx) = (y - cr, x - cc);
                    let (s, co) = vx.angle.sin_cos();
                    let a = (dx * co + dy * s) / vx.sigma_major;
                    let b = (-dx * s + dy * co) / vx.sigma_minor;
                    v += vx.amplitude * (-0.5 * (a * a + b * b)).exp();
                }
                v += params.pixel_noise * rng.normal();
                values.push(v as f32);
            }
        }
        frames.push(GridFrame::new(*spec, timestamp, values)?);
        for (vx, &(cr, cc)) in vortices.iter().zip(&centres) {
            let lat = spec.lat0 + cr * spec.dlat;
            let lon = spec.lon0 + cc * spec.dlon;
            records.push(CycloneRecord::new(timestamp, lat, lon, Some(vx.wind))?);
        }
    }
    let frames: [GridFrame; 3] = frames.try_into().expect("three frames");
    Ok(SynthScene {
        frames,
        labels: LabelTable::new(records),
    })
}

/// Generates `count` scenes per listed year. Scene `k` of a year starts at
/// January 1 plus `12 k` hours, so scenes never stack into each other.
pub fn synth_dataset(
    rng: &mut Rng,
    spec: &GridSpec,
    years: &[(i32, usize)],
    params: &SynthParams,
) -> Result<Vec<SynthScene>> {
    let (lo, hi) = params.cyclones;
    if lo > hi {
        return Err(Error::parameter("cyclone range is empty"));
    }
    let mut scenes = Vec::new();
    for &(year, count) in years {
        let jan1 = Utc
            .with_ymd_and_hms(year, 1, 1, 0, 0, 0)
            .single()
            .ok_or_else(|| Error::parameter(format!("invalid year {year}")))?;
        for k in 0..count {
            let p = SynthParams {
                start: jan1 + Duration::hours(12 * k as i64),
                ..params.clone()
            };
            let n = lo + rng.below(hi - lo + 1);
            scenes.push(synth_scene(rng, spec, n, &p)?);
        }
    }
    Ok(scenes)
}
