//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use stormseg::data::{CycloneRecord, GridSpec};
use stormseg::loss::{self, PixelPrediction};
use stormseg::nn::{self, BatchNormParams, Conv2dParams, Mode};
use stormseg::{Result, Rng, Tensor};

pub type T64 = Tensor<f64>;
pub type Build = Box<dyn Fn(&[T64]) -> Result<T64>>;

pub fn rand_vec(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(lo, hi)).collect()
}

/// Values whose pairwise gaps are at least 0.05, so max-type ops keep their
/// argmax under finite-difference perturbations.
pub fn distinct_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05).collect();
    rng.shuffle(&mut v);
    v.iter().map(|x| x + rng.uniform_range(0.0, 0.02)).collect()
}

/// Values bounded away from zero by `gap`.
pub fn away_from_zero(rng: &mut Rng, n: usize, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.uniform_range(gap, 1.5);
            if rng.uniform() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect()
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// One gradient-check instance: inputs and a function of them.
pub struct GradCase {
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    /// Inputs that are not differentiated (e.g. masks).
    pub constant: Vec<bool>,
    pub f: Build,
}

impl GradCase {
    pub fn new(inputs: Vec<(Vec<usize>, Vec<f64>)>, f: Build) -> Self {
        let constant = vec![false; inputs.len()];
        Self { inputs, constant, f }
    }

    pub fn with_constant(mut self, index: usize) -> Self {
        self.constant[index] = true;
        self
    }
}

/// Relative error used throughout: `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Largest relative error between reverse-mode gradients of
/// `sum(f(inputs) * r)` (random `r`) and central differences with step
/// `1e-5`.
pub fn grad_error(case: &GradCase, seed: u64) -> f64 {
    let h = 1e-5;
    let leaves: Vec<T64> = case
        .inputs
        .iter()
        .zip(&case.constant)
        .map(|((s, d), &c)| {
            if c {
                T64::from_vec(s, d.clone()).unwrap()
            } else {
                T64::param(s, d.clone()).unwrap()
            }
        })
        .collect();
    let out = (case.f)(&leaves).expect("forward");
    let mut rng = Rng::new(seed ^ 0x5eed);
    let r = rand_vec(&mut rng, out.numel(), -1.0, 1.0);
    let weights = T64::from_vec(out.shape(), r.clone()).unwrap();
    out.mul(&weights).unwrap().sum_all().backward().unwrap();

    let objective = |inputs: &[(Vec<usize>, Vec<f64>)]| -> f64 {
        let ts: Vec<T64> = inputs
            .iter()
            .map(|(s, d)| T64::from_vec(s, d.clone()).unwrap())
            .collect();
        let o = (case.f)(&ts).expect("forward");
        o.data().iter().zip(&r).map(|(a, b)| a * b).sum()
    };

    let mut worst: f64 = 0.0;
    for (i, leaf) in leaves.iter().enumerate() {
        if case.constant[i] {
            continue;
        }
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for j in 0..leaf.numel() {
            let mut plus = case.inputs.clone();
            plus[i].1[j] += h;
            let mut minus = case.inputs.clone();
            minus[i].1[j] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Every differentiable operation and loss covered by the gradient suite.
pub const GRAD_OPS: &[&str] = &[
    "add", "sub", "mul", "div", "pow", "add_scalar", "sub_scalar", "mul_scalar", "div_scalar", "pow_scalar",
    "rsub_scalar", "log", "exp", "neg", "relu", "sigmoid", "clamp", "sum", "mean", "max", "reshape", "conv2d",
    "upconv2d", "maxpool2d", "batchnorm", "batchnorm_eval", "concat_channels", "slice_channels", "pad_reflect",
    "crop", "dropout", "gaussian_noise", "bce_loss", "focal_loss", "dice_loss", "tversky_loss",
    "dice_coefficient", "tversky_coefficient",
];

fn small_shape(rng: &mut Rng) -> Vec<usize> {
    match rng.below(3) {
        0 => vec![2 + rng.below(5)],
        1 => vec![1 + rng.below(3), 1 + rng.below(4)],
        _ => vec![1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3)],
    }
}

fn nchw(rng: &mut Rng, max_c: usize, min_hw: usize, max_hw: usize) -> Vec<usize> {
    vec![
        1 + rng.below(2),
        1 + rng.below(max_c),
        min_hw + rng.below(max_hw - min_hw + 1),
        min_hw + rng.below(max_hw - min_hw + 1),
    ]
}

fn unary_case(rng: &mut Rng, data: impl Fn(&mut Rng, usize) -> Vec<f64>, f: Build) -> GradCase {
    let s = small_shape(rng);
    let d = data(rng, numel(&s));
    GradCase::new(vec![(s, d)], f)
}

fn binary_case(rng: &mut Rng, a: (f64, f64), b: (f64, f64), f: Build) -> GradCase {
    let s = small_shape(rng);
    let n = numel(&s);
    let da = rand_vec(rng, n, a.0, a.1);
    let db = rand_vec(rng, n, b.0, b.1);
    GradCase::new(vec![(s.clone(), da), (s, db)], f)
}

fn loss_case(rng: &mut Rng, f: Build) -> GradCase {
    let s = nchw(rng, 1, 2, 5);
    let n = numel(&s);
    let p = rand_vec(rng, n, 0.05, 0.95);
    let y: Vec<f64> = (0..n).map(|_| if rng.uniform() < 0.3 { 1.0 } else { 0.0 }).collect();
    GradCase::new(vec![(s.clone(), p), (s, y)], f).with_constant(1)
}

fn pred(t: &[T64]) -> Result<PixelPrediction<'_, f64>> {
    PixelPrediction::new(&t[0], &t[1])
}

/// A random instance of `op`.
pub fn grad_case(op: &str, rng: &mut Rng) -> GradCase {
    let s_val = rng.uniform_range(0.5, 2.0);
    match op {
        "add" => binary_case(rng, (-2.0, 2.0), (-2.0, 2.0), Box::new(|t| t[0].add(&t[1]))),
        "sub" => binary_case(rng, (-2.0, 2.0), (-2.0, 2.0), Box::new(|t| t[0].sub(&t[1]))),
        "mul" => binary_case(rng, (-2.0, 2.0), (-2.0, 2.0), Box::new(|t| t[0].mul(&t[1]))),
        "div" => binary_case(rng, (-2.0, 2.0), (0.5, 2.0), Box::new(|t| t[0].div(&t[1]))),
        "pow" => binary_case(rng, (0.3, 2.0), (-1.5, 2.5), Box::new(|t| t[0].pow(&t[1]))),
        "add_scalar" => unary_case(rng, |r, n| rand_vec(r, n, -2.0, 2.0), Box::new(move |t| Ok(t[0].add_scalar(s_val)))),
        "sub_scalar" => unary_case(rng, |r, n| rand_vec(r, n, -2.0, 2.0), Box::new(move |t| Ok(t[0].sub_scalar(s_val)))),
        "mul_scalar" => unary_case(rng, |r, n| rand_vec(r, n, -2.0, 2.0), Box::new(move |t| Ok(t[0].mul_scalar(s_val)))),
        "div_scalar" => unary_case(rng, |r, n| rand_vec(r, n, -2.0, 2.0), Box::new(move |t| Ok(t[0].div_scalar(s_val)))),
        "pow_scalar" => unary_case(rng, |r, n| rand_vec(r, n, 0.3, 2.0), Box::new(move |t| Ok(t[0].pow_scalar(s_val + 0.25)))),
        "rsub_scalar" => unary_case(rng, |r, n| rand_vec(r, n, -2.0, 2.0), Box::new(move |t| Ok(t[0].rsub_scalar(s_val)))),
        "log" => unary_case(rng, |r, n| rand_vec(r, n, 0.2, 3.0), Box::new(|t| t[0].try_log())),
        "exp" => unary_case(rng, |r, n| rand_vec(r, n, -2.0, 2.0), Box::new(|t| Ok(t[0].exp()))),
        "neg" => unary_case(rng, |r, n| rand_vec(r, n, -2.0, 2.0), Box::new(|t| Ok(t[0].neg()))),
        "relu" => unary_case(rng, |r, n| away_from_zero(r, n, 0.01), Box::new(|t| Ok(t[0].relu()))),
        "sigmoid" => unary_case(rng, |r, n| rand_vec(r, n, -4.0, 4.0), Box::new(|t| Ok(t[0].sigmoid()))),
        "clamp" => unary_case(
            rng,
            |r, n| {
                rand_vec(r, n, -2.0, 2.0)
                    .into_iter()
                    .map(|v| if (v.abs() - 1.0).abs() < 0.01 { v * 1.05 } else { v })
                    .collect()
            },
            Box::new(|t| Ok(t[0].clamp(-1.0, 1.0))),
        ),
        "sum" | "mean" | "max" => {
            let s = vec![1 + rng.below(3), 2 + rng.below(3), 1 + rng.below(3)];
            let d = distinct_vec(rng, numel(&s));
            let axes: Vec<usize> = match rng.below(4) {
                0 => vec![0],
                1 => vec![1],
                2 => vec![0, 2],
                _ => vec![0, 1, 2],
            };
            let name = op.to_string();
            GradCase::new(
                vec![(s, d)],
                Box::new(move |t| match name.as_str() {
                    "sum" => t[0].sum(&axes),
                    "mean" => t[0].mean(&axes),
                    _ => t[0].max(&axes),
                }),
            )
        }
        "reshape" => {
            let s = vec![2, 3, 2];
            let d = rand_vec(rng, 12, -1.0, 1.0);
            GradCase::new(vec![(s, d)], Box::new(|t| t[0].reshape(&[4, 3])?.exp().reshape(&[12])))
        }
        "conv2d" => {
            let stride = 1 + rng.below(2);
            let pad = rng.below(2);
            let k = 1 + rng.below(3);
            let mut xs = nchw(rng, 2, 3, 5);
            xs[2] = xs[2].max(k);
            xs[3] = xs[3].max(k);
            let c_out = 1 + rng.below(2);
            let ws = vec![c_out, xs[1], k, k];
            let (x, w, b) = (
                rand_vec(rng, numel(&xs), -1.0, 1.0),
                rand_vec(rng, numel(&ws), -1.0, 1.0),
                rand_vec(rng, c_out, -1.0, 1.0),
            );
            GradCase::new(
                vec![(xs, x), (ws, w), (vec![c_out], b)],
                Box::new(move |t| nn::conv2d(&t[0], &Conv2dParams::new(t[1].clone(), t[2].clone(), stride, pad)?)),
            )
        }
        "upconv2d" => {
            let stride = 1 + rng.below(2);
            let k = 1 + rng.below(3);
            let pad = if k > 1 { rng.below(2) } else { 0 };
            let xs = nchw(rng, 2, 2, 4);
            let c_out = 1 + rng.below(2);
            let ws = vec![xs[1], c_out, k, k];
            let (x, w, b) = (
                rand_vec(rng, numel(&xs), -1.0, 1.0),
                rand_vec(rng, numel(&ws), -1.0, 1.0),
                rand_vec(rng, c_out, -1.0, 1.0),
            );
            GradCase::new(
                vec![(xs, x), (ws, w), (vec![c_out], b)],
                Box::new(move |t| nn::upconv2d(&t[0], &Conv2dParams::new(t[1].clone(), t[2].clone(), stride, pad)?)),
            )
        }
        "maxpool2d" => {
            let win = 1 + rng.below(2);
            let xs = vec![1 + rng.below(2), 1 + rng.below(2), win * (1 + rng.below(3)), win * (1 + rng.below(3))];
            let d = distinct_vec(rng, numel(&xs));
            GradCase::new(vec![(xs, d)], Box::new(move |t| nn::maxpool2d(&t[0], win)))
        }
        "batchnorm" | "batchnorm_eval" => {
            let mut xs = nchw(rng, 3, 2, 3);
            xs[0] = 2;
            let c = xs[1];
            let x = rand_vec(rng, numel(&xs), -2.0, 2.0);
            let scale = rand_vec(rng, c, 0.5, 1.5);
            let shift = rand_vec(rng, c, -0.5, 0.5);
            let mean = rand_vec(rng, c, -0.5, 0.5);
            let var = rand_vec(rng, c, 0.5, 2.0);
            let mode = if op == "batchnorm" { Mode::Train } else { Mode::Eval };
            GradCase::new(
                vec![(xs, x), (vec![c], scale), (vec![c], shift)],
                Box::new(move |t| {
                    let mut p = BatchNormParams::new(c, 0.9, 1e-5)?;
                    p.scale = t[1].clone();
                    p.shift = t[2].clone();
                    p.running_mean = mean.clone();
                    p.running_var = var.clone();
                    nn::batchnorm(&t[0], &mut p, mode)
                }),
            )
        }
        "concat_channels" => {
            let mut a = nchw(rng, 2, 1, 3);
            let mut b = a.clone();
            b[1] = 1 + rng.below(3);
            a[1] = 1 + rng.below(2);
            let (da, db) = (rand_vec(rng, numel(&a), -1.0, 1.0), rand_vec(rng, numel(&b), -1.0, 1.0));
            GradCase::new(
                vec![(a, da), (b, db)],
                Box::new(|t| Ok(nn::concat_channels(&t[0], &t[1])?.sigmoid())),
            )
        }
        "slice_channels" => {
            let mut xs = nchw(rng, 1, 1, 3);
            xs[1] = 2 + rng.below(3);
            let start = rng.below(xs[1] - 1);
            let len = 1 + rng.below(xs[1] - start);
            let d = rand_vec(rng, numel(&xs), -1.0, 1.0);
            GradCase::new(vec![(xs, d)], Box::new(move |t| nn::slice_channels(&t[0], start, len)))
        }
        "pad_reflect" => {
            let xs = nchw(rng, 2, 2, 4);
            let (nh, nw) = (xs[2] + rng.below(xs[2]), xs[3] + rng.below(xs[3]));
            let d = rand_vec(rng, numel(&xs), -1.0, 1.0);
            GradCase::new(vec![(xs, d)], Box::new(move |t| nn::pad_reflect(&t[0], nh, nw)))
        }
        "crop" => {
            let xs = nchw(rng, 2, 2, 5);
            let (ch, cw) = (1 + rng.below(xs[2]), 1 + rng.below(xs[3]));
            let d = rand_vec(rng, numel(&xs), -1.0, 1.0);
            GradCase::new(vec![(xs, d)], Box::new(move |t| nn::crop(&t[0], ch, cw)))
        }
        "dropout" | "gaussian_noise" => {
            let s = nchw(rng, 2, 2, 4);
            let d = rand_vec(rng, numel(&s), -1.0, 1.0);
            let seed = rng.next_u64();
            let dropout = op == "dropout";
            GradCase::new(
                vec![(s, d)],
                Box::new(move |t| {
                    let mut r = Rng::new(seed);
                    if dropout {
                        nn::dropout(&t[0], 0.3, &mut r, Mode::Train)
                    } else {
                        nn::gaussian_noise(&t[0], 0.2, &mut r, Mode::Train)
                    }
                }),
            )
        }
        "bce_loss" => loss_case(rng, Box::new(|t| loss::bce_loss(&pred(t)?))),
        "focal_loss" => {
            let gamma = rng.uniform_range(0.0, 3.0);
            loss_case(rng, Box::new(move |t| loss::focal_loss(&pred(t)?, gamma)))
        }
        "dice_loss" => loss_case(rng, Box::new(|t| loss::dice_loss(&pred(t)?, 1e-6))),
        "dice_coefficient" => loss_case(rng, Box::new(|t| loss::dice_coefficient(&pred(t)?, 1e-6))),
        "tversky_loss" | "tversky_coefficient" => {
            let alpha = rng.uniform_range(0.1, 0.9);
            let beta = rng.uniform_range(0.1, 0.9);
            let coefficient = op == "tversky_coefficient";
            loss_case(
                rng,
                Box::new(move |t| {
                    if coefficient {
                        loss::tversky_coefficient(&pred(t)?, alpha, beta, 1e-6)
                    } else {
                        loss::tversky_loss(&pred(t)?, alpha, beta, 1e-6)
                    }
                }),
            )
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// Worst relative error of `op` over `instances` random instances.
pub fn grad_suite(op: &str, instances: usize) -> f64 {
    let mut rng = Rng::new(0x9a7d ^ op.len() as u64 ^ op.bytes().map(u64::from).sum::<u64>());
    (0..instances)
        .map(|i| grad_error(&grad_case(op, &mut rng), i as u64))
        .fold(0.0, f64::max)
}

fn at4(s: &[usize], n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * s[1] + c) * s[2] + y) * s[3] + x
}

/// Direct-summation cross-correlation with zero padding.
pub fn conv2d_direct(
    x: &[f64],
    xs: &[usize],
    w: &[f64],
    ws: &[usize],
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<usize>, Vec<f64>) {
    let (kh, kw) = (ws[2], ws[3]);
    let ho = (xs[2] + 2 * pad - kh) / stride + 1;
    let wo = (xs[3] + 2 * pad - kw) / stride + 1;
    let os = vec![xs[0], ws[0], ho, wo];
    let mut out = vec![0.0; numel(&os)];
    for n in 0..xs[0] {
        for o in 0..ws[0] {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[o];
                    for c in 0..xs[1] {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * stride + i) as isize - pad as isize;
                                let ix = (ox * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xs[2] as isize || ix >= xs[3] as isize {
                                    continue;
                                }
                                acc += x[at4(xs, n, c, iy as usize, ix as usize)] * w[at4(ws, o, c, i, j)];
                            }
                        }
                    }
                    out[at4(&os, n, o, oy, ox)] = acc;
                }
            }
        }
    }
    (os, out)
}

/// Direct scatter form of the transposed convolution; `w` is `[in, out, kh, kw]`.
pub fn upconv2d_direct(
    x: &[f64],
    xs: &[usize],
    w: &[f64],
    ws: &[usize],
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<usize>, Vec<f64>) {
    let (kh, kw) = (ws[2], ws[3]);
    let ho = (xs[2] - 1) * stride + kh - 2 * pad;
    let wo = (xs[3] - 1) * stride + kw - 2 * pad;
    let os = vec![xs[0], ws[1], ho, wo];
    let mut out = vec![0.0; numel(&os)];
    for n in 0..xs[0] {
        for o in 0..ws[1] {
            for y in 0..ho {
                for x_ in 0..wo {
                    out[at4(&os, n, o, y, x_)] = b[o];
                }
            }
        }
        for c in 0..xs[1] {
            for iy in 0..xs[2] {
                for ix in 0..xs[3] {
                    let v = x[at4(xs, n, c, iy, ix)];
                    for o in 0..ws[1] {
                        for i in 0..kh {
                            for j in 0..kw {
                                let oy = (iy * stride + i) as isize - pad as isize;
                                let ox = (ix * stride + j) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                    continue;
                                }
                                out[at4(&os, n, o, oy as usize, ox as usize)] += v * w[at4(ws, c, o, i, j)];
                            }
                        }
                    }
                }
            }
        }
    }
    (os, out)
}

/// 4-connected components of the nonzero cells, by flood fill. On cyclic
/// grids the first and last columns touch.
pub fn components(mask: &[u8], width: usize, height: usize, cyclic: bool) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if mask[start] == 0 || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (r, c) = (i / width, i % width);
            comp.push((r, c));
            let mut nbrs = Vec::with_capacity(4);
            if r > 0 {
                nbrs.push(i - width);
            }
            if r + 1 < height {
                nbrs.push(i + width);
            }
            if c > 0 {
                nbrs.push(i - 1);
            } else if cyclic && width > 1 {
                nbrs.push(r * width + width - 1);
            }
            if c + 1 < width {
                nbrs.push(i + 1);
            } else if cyclic && width > 1 {
                nbrs.push(r * width);
            }
            for j in nbrs {
                if mask[j] != 0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Per-pixel recount of a box rasterization: a pixel is set when some kept
/// record's centre pixel lies within the box offsets of it.
pub fn rasterize_recount(records: &[CycloneRecord], spec: &GridSpec, box_size: usize, wind_min: Option<f64>) -> Vec<u8> {
    let lo = -((box_size / 2) as i64);
    let hi = lo + box_size as i64 - 1;
    let centres: Vec<(i64, i64)> = records
        .iter()
        .filter(|r| match wind_min {
            Some(m) => r.wind_kt.is_some_and(|w| w >= m),
            None => true,
        })
        .filter_map(|r| spec.latlon_to_pixel(r.lat, r.lon))
        .map(|(r, c)| (r as i64, c as i64))
        .collect();
    let w = spec.width as i64;
    let mut out = vec![0u8; spec.len()];
    for row in 0..spec.height as i64 {
        for col in 0..w {
            let hit = centres.iter().any(|&(cr, cc)| {
                let dr = row - cr;
                if dr < lo || dr > hi {
                    return false;
                }
                if spec.cyclic_longitude {
                    (lo..=hi).any(|dc| (cc + dc).rem_euclid(w) == col)
                } else {
                    let dc = col - cc;
                    dc >= lo && dc <= hi
                }
            });
            if hit {
                out[(row * w + col) as usize] = 1;
            }
        }
    }
    out
}
