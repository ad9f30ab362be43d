mod common;

use common::{conv2d_direct, numel, rand_vec, upconv2d_direct};
use stormseg::nn::{conv2d, upconv2d, Conv2dParams};
use stormseg::{Rng, Tensor};

const CASES: usize = 40;

struct ConvShape {
    xs: Vec<usize>,
    ws: Vec<usize>,
    stride: usize,
    pad: usize,
}

/// Random shapes up to 2 x 8 x 16 x 16 with kernels 1 to 3.
fn conv_shape(rng: &mut Rng) -> ConvShape {
    let k = 1 + rng.below(3);
    let stride = 1 + rng.below(2);
    let pad = rng.below(k.min(2));
    let xs = vec![1 + rng.below(2), 1 + rng.below(8), k + rng.below(17 - k), k + rng.below(17 - k)];
    let ws = vec![1 + rng.below(8), xs[1], k, k];
    ConvShape { xs, ws, stride, pad }
}

fn f32s(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

fn weights(rng: &mut Rng, ws: &[usize], fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    rand_vec(rng, numel(ws), -bound, bound)
}

#[test]
fn conv2d_matches_direct_summation() {
    let mut rng = Rng::new(21);
    for _ in 0..CASES {
        let s = conv_shape(&mut rng);
        let x = rand_vec(&mut rng, numel(&s.xs), -1.0, 1.0);
        let w = weights(&mut rng, &s.ws, s.ws[1] * s.ws[2] * s.ws[3]);
        let b = rand_vec(&mut rng, s.ws[0], -0.5, 0.5);
        let (os, expect) = conv2d_direct(&x, &s.xs, &w, &s.ws, &b, s.stride, s.pad);
        let p = Conv2dParams::new(
            Tensor::from_vec(&s.ws, f32s(&w)).unwrap(),
            Tensor::from_vec(&[s.ws[0]], f32s(&b)).unwrap(),
            s.stride,
            s.pad,
        )
        .unwrap();
        let y = conv2d(&Tensor::from_vec(&s.xs, f32s(&x)).unwrap(), &p).unwrap();
        assert_eq!(y.shape(), os.as_slice());
        let d = max_abs_diff(y.data(), &expect);
        assert!(d <= 1e-5, "x {:?} w {:?} stride {} pad {}: {d:e}", s.xs, s.ws, s.stride, s.pad);
    }
}

#[test]
fn upconv2d_matches_direct_scatter() {
    let mut rng = Rng::new(22);
    for _ in 0..CASES {
        let k = 1 + rng.below(3);
        let stride = 1 + rng.below(2);
        let pad = if k > 1 { rng.below(2) } else { 0 };
        let xs = vec![1 + rng.below(2), 1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8)];
        let ws = vec![xs[1], 1 + rng.below(8), k, k];
        if (xs[2] - 1) * stride + k <= 2 * pad || (xs[3] - 1) * stride + k <= 2 * pad {
            continue;
        }
        let x = rand_vec(&mut rng, numel(&xs), -1.0, 1.0);
        let w = weights(&mut rng, &ws, ws[0] * k * k);
        let b = rand_vec(&mut rng, ws[1], -0.5, 0.5);
        let (os, expect) = upconv2d_direct(&x, &xs, &w, &ws, &b, stride, pad);
        let p = Conv2dParams::new(
            Tensor::from_vec(&ws, f32s(&w)).unwrap(),
            Tensor::from_vec(&[ws[1]], f32s(&b)).unwrap(),
            stride,
            pad,
        )
        .unwrap();
        let y = upconv2d(&Tensor::from_vec(&xs, f32s(&x)).unwrap(), &p).unwrap();
        assert_eq!(y.shape(), os.as_slice());
        let d = max_abs_diff(y.data(), &expect);
        assert!(d <= 1e-5, "x {xs:?} w {ws:?} stride {stride} pad {pad}: {d:e}");
    }
}

#[test]
fn decoder_upconvolution_doubles_extents() {
    let p = Conv2dParams::new(Tensor::<f32>::ones(&[4, 2, 2, 2]), Tensor::zeros(&[2]), 2, 0).unwrap();
    let y = upconv2d(&Tensor::<f32>::ones(&[1, 4, 5, 7]), &p).unwrap();
    assert_eq!(y.shape(), &[1, 2, 10, 14]);
    assert!(y.data().iter().all(|&v| v == 4.0));
}

/// `<conv(x; W), y> == <x, upconv(y; W)>` with zero biases.
#[test]
fn upconv_is_the_adjoint_of_conv() {
    let mut rng = Rng::new(23);
    for _ in 0..CASES {
        let k = 1 + rng.below(3);
        let stride = 1 + rng.below(2);
        let pad = rng.below(k.min(2));
        let (n, c, o) = (1 + rng.below(2), 1 + rng.below(8), 1 + rng.below(8));
        let (ho, wo) = (1 + rng.below(8), 1 + rng.below(8));
        let h = (ho - 1) * stride + k - 2 * pad;
        let w = (wo - 1) * stride + k - 2 * pad;
        if h == 0 || w == 0 || h > 16 || w > 16 || (ho - 1) * stride + k <= 2 * pad {
            continue;
        }
        let xs = [n, c, h, w];
        let ys = [n, o, ho, wo];
        let ws = [o, c, k, k];
        let x = f32s(&rand_vec(&mut rng, numel(&xs), -1.0, 1.0));
        let y = f32s(&rand_vec(&mut rng, numel(&ys), -1.0, 1.0));
        let wt = f32s(&weights(&mut rng, &ws, c * k * k));
        let weight = Tensor::from_vec(&ws, wt).unwrap();
        let fwd = Conv2dParams::new(weight.clone(), Tensor::zeros(&[o]), stride, pad).unwrap();
        let adj = Conv2dParams::new(weight, Tensor::zeros(&[c]), stride, pad).unwrap();
        let cx = conv2d(&Tensor::from_vec(&xs, x.clone()).unwrap(), &fwd).unwrap();
        assert_eq!(cx.shape(), &ys);
        let ty = upconv2d(&Tensor::from_vec(&ys, y.clone()).unwrap(), &adj).unwrap();
        assert_eq!(ty.shape(), &xs);
        let lhs: f64 = cx.data().iter().zip(&y).map(|(&a, &b)| a as f64 * b as f64).sum();
        let rhs: f64 = x.iter().zip(ty.data()).map(|(&a, &b)| a as f64 * b as f64).sum();
        let scale: f64 = cx.data().iter().zip(&y).map(|(&a, &b)| (a as f64 * b as f64).abs()).sum();
        let rel = (lhs - rhs).abs() / scale.max(1e-12);
        assert!(rel <= 1e-5, "x {xs:?} w {ws:?} stride {stride} pad {pad}: {lhs} vs {rhs}");
    }
}
