use crate::error::{Error, Result};
use crate::parallel::map_indices;
use crate::rng::Rng;
use crate::tensor::{gemm, Backward, Element, Tensor};

/// Weights of a 2-D convolution.
///
/// For [`conv2d`] the weight is `out_channels x in_channels x kH x kW`. For
/// [`upconv2d`] the same tensor layout is read as the kernel of the
/// convolution being transposed, so the transposed layer maps
/// `weight.shape[0]` channels to `weight.shape[1]` channels.
#[derive(Debug, Clone)]
pub struct Conv2dParams<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> Conv2dParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let [o, _, kh, kw] = *weight.shape() else {
            return Err(Error::shape(format!(
                "conv weight must be rank 4, got {:?}",
                weight.shape()
            )));
        };
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::parameter("kernel extents and stride must be >= 1"));
        }
        if bias.shape() != [o] && bias.shape() != [weight.shape()[1]] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// He-normal initialized convolution with zero bias.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w: Vec<T> = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| T::from_f64_lossy(rng.normal() * std))
            .collect();
        let weight = Tensor::param(&[out_channels, in_channels, kernel, kernel], w).expect("shape");
        let bias = Tensor::param(&[out_channels], vec![T::zero(); out_channels]).expect("shape");
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    /// Initialization for a transposed convolution mapping `in_channels`
    /// to `out_channels`.
    pub fn init_transposed(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64 / (stride * stride) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w: Vec<T> = (0..in_channels * out_channels * kernel * kernel)
            .map(|_| T::from_f64_lossy(rng.normal() * std))
            .collect();
        let weight = Tensor::param(&[in_channels, out_channels, kernel, kernel], w).expect("shape");
        let bias = Tensor::param(&[out_channels], vec![T::zero(); out_channels]).expect("shape");
        Self {
            weight,
            bias,
            stride,
            padding: 0,
        }
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, self)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn out_extent(&self, size: usize, k: usize) -> Option<usize> {
        let padded = size + 2 * self.pad;
        (padded >= k).then(|| (padded - k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds `(c, h, w)` into a `(c*kh*kw) x (ho*wo)` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: Geometry,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let plane = ho * wo;
    let pad = g.pad as isize;
    for ci in 0..c {
        let src_c = &src[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &src_c[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *d = if ix >= 0 && ix < w as isize {
                            srow[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back, summing overlaps.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: Geometry,
    ho: usize,
    wo: usize,
    dst: &mut [T],
) {
    let plane = ho * wo;
    let pad = g.pad as isize;
    for ci in 0..c {
        let dst_c = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst_c[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    for (ox, &v) in srow.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] = drow[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn channel_sums<T: Element>(g: &[T], channels: usize, plane: usize, acc: &mut [T]) {
    for (c, a) in acc.iter_mut().enumerate().take(channels) {
        *a = *a + g[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
    }
}

fn sum_in_order<T: Element>(parts: impl Iterator<Item = Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(&p) {
            *a = *a + *v;
        }
    }
    acc
}

#[derive(Clone, Copy)]
struct ConvShape {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    ho: usize,
    wo: usize,
    geo: Geometry,
}

struct Conv2dBackward(ConvShape);

impl<T: Element> Backward<T> for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let s = self.0;
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let need_x = inputs[0].requires_grad();
        let need_w = inputs[1].requires_grad();
        let ckk = s.c_in * s.geo.kh * s.geo.kw;
        let (in_plane, out_plane) = (s.h * s.w, s.ho * s.wo);

        let parts = map_indices(s.n, |b| {
            let g_b = &grad[b * s.c_out * out_plane..(b + 1) * s.c_out * out_plane];
            let x_b = &x[b * s.c_in * in_plane..(b + 1) * s.c_in * in_plane];
            let cols = if s.geo.is_pointwise() {
                None
            } else {
                let mut cols = vec![T::zero(); ckk * out_plane];
                im2col(x_b, s.c_in, s.h, s.w, s.geo, s.ho, s.wo, &mut cols);
                Some(cols)
            };
            let cols_ref = cols.as_deref().unwrap_or(x_b);
            let gw = need_w.then(|| {
                let mut gw = vec![T::zero(); s.c_out * ckk];
                gemm(false, true, s.c_out, ckk, out_plane, g_b, cols_ref, T::zero(), &mut gw);
                gw
            });
            let gx = need_x.then(|| {
                let mut gx = vec![T::zero(); s.c_in * in_plane];
                if s.geo.is_pointwise() {
                    gemm(true, false, s.c_in, in_plane, s.c_out, w, g_b, T::zero(), &mut gx);
                } else {
                    let mut gcols = vec![T::zero(); ckk * out_plane];
                    gemm(true, false, ckk, out_plane, s.c_out, w, g_b, T::zero(), &mut gcols);
                    col2im(&gcols, s.c_in, s.h, s.w, s.geo, s.ho, s.wo, &mut gx);
                }
                gx
            });
            (gx, gw)
        });

        let mut gx_all = need_x.then(|| Vec::with_capacity(x.len()));
        let mut gw_parts = Vec::new();
        for (gx, gw) in parts {
            if let (Some(all), Some(gx)) = (gx_all.as_mut(), gx) {
                all.extend_from_slice(&gx);
            }
            if let Some(gw) = gw {
                gw_parts.push(gw);
            }
        }
        let gw = need_w.then(|| sum_in_order(gw_parts.into_iter(), w.len()));
        let gb = inputs[2].requires_grad().then(|| {
            let mut acc = vec![T::zero(); s.c_out];
            for b in 0..s.n {
                channel_sums(
                    &grad[b * s.c_out * out_plane..(b + 1) * s.c_out * out_plane],
                    s.c_out,
                    out_plane,
                    &mut acc,
                );
            }
            acc
        });
        vec![gx_all, gw, gb]
    }
}

/// 2-D cross-correlation of an NCHW tensor.
pub fn conv2d<T: Element>(x: &Tensor<T>, p: &Conv2dParams<T>) -> Result<Tensor<T>> {
    let (n, c_in, h, w) = x.dims4("conv2d")?;
    let [c_out, wc_in, kh, kw] = *p.weight.shape() else {
        return Err(Error::shape("conv2d weight must be rank 4"));
    };
    if c_in != wc_in {
        return Err(Error::shape(format!(
            "conv2d: input has {c_in} channels, weight expects {wc_in}"
        )));
    }
    if p.bias.shape() != [c_out] {
        return Err(Error::shape(format!(
            "conv2d: bias shape {:?}, expected [{c_out}]",
            p.bias.shape()
        )));
    }
    let geo = Geometry {
        kh,
        kw,
        stride: p.stride,
        pad: p.padding,
    };
    let (Some(ho), Some(wo)) = (geo.out_extent(h, kh), geo.out_extent(w, kw)) else {
        return Err(Error::shape(format!(
            "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
            h + 2 * p.padding,
            w + 2 * p.padding
        )));
    };
    let shape = ConvShape {
        n,
        c_in,
        h,
        w,
        c_out,
        ho,
        wo,
        geo,
    };
    let (in_plane, out_plane) = (h * w, ho * wo);
    let ckk = c_in * kh * kw;
    let xd = x.data();
    let wd = p.weight.data();
    let bd = p.bias.data();
    let outs = map_indices(n, |b| {
        let x_b = &xd[b * c_in * in_plane..(b + 1) * c_in * in_plane];
        let mut out = vec![T::zero(); c_out * out_plane];
        if geo.is_pointwise() {
            gemm(false, false, c_out, out_plane, c_in, wd, x_b, T::zero(), &mut out);
        } else {
            let mut cols = vec![T::zero(); ckk * out_plane];
            im2col(x_b, c_in, h, w, geo, ho, wo, &mut cols);
            gemm(false, false, c_out, out_plane, ckk, wd, &cols, T::zero(), &mut out);
        }
        add_bias(&mut out, bd, out_plane);
        out
    });
    Ok(Tensor::from_op(
        vec![n, c_out, ho, wo],
        outs.concat(),
        vec![x.clone(), p.weight.clone(), p.bias.clone()],
        Conv2dBackward(shape),
    ))
}

struct UpConvBackward(ConvShape);

impl<T: Element> Backward<T> for UpConvBackward {
    fn name(&self) -> &'static str {
        "upconv2d"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        // Here (h, w) is the small input and (ho, wo) the expanded output.
        let s = self.0;
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let need_x = inputs[0].requires_grad();
        let need_w = inputs[1].requires_grad();
        let okk = s.c_out * s.geo.kh * s.geo.kw;
        let (in_plane, out_plane) = (s.h * s.w, s.ho * s.wo);

        let parts = map_indices(s.n, |b| {
            let g_b = &grad[b * s.c_out * out_plane..(b + 1) * s.c_out * out_plane];
            let x_b = &x[b * s.c_in * in_plane..(b + 1) * s.c_in * in_plane];
            let mut gcols = vec![T::zero(); okk * in_plane];
            im2col(g_b, s.c_out, s.ho, s.wo, s.geo, s.h, s.w, &mut gcols);
            let gx = need_x.then(|| {
                let mut gx = vec![T::zero(); s.c_in * in_plane];
                gemm(false, false, s.c_in, in_plane, okk, w, &gcols, T::zero(), &mut gx);
                gx
            });
            let gw = need_w.then(|| {
                let mut gw = vec![T::zero(); s.c_in * okk];
                gemm(false, true, s.c_in, okk, in_plane, x_b, &gcols, T::zero(), &mut gw);
                gw
            });
            (gx, gw)
        });

        let mut gx_all = need_x.then(|| Vec::with_capacity(x.len()));
        let mut gw_parts = Vec::new();
        for (gx, gw) in parts {
            if let (Some(all), Some(gx)) = (gx_all.as_mut(), gx) {
                all.extend_from_slice(&gx);
            }
            if let Some(gw) = gw {
                gw_parts.push(gw);
            }
        }
        let gw = need_w.then(|| sum_in_order(gw_parts.into_iter(), w.len()));
        let gb = inputs[2].requires_grad().then(|| {
            let mut acc = vec![T::zero(); s.c_out];
            for b in 0..s.n {
                channel_sums(
                    &grad[b * s.c_out * out_plane..(b + 1) * s.c_out * out_plane],
                    s.c_out,
                    out_plane,
                    &mut acc,
                );
            }
            acc
        });
        vec![gx_all, gw, gb]
    }
}

/// Transposed convolution. Output extents are `(H - 1) * stride - 2 * pad + kH`,
/// which doubles `H` for the 2x2, stride-2 up-convolution of the decoder.
pub fn upconv2d<T: Element>(x: &Tensor<T>, p: &Conv2dParams<T>) -> Result<Tensor<T>> {
    let (n, c_in, h, w) = x.dims4("upconv2d")?;
    let [wc_in, c_out, kh, kw] = *p.weight.shape() else {
        return Err(Error::shape("upconv2d weight must be rank 4"));
    };
    if c_in != wc_in {
        return Err(Error::shape(format!(
            "upconv2d: input has {c_in} channels, weight expects {wc_in}"
        )));
    }
    if p.bias.shape() != [c_out] {
        return Err(Error::shape(format!(
            "upconv2d: bias shape {:?}, expected [{c_out}]",
            p.bias.shape()
        )));
    }
    let geo = Geometry {
        kh,
        kw,
        stride: p.stride,
        pad: p.padding,
    };
    let full_h = (h - 1) * p.stride + kh;
    let full_w = (w - 1) * p.stride + kw;
    if full_h <= 2 * p.padding || full_w <= 2 * p.padding {
        return Err(Error::shape("upconv2d: padding removes the whole output"));
    }
    let (ho, wo) = (full_h - 2 * p.padding, full_w - 2 * p.padding);
    let shape = ConvShape {
        n,
        c_in,
        h,
        w,
        c_out,
        ho,
        wo,
        geo,
    };
    let (in_plane, out_plane) = (h * w, ho * wo);
    let okk = c_out * kh * kw;
    let xd = x.data();
    let wd = p.weight.data();
    let bd = p.bias.data();
    let outs = map_indices(n, |b| {
        let x_b = &xd[b * c_in * in_plane..(b + 1) * c_in * in_plane];
        let mut cols = vec![T::zero(); okk * in_plane];
        gemm(true, false, okk, in_plane, c_in, wd, x_b, T::zero(), &mut cols);
        let mut out = vec![T::zero(); c_out * out_plane];
        col2im(&cols, c_out, ho, wo, geo, h, w, &mut out);
        add_bias(&mut out, bd, out_plane);
        out
    });
    Ok(Tensor::from_op(
        vec![n, c_out, ho, wo],
        outs.concat(),
        vec![x.clone(), p.weight.clone(), p.bias.clone()],
        UpConvBackward(shape),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: Tensor<f64>, b: Tensor<f64>, stride: usize, pad: usize) -> Conv2dParams<f64> {
        Conv2dParams::new(w, b, stride, pad).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 3, 3], (0..9).map(|v| v as f32).collect()).unwrap();
        let p = Conv2dParams::new(
            Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap(),
            Tensor::from_vec(&[1], vec![0.0]).unwrap(),
            1,
            0,
        )
        .unwrap();
        assert_eq!(conv2d(&x, &p).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn output_extent_formula() {
        let x = Tensor::<f64>::zeros(&[2, 3, 9, 7]);
        let p = params(
            Tensor::zeros(&[4, 3, 3, 3]),
            Tensor::zeros(&[4]),
            2,
            1,
        );
        assert_eq!(conv2d(&x, &p).unwrap().shape(), &[2, 4, 5, 4]);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let p = params(Tensor::zeros(&[1, 3, 3, 3]), Tensor::zeros(&[1]), 1, 1);
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn kernel_larger_than_padded_input_is_shape_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let p = params(Tensor::zeros(&[1, 1, 5, 5]), Tensor::zeros(&[1]), 1, 1);
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn single_pixel_upconv_expands_kernel() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let k = vec![1.0, 2.0, 3.0, 4.0];
        let p = params(
            Tensor::from_vec(&[1, 1, 2, 2], k.clone()).unwrap(),
            Tensor::zeros(&[1]),
            2,
            0,
        );
        let y = upconv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), k.iter().map(|v| v * 3.0).collect::<Vec<_>>());
    }

    #[test]
    fn upconv_doubles_extents() {
        let x = Tensor::<f64>::zeros(&[2, 4, 5, 3]);
        let p = params(Tensor::zeros(&[4, 2, 2, 2]), Tensor::zeros(&[2]), 2, 0);
        assert_eq!(upconv2d(&x, &p).unwrap().shape(), &[2, 2, 10, 6]);
    }

    #[test]
    fn bias_gradient_is_channel_sum_of_upstream() {
        let x = Tensor::<f64>::from_vec(&[2, 1, 2, 2], vec![1.0; 8]).unwrap();
        let p = Conv2dParams::init(1, 3, 3, 1, 1, &mut Rng::new(0));
        conv2d(&x, &p).unwrap().sum_all().backward().unwrap();
        assert_eq!(p.bias.grad().unwrap(), vec![8.0, 8.0, 8.0]);
    }
}
