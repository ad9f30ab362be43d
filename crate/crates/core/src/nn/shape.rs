use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

struct ConcatBackward {
    n: usize,
    ca: usize,
    cb: usize,
    plane: usize,
}

impl<T: Element> Backward<T> for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (la, lb) = (self.ca * self.plane, self.cb * self.plane);
        let mut ga = Vec::with_capacity(self.n * la);
        let mut gb = Vec::with_capacity(self.n * lb);
        for chunk in grad.chunks(la + lb) {
            ga.extend_from_slice(&chunk[..la]);
            gb.extend_from_slice(&chunk[la..]);
        }
        vec![Some(ga), Some(gb)]
    }
}

/// Concatenates two NCHW tensors along the channel axis.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca, ha, wa) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::shape(format!(
            "concat_channels: {:?} and {:?} differ outside the channel axis",
            a.shape(),
            b.shape()
        )));
    }
    let plane = ha * wa;
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..na {
        out.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Ok(Tensor::from_op(
        vec![na, ca + cb, ha, wa],
        out,
        vec![a.clone(), b.clone()],
        ConcatBackward {
            n: na,
            ca,
            cb,
            plane,
        },
    ))
}

struct SliceBackward {
    c: usize,
    start: usize,
    len: usize,
    plane: usize,
}

impl<T: Element> Backward<T> for SliceBackward {
    fn name(&self) -> &'static str {
        "slice_channels"
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let seg = self.len * self.plane;
        let n = grad.len() / seg;
        let mut g = vec![T::zero(); n * self.c * self.plane];
        for i in 0..n {
            let dst = (i * self.c + self.start) * self.plane;
            g[dst..dst + seg].copy_from_slice(&grad[i * seg..(i + 1) * seg]);
        }
        vec![Some(g)]
    }
}

/// Channels `start..start + len` of an NCHW tensor.
pub fn slice_channels<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("slice_channels")?;
    if len == 0 || start + len > c {
        return Err(Error::shape(format!(
            "slice_channels: range {start}..{} outside {c} channels",
            start + len
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for i in 0..n {
        let s = (i * c + start) * plane;
        out.extend_from_slice(&x.data()[s..s + len * plane]);
    }
    Ok(Tensor::from_op(
        vec![n, len, h, w],
        out,
        vec![x.clone()],
        SliceBackward {
            c,
            start,
            len,
            plane,
        },
    ))
}

/// Mirror index for position `i` of an axis of length `n`, without
/// repeating the edge sample; folds repeatedly for pads longer than `n`.
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

struct GatherBackward {
    /// Source index of every output element.
    src: Vec<usize>,
    input_len: usize,
    name: &'static str,
}

impl<T: Element> Backward<T> for GatherBackward {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let mut g = vec![T::zero(); self.input_len];
        for (&s, &v) in self.src.iter().zip(grad) {
            g[s] = g[s] + v;
        }
        vec![Some(g)]
    }
}

fn gather_planes<T: Element>(
    x: &Tensor<T>,
    new_h: usize,
    new_w: usize,
    row_src: &[usize],
    col_src: &[usize],
    name: &'static str,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4(name)?;
    let mut src = Vec::with_capacity(n * c * new_h * new_w);
    for plane in 0..n * c {
        for &r in row_src {
            let base = plane * h * w + r * w;
            src.extend(col_src.iter().map(|&cidx| base + cidx));
        }
    }
    let data = x.data();
    let out = src.iter().map(|&i| data[i]).collect();
    Ok(Tensor::from_op(
        vec![n, c, new_h, new_w],
        out,
        vec![x.clone()],
        GatherBackward {
            src,
            input_len: x.numel(),
            name,
        },
    ))
}

/// Extends an NCHW tensor to `new_h x new_w` by reflecting across the bottom
/// and right edges.
pub fn pad_reflect<T: Element>(x: &Tensor<T>, new_h: usize, new_w: usize) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4("pad_reflect")?;
    if new_h < h || new_w < w {
        return Err(Error::shape(format!(
            "pad_reflect: target {new_h}x{new_w} smaller than {h}x{w}"
        )));
    }
    if (new_h, new_w) == (h, w) {
        return Ok(x.clone());
    }
    let rows: Vec<usize> = (0..new_h).map(|i| reflect_index(i, h)).collect();
    let cols: Vec<usize> = (0..new_w).map(|i| reflect_index(i, w)).collect();
    gather_planes(x, new_h, new_w, &rows, &cols, "pad_reflect")
}

/// Keeps the top-left `h x w` window of an NCHW tensor.
pub fn crop<T: Element>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (_, _, xh, xw) = x.dims4("crop")?;
    if h > xh || w > xw || h == 0 || w == 0 {
        return Err(Error::shape(format!("crop: {h}x{w} outside {xh}x{xw}")));
    }
    if (h, w) == (xh, xw) {
        return Ok(x.clone());
    }
    let rows: Vec<usize> = (0..h).collect();
    let cols: Vec<usize> = (0..w).collect();
    gather_planes(x, h, w, &rows, &cols, "crop")
}
