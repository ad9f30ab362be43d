use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

struct MaxPoolBackward {
    /// Flat input index of the maximum feeding each output element.
    argmax: Vec<usize>,
    input_len: usize,
}

impl<T: Element> Backward<T> for MaxPoolBackward {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let mut g = vec![T::zero(); self.input_len];
        for (&src, &v) in self.argmax.iter().zip(grad) {
            g[src] = g[src] + v;
        }
        vec![Some(g)]
    }
}

/// Non-overlapping max pooling with a square `window` (stride = window).
/// Spatial extents must be divisible by the window. Ties resolve to the
/// first element in row-major order within the window.
pub fn maxpool2d<T: Element>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("maxpool2d")?;
    if window == 0 {
        return Err(Error::parameter("pooling window must be >= 1"));
    }
    if h % window != 0 || w % window != 0 {
        return Err(Error::shape(format!(
            "maxpool2d: extents {h}x{w} not divisible by window {window}"
        )));
    }
    let (ho, wo) = (h / window, w / window);
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * window * w + ox * window;
                for dy in 0..window {
                    let row = base + (oy * window + dy) * w + ox * window;
                    for i in row..row + window {
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        vec![x.clone()],
        MaxPoolBackward {
            argmax,
            input_len: x.numel(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2d(&x, 2).unwrap().to_vec(), vec![4.0]);
    }

    #[test]
    fn constant_input() {
        let x = Tensor::<f32>::full(&[2, 3, 4, 6], 1.5);
        let y = maxpool2d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn gradient_routes_to_argmax() {
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = maxpool2d(&x, 2).unwrap();
        y.mul_scalar(2.5).sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0, 2.5]);
    }

    #[test]
    fn non_divisible_extent_is_shape_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(maxpool2d(&x, 2), Err(Error::Shape(_))));
    }
}
