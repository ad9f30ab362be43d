use super::{numel, Backward, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

struct ReduceBackward {
    op: ReduceOp,
    /// Output slot for every input element.
    slots: Vec<usize>,
    /// Input index chosen by `Max` for each output slot.
    argmax: Vec<usize>,
    count: usize,
}

impl<T: Element> Backward<T> for ReduceBackward {
    fn name(&self) -> &'static str {
        match self.op {
            ReduceOp::Sum => "sum",
            ReduceOp::Mean => "mean",
            ReduceOp::Max => "max",
        }
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let g = match self.op {
            ReduceOp::Sum => self.slots.iter().map(|&s| grad[s]).collect(),
            ReduceOp::Mean => {
                let n = T::from_usize(self.count).expect("count fits");
                self.slots.iter().map(|&s| grad[s] / n).collect()
            }
            ReduceOp::Max => {
                let mut g = vec![T::zero(); self.slots.len()];
                for (slot, &src) in self.argmax.iter().enumerate() {
                    g[src] = g[src] + grad[slot];
                }
                g
            }
        };
        vec![Some(g)]
    }
}

impl<T: Element> Tensor<T> {
    /// Reduces over `axes`, removing them from the shape. Reducing every
    /// axis yields a rank-0 scalar.
    ///
    /// `Max` routes its gradient to the first maximal element in row-major
    /// order.
    pub fn reduce(&self, op: ReduceOp, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(Error::shape(format!(
                    "axis {a} out of range for shape {:?}",
                    self.shape()
                )));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = self
            .shape()
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let out_len = numel(&out_shape);
        let count = self.numel() / out_len;

        // Row-major strides of the output, expressed per input axis (0 for
        // reduced axes).
        let mut out_strides = vec![0usize; rank];
        let mut stride = 1;
        for ax in (0..rank).rev() {
            if !reduced[ax] {
                out_strides[ax] = stride;
                stride *= self.shape()[ax];
            }
        }
        let mut slots = Vec::with_capacity(self.numel());
        let mut index = vec![0usize; rank];
        for _ in 0..self.numel() {
            slots.push(index.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
            for ax in (0..rank).rev() {
                index[ax] += 1;
                if index[ax] < self.shape()[ax] {
                    break;
                }
                index[ax] = 0;
            }
        }

        let data = self.data();
        let mut argmax = Vec::new();
        let out = match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                let mut acc = vec![T::zero(); out_len];
                for (&s, &v) in slots.iter().zip(data) {
                    acc[s] = acc[s] + v;
                }
                if op == ReduceOp::Mean {
                    let n = T::from_usize(count).expect("count fits");
                    for v in acc.iter_mut() {
                        *v = *v / n;
                    }
                }
                acc
            }
            ReduceOp::Max => {
                let mut best: Vec<Option<usize>> = vec![None; out_len];
                for (i, &s) in slots.iter().enumerate() {
                    match best[s] {
                        Some(j) if data[j] >= data[i] => {}
                        _ => best[s] = Some(i),
                    }
                }
                argmax = best.into_iter().map(|b| b.expect("non-empty")).collect();
                argmax.iter().map(|&i| data[i]).collect()
            }
        };
        Ok(Self::from_op(
            out_shape,
            out,
            vec![self.clone()],
            ReduceBackward {
                op,
                slots,
                argmax,
                count,
            },
        ))
    }

    pub fn sum(&self, axes: &[usize]) -> Result<Self> {
        self.reduce(ReduceOp::Sum, axes)
    }

    pub fn mean(&self, axes: &[usize]) -> Result<Self> {
        self.reduce(ReduceOp::Mean, axes)
    }

    pub fn max(&self, axes: &[usize]) -> Result<Self> {
        self.reduce(ReduceOp::Max, axes)
    }

    fn all_axes(&self) -> Vec<usize> {
        (0..self.rank()).collect()
    }

    pub fn sum_all(&self) -> Self {
        self.reduce(ReduceOp::Sum, &self.all_axes())
            .expect("all axes are valid")
    }

    pub fn mean_all(&self) -> Self {
        self.reduce(ReduceOp::Mean, &self.all_axes())
            .expect("all axes are valid")
    }
}
