use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

/// Per-channel batch normalization state.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`,
/// with the unbiased batch variance.
#[derive(Debug, Clone)]
pub struct BatchNormParams<T: Element = f32> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Statistics of one training batch, kept so running averages can be
/// updated after the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

impl<T: Element> BatchNormParams<T> {
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::parameter("batch-norm epsilon must be > 0"));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::parameter("batch-norm momentum must lie in [0, 1]"));
        }
        Ok(Self {
            scale: Tensor::param(&[channels], vec![T::one(); channels])?,
            shift: Tensor::param(&[channels], vec![T::zero(); channels])?,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            epsilon,
        })
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = T::from_f64_lossy(m * r.to_f64_lossy() + (1.0 - m) * b);
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = T::from_f64_lossy((m * r.to_f64_lossy() + (1.0 - m) * b).max(0.0));
        }
    }
}

struct TrainBackward<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    c: usize,
    plane: usize,
}

fn for_channel<T: Element>(
    n: usize,
    c: usize,
    plane: usize,
    ch: usize,
    mut f: impl FnMut(usize),
) {
    for b in 0..n {
        let start = (b * c + ch) * plane;
        for i in start..start + plane {
            f(i);
        }
    }
}

impl<T: Element> Backward<T> for TrainBackward<T> {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let gamma = inputs[1].data();
        let n = grad.len() / (self.c * self.plane);
        let m = T::from_usize(n * self.plane).expect("count");
        let mut dgamma = vec![T::zero(); self.c];
        let mut dbeta = vec![T::zero(); self.c];
        for ch in 0..self.c {
            for_channel::<T>(n, self.c, self.plane, ch, |i| {
                dgamma[ch] = dgamma[ch] + grad[i] * self.xhat[i];
                dbeta[ch] = dbeta[ch] + grad[i];
            });
        }
        let dx = inputs[0].requires_grad().then(|| {
            let mut dx = vec![T::zero(); grad.len()];
            for ch in 0..self.c {
                // With dxhat = dy * gamma:
                // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                let k = gamma[ch] * self.inv_std[ch] / m;
                let (sum_dy, sum_dy_xhat) = (dbeta[ch], dgamma[ch]);
                for_channel::<T>(n, self.c, self.plane, ch, |i| {
                    dx[i] = k * (m * grad[i] - sum_dy - self.xhat[i] * sum_dy_xhat);
                });
            }
            dx
        });
        vec![
            dx,
            inputs[1].requires_grad().then_some(dgamma),
            inputs[2].requires_grad().then_some(dbeta),
        ]
    }
}

struct EvalBackward<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    c: usize,
    plane: usize,
}

impl<T: Element> Backward<T> for EvalBackward<T> {
    fn name(&self) -> &'static str {
        "batchnorm_eval"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let gamma = inputs[1].data();
        let n = grad.len() / (self.c * self.plane);
        let mut dgamma = vec![T::zero(); self.c];
        let mut dbeta = vec![T::zero(); self.c];
        let mut dx = vec![T::zero(); grad.len()];
        for ch in 0..self.c {
            let k = gamma[ch] * self.inv_std[ch];
            for_channel::<T>(n, self.c, self.plane, ch, |i| {
                dgamma[ch] = dgamma[ch] + grad[i] * self.xhat[i];
                dbeta[ch] = dbeta[ch] + grad[i];
                dx[i] = grad[i] * k;
            });
        }
        vec![
            inputs[0].requires_grad().then_some(dx),
            inputs[1].requires_grad().then_some(dgamma),
            inputs[2].requires_grad().then_some(dbeta),
        ]
    }
}

fn check<T: Element>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4("batchnorm")?;
    if c != p.channels() {
        return Err(Error::shape(format!(
            "batchnorm: input has {c} channels, parameters have {}",
            p.channels()
        )));
    }
    Ok((n, c, h * w))
}

fn affine<T: Element>(
    x: &[T],
    mean: &[T],
    inv_std: &[T],
    p: &BatchNormParams<T>,
    n: usize,
    c: usize,
    plane: usize,
) -> (Vec<T>, Vec<T>) {
    let gamma = p.scale.data();
    let beta = p.shift.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * plane;
            for i in start..start + plane {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (out, xhat)
}

/// Normalizes with the statistics of this batch (training behaviour)
/// without touching the running averages.
pub(crate) fn batchnorm_train<T: Element>(
    x: &Tensor<T>,
    p: &BatchNormParams<T>,
) -> Result<(Tensor<T>, BatchStats)> {
    let (n, c, plane) = check(x, p)?;
    let data = x.data();
    let count = (n * plane) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0;
        for_channel::<T>(n, c, plane, ch, |i| s += data[i].to_f64_lossy());
        mean[ch] = s / count;
        let mut ss = 0.0;
        for_channel::<T>(n, c, plane, ch, |i| {
            let d = data[i].to_f64_lossy() - mean[ch];
            ss += d * d;
        });
        var[ch] = ss / count;
    }
    let mean_t: Vec<T> = mean.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v + p.epsilon).sqrt()))
        .collect();
    let (out, xhat) = affine(data, &mean_t, &inv_std, p, n, c, plane);
    let unbiased = if count > 1.0 {
        var.iter().map(|v| v * count / (count - 1.0)).collect()
    } else {
        var
    };
    let t = Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), p.scale.clone(), p.shift.clone()],
        TrainBackward {
            xhat,
            inv_std,
            c,
            plane,
        },
    );
    Ok((t, BatchStats { mean, var: unbiased }))
}

/// Normalizes with the running statistics: a per-channel affine map.
pub(crate) fn batchnorm_eval<T: Element>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<Tensor<T>> {
    let (n, c, plane) = check(x, p)?;
    let inv_std: Vec<T> = p
        .running_var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v.to_f64_lossy() + p.epsilon).sqrt()))
        .collect();
    let (out, xhat) = affine(x.data(), &p.running_mean, &inv_std, p, n, c, plane);
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), p.scale.clone(), p.shift.clone()],
        EvalBackward {
            xhat,
            inv_std,
            c,
            plane,
        },
    ))
}

/// Batch normalization over batch and spatial positions. In train mode the
/// running statistics are updated; in eval mode they are used as-is (they
/// start at mean 0, variance 1).
pub fn batchnorm<T: Element>(
    x: &Tensor<T>,
    p: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    match mode {
        Mode::Train => {
            let (y, stats) = batchnorm_train(x, p)?;
            p.update_running(&stats);
            Ok(y)
        }
        Mode::Eval => batchnorm_eval(x, p),
    }
}
