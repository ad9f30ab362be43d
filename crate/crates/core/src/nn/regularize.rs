use super::Mode;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`. Eval mode and
/// `rate == 0` return the input unchanged.
pub fn dropout<T: Element>(x: &Tensor<T>, rate: f64, rng: &mut Rng, mode: Mode) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::parameter(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
        .collect();
    x.mul(&Tensor::from_vec(x.shape(), mask)?)
}

/// Additive zero-mean Gaussian noise in train mode; identity in eval mode.
pub fn gaussian_noise<T: Element>(
    x: &Tensor<T>,
    stddev: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<Tensor<T>> {
    if !(stddev >= 0.0) || !stddev.is_finite() {
        return Err(Error::parameter(format!("noise stddev {stddev} must be >= 0")));
    }
    if mode == Mode::Eval || stddev == 0.0 {
        return Ok(x.clone());
    }
    let noise: Vec<T> = (0..x.numel())
        .map(|_| T::from_f64_lossy(rng.normal() * stddev))
        .collect();
    x.add(&Tensor::from_vec(x.shape(), noise)?)
}
