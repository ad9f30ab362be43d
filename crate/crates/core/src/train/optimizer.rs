use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::unet::OptimizerSettings;

/// RMSprop without momentum:
/// `v = rho * v + (1 - rho) * g^2`, `w = w - lr * g / sqrt(v + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub settings: OptimizerSettings,
    accum: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(settings: OptimizerSettings) -> Result<Self> {
        if !(settings.learning_rate >= 0.0 && settings.learning_rate.is_finite()) {
            return Err(Error::parameter("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&settings.rho) {
            return Err(Error::parameter("rho must lie in [0, 1)"));
        }
        if !(settings.epsilon > 0.0) {
            return Err(Error::parameter("optimizer epsilon must be > 0"));
        }
        Ok(Self {
            settings,
            accum: Vec::new(),
        })
    }

    /// Squared-gradient accumulators, one per parameter.
    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accum
    }

    /// Updates one parameter buffer in place given its gradient.
    pub fn update_slice<T: Element>(&mut self, index: usize, w: &mut [T], g: &[T]) -> Result<()> {
        if w.len() != g.len() {
            return Err(Error::contract(format!(
                "parameter {index} has {} values but its gradient has {}",
                w.len(),
                g.len()
            )));
        }
        while self.accum.len() <= index {
            self.accum.push(Vec::new());
        }
        let v = &mut self.accum[index];
        if v.is_empty() {
            v.resize(w.len(), 0.0);
        } else if v.len() != w.len() {
            return Err(Error::contract(format!(
                "parameter {index} changed size from {} to {}",
                v.len(),
                w.len()
            )));
        }
        let OptimizerSettings {
            learning_rate: lr,
            rho,
            epsilon,
        } = self.settings;
        for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
            let gf = gi.to_f64_lossy();
            *vi = rho * *vi + (1.0 - rho) * gf * gf;
            *wi = T::from_f64_lossy(wi.to_f64_lossy() - lr * gf / (*vi + epsilon).sqrt());
        }
        Ok(())
    }

    /// Applies one step to every parameter using its accumulated gradient
    /// (missing gradients count as zero) and replaces each tensor with a
    /// fresh leaf holding the new values and no gradient.
    pub fn step<T: Element>(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        for (i, p) in params.iter_mut().enumerate() {
            let mut w = p.to_vec();
            let g = p.grad().unwrap_or_else(|| vec![T::zero(); w.len()]);
            self.update_slice(i, &mut w, &g)?;
            **p = Tensor::param(p.shape(), w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt(lr: f64, eps: f64) -> RmsProp {
        RmsProp::new(OptimizerSettings {
            learning_rate: lr,
            rho: 0.9,
            epsilon: eps,
        })
        .unwrap()
    }

    #[test]
    fn scalar_hand_evaluation() {
        let mut o = opt(0.1, 1e-8);
        let mut w = [1.0f64];
        o.update_slice(0, &mut w, &[1.0]).unwrap();
        assert!((o.accumulators()[0][0] - 0.1).abs() < 1e-15);
        assert!((w[0] - 0.683772).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut o = opt(0.1, 1e-7);
        let mut w = [0.3f32, -2.0];
        o.update_slice(0, &mut w, &[0.0, 0.0]).unwrap();
        assert_eq!(w, [0.3, -2.0]);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut o = opt(0.01, 1e-12);
        let g = -3.0;
        let mut w = [0.0f64];
        let mut last = 0.0;
        for _ in 0..300 {
            let before = w[0];
            o.update_slice(0, &mut w, &[g]).unwrap();
            last = w[0] - before;
        }
        assert!((last - 0.01).abs() < 1e-9);
    }

    #[test]
    fn size_mismatch_is_contract_error() {
        let mut o = opt(0.1, 1e-7);
        let mut w = [0.0f32; 2];
        assert!(matches!(o.update_slice(0, &mut w, &[1.0]), Err(Error::Contract(_))));
        o.update_slice(0, &mut w, &[1.0, 1.0]).unwrap();
        let mut w3 = [0.0f32; 3];
        assert!(o.update_slice(0, &mut w3, &[1.0; 3]).is_err());
    }

    #[test]
    fn step_replaces_tensors_and_clears_grads() {
        let w = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = w.mul(&w).unwrap().sum_all();
        loss.backward().unwrap();
        let mut p = w.clone();
        let mut o = opt(0.1, 1e-8);
        o.step(&mut [&mut p]).unwrap();
        assert!(p.grad().is_none());
        assert!(p.requires_grad());
        assert!(p.data()[0] < 1.0 && p.data()[1] < 2.0);
    }
}
