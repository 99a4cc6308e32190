//! Adam with coupled L2 regularization and an epoch-wise exponential
//! learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize, cfg: &AdamConfig) -> Result<Self> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(unit(cfg.beta1) && unit(cfg.beta2) && cfg.eps > 0.0) {
            return Err(Error::config(format!("invalid Adam settings {cfg:?}")));
        }
        Ok(Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            beta1: T::of(cfg.beta1),
            beta2: T::of(cfg.beta2),
            eps: T::of(cfg.eps),
        })
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: T) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical {
                step: self.t + 1,
                what: format!("non-finite gradient at coordinate {j}"),
            });
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Adds the gradient of `(inv_c / 2) * ||params||^2` to `grad`.
pub fn l2_augment<T: Scalar>(grad: &[T], params: &[T], inv_c: T) -> Result<ParamVector<T>> {
    if grad.len() != params.len() {
        return Err(Error::shape(format!(
            "gradient length {} vs parameter length {}",
            grad.len(),
            params.len()
        )));
    }
    Ok(ParamVector(
        grad.iter().zip(params).map(|(&g, &p)| g + inv_c * p).collect(),
    ))
}

/// `(inv_c / 2) * ||params||^2`
pub fn l2_penalty<T: Scalar>(params: &[T], inv_c: T) -> T {
    T::of(0.5) * inv_c * params.iter().map(|&p| p * p).sum::<T>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    /// The reciprocal of the regularization parameter C.
    pub inv_c: f64,
    pub lr0: f64,
    pub decay_gamma: f64,
    /// Optimizer steps per epoch.
    pub epoch_length: usize,
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inv_c.is_finite() && self.inv_c >= 0.0) {
            return Err(Error::config(format!(
                "1/C must be finite and >= 0, got {}",
                self.inv_c
            )));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.lr0
            )));
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return Err(Error::config(format!(
                "decay gamma must lie in (0,1], got {}",
                self.decay_gamma
            )));
        }
        if self.epoch_length == 0 {
            return Err(Error::config("epoch length must be positive"));
        }
        Ok(())
    }
}

/// `lr0 * gamma^floor(step / epoch_length)`
pub fn lr_at(reg: &RegConfig, step: u64) -> f64 {
    let epoch = step / reg.epoch_length.max(1) as u64;
    reg.lr0 * reg.decay_gamma.powi(i32::try_from(epoch).unwrap_or(i32::MAX))
}
