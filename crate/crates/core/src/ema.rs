//! Exponential moving average of parameters for evaluation.
//!
//! The decay actually applied ramps up with the update counter:
//! `min(base_decay, (1 + n) / (10 + n))`.

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EmaState<T> {
    shadow: ParamVector<T>,
    base_decay: T,
    /// Counter fed into the decay ramp.
    pub num_updates: u64,
    applied: u64,
}

impl<T: Scalar> EmaState<T> {
    /// Starts the shadow at `initial` with the counter at zero.
    pub fn new(initial: ParamVector<T>, base_decay: f64) -> Result<Self> {
        Self::with_counter(initial, base_decay, 0)
    }

    /// Starts the counter at `num_updates` instead of zero.
    pub fn with_counter(initial: ParamVector<T>, base_decay: f64, num_updates: u64) -> Result<Self> {
        if !(base_decay > 0.0 && base_decay < 1.0) {
            return Err(Error::config(format!("EMA decay must lie in (0,1), got {base_decay}")));
        }
        Ok(Self {
            shadow: initial,
            base_decay: T::of(base_decay),
            num_updates,
            applied: 0,
        })
    }

    /// Decay the next update will use.
    pub fn effective_decay(&self) -> T {
        let n = T::from_u64(self.num_updates).expect("counter fits scalar");
        self.base_decay.min((T::one() + n) / (T::of(10.0) + n))
    }

    pub fn update(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.shadow.len() {
            return Err(Error::shape(format!(
                "moving average holds {} values, got {}",
                self.shadow.len(),
                params.len()
            )));
        }
        let d = self.effective_decay();
        let keep = T::one() - d;
        for (s, &p) in self.shadow.iter_mut().zip(params) {
            *s = d * *s + keep * p;
        }
        self.num_updates += 1;
        self.applied += 1;
        Ok(())
    }

    /// Averaged parameters; an error until at least one update has happened.
    pub fn params(&self) -> Result<&ParamVector<T>> {
        if self.applied == 0 {
            return Err(Error::UninitializedEma);
        }
        Ok(&self.shadow)
    }

    pub fn updates_applied(&self) -> u64 {
        self.applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_update_uses_ramped_decay() {
        let mut ema = EmaState::new(ParamVector(vec![1.0f64]), 0.9999).unwrap();
        assert_eq!(ema.effective_decay(), 0.1);
        ema.update(&[0.0]).unwrap();
        assert_eq!(ema.params().unwrap().0, vec![0.1]);
        assert_eq!(ema.num_updates, 1);
    }

    #[test]
    fn decay_approaches_base() {
        let mut ema = EmaState::new(ParamVector(vec![0.0f64]), 0.9999).unwrap();
        ema.num_updates = 10_000_000;
        assert_eq!(ema.effective_decay(), 0.9999);
    }

    #[test]
    fn fixed_point_and_uninitialized() {
        let mut ema = EmaState::new(ParamVector(vec![0.5f64, -1.5]), 0.99).unwrap();
        assert!(matches!(ema.params(), Err(Error::UninitializedEma)));
        ema.update(&[0.5, -1.5]).unwrap();
        assert_eq!(ema.params().unwrap().0, vec![0.5, -1.5]);
    }

    #[test]
    fn converges_to_constant() {
        let mut ema = EmaState::new(ParamVector(vec![3.0f64]), 0.9999).unwrap();
        for _ in 0..100 {
            ema.update(&[-2.0]).unwrap();
        }
        // product of the ramped decays (1+n)/(10+n) over n < 100 is below 1e-6 of the gap
        assert!((ema.params().unwrap()[0] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn counter_can_start_at_ten() {
        let ema = EmaState::with_counter(ParamVector(vec![0.0f64]), 0.9999, 10).unwrap();
        assert_eq!(ema.effective_decay(), 11.0 / 20.0);
        assert!(ema.params().is_err());
    }

    #[test]
    fn rejects_bad_decay_and_lengths() {
        assert!(EmaState::new(ParamVector(vec![0.0f64]), 1.0).is_err());
        let mut ema = EmaState::new(ParamVector(vec![0.0f64]), 0.5).unwrap();
        assert!(matches!(ema.update(&[1.0, 2.0]), Err(Error::Shape(_))));
    }
}
