//! Classification losses evaluated on softmax outputs, returning the value and
//! the gradient with respect to the logits (the softmax Jacobian is folded in).
//!
//! A target of all zeros means "ignore this sample": every loss returns zero
//! value and zero gradient for it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Rce,
    Sce,
    Mae,
    Nce,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::Ce, LossKind::Rce, LossKind::Sce, LossKind::Mae, LossKind::Nce];
}

/// Which loss to use and its parameters. `alpha`/`beta` only matter for SCE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_eps")]
    pub log_clamp_eps: f64,
}

fn one() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    LossSpec::DEFAULT_EPS
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::ce()
    }
}

impl LossSpec {
    pub const DEFAULT_EPS: f64 = 1e-4;

    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            alpha: 1.0,
            beta: 0.0,
            log_clamp_eps: Self::DEFAULT_EPS,
        }
    }

    pub fn ce() -> Self {
        Self::new(LossKind::Ce)
    }

    pub fn sce(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            ..Self::new(LossKind::Sce)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0 && self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config(format!(
                "loss weights must be finite and non-negative (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if !(self.log_clamp_eps > 0.0 && self.log_clamp_eps < 1.0) {
            return Err(Error::config(format!(
                "log clamp eps must lie in (0,1), got {}",
                self.log_clamp_eps
            )));
        }
        Ok(())
    }

    pub fn evaluate<T: Scalar>(&self, target: &[T], probs: &[T]) -> Result<LossEval<T>> {
        let eps = T::of(self.log_clamp_eps);
        match self.kind {
            LossKind::Ce => ce(target, probs, eps),
            LossKind::Rce => rce(target, probs, eps),
            LossKind::Sce => sce(target, probs, T::of(self.alpha), T::of(self.beta), eps),
            LossKind::Mae => mae(target, probs),
            LossKind::Nce => nce(target, probs, eps),
        }
    }

    /// Mean loss over the rows of a batch, scaled by `weight`. The returned
    /// logit gradient already carries the `weight / B` factor.
    pub fn batch_mean<T: Scalar>(&self, targets: &Matrix<T>, probs: &Matrix<T>, weight: T) -> Result<(T, Matrix<T>)> {
        if targets.shape() != probs.shape() {
            return Err(Error::shape(format!(
                "targets {:?} vs probabilities {:?}",
                targets.shape(),
                probs.shape()
            )));
        }
        let b = probs.rows();
        let mut grad = Matrix::zeros(b, probs.cols());
        if b == 0 {
            return Ok((T::zero(), grad));
        }
        let scale = weight / T::of_usize(b);
        let mut total = T::zero();
        for i in 0..b {
            let eval = self.evaluate(targets.row(i), probs.row(i))?;
            total += eval.value;
            for (g, v) in grad.row_mut(i).iter_mut().zip(eval.grad) {
                *g = v * scale;
            }
        }
        Ok((total * scale, grad))
    }
}

/// Loss value and gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval<T> {
    pub value: T,
    pub grad: Vec<T>,
}

impl<T: Scalar> LossEval<T> {
    fn zero(k: usize) -> Self {
        Self {
            value: T::zero(),
            grad: vec![T::zero(); k],
        }
    }
}

fn check_lengths<T>(target: &[T], probs: &[T]) -> Result<()> {
    if target.len() != probs.len() {
        return Err(Error::shape(format!(
            "target has {} classes, prediction has {}",
            target.len(),
            probs.len()
        )));
    }
    Ok(())
}

fn is_ignored<T: Scalar>(target: &[T]) -> bool {
    target.iter().all(|&t| t == T::zero())
}

/// Pulls a gradient with respect to the probabilities back through the softmax:
/// `dL/dz_i = p_i (g_i - sum_j g_j p_j)`.
fn through_softmax<T: Scalar>(probs: &[T], grad_probs: &[T]) -> Vec<T> {
    let inner: T = probs.iter().zip(grad_probs).map(|(&p, &g)| p * g).sum();
    probs.iter().zip(grad_probs).map(|(&p, &g)| p * (g - inner)).collect()
}

/// Cross entropy `-sum_k t_k ln max(p_k, eps)`.
pub fn ce<T: Scalar>(target: &[T], probs: &[T], eps: T) -> Result<LossEval<T>> {
    check_lengths(target, probs)?;
    if is_ignored(target) {
        return Ok(LossEval::zero(probs.len()));
    }
    let value = -target
        .iter()
        .zip(probs)
        .filter(|(&t, _)| t != T::zero())
        .map(|(&t, &p)| t * p.max(eps).ln())
        .sum::<T>();
    let mass: T = target.iter().copied().sum();
    let grad = probs.iter().zip(target).map(|(&p, &t)| p * mass - t).collect();
    Ok(LossEval { value, grad })
}

/// Reverse cross entropy `-sum_k p_k ln max(t_k, eps)`.
pub fn rce<T: Scalar>(target: &[T], probs: &[T], eps: T) -> Result<LossEval<T>> {
    check_lengths(target, probs)?;
    if is_ignored(target) {
        return Ok(LossEval::zero(probs.len()));
    }
    let log_t: Vec<T> = target.iter().map(|&t| -t.max(eps).ln()).collect();
    let value = probs.iter().zip(&log_t).map(|(&p, &l)| p * l).sum();
    Ok(LossEval {
        value,
        grad: through_softmax(probs, &log_t),
    })
}

/// `alpha * CE + beta * RCE`.
pub fn sce<T: Scalar>(target: &[T], probs: &[T], alpha: T, beta: T, eps: T) -> Result<LossEval<T>> {
    let a = ce(target, probs, eps)?;
    let b = rce(target, probs, eps)?;
    Ok(LossEval {
        value: alpha * a.value + beta * b.value,
        grad: a
            .grad
            .iter()
            .zip(&b.grad)
            .map(|(&x, &y)| alpha * x + beta * y)
            .collect(),
    })
}

/// `sum_k |p_k - t_k|`.
pub fn mae<T: Scalar>(target: &[T], probs: &[T]) -> Result<LossEval<T>> {
    check_lengths(target, probs)?;
    if is_ignored(target) {
        return Ok(LossEval::zero(probs.len()));
    }
    let value = probs.iter().zip(target).map(|(&p, &t)| (p - t).abs()).sum();
    let sign: Vec<T> = probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            if p > t {
                T::one()
            } else if p < t {
                -T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(LossEval {
        value,
        grad: through_softmax(probs, &sign),
    })
}

fn one_hot_class<T: Scalar>(target: &[T]) -> Option<usize> {
    let mut class = None;
    for (k, &t) in target.iter().enumerate() {
        if t == T::one() && class.is_none() {
            class = Some(k);
        } else if t != T::zero() {
            return None;
        }
    }
    class
}

/// Normalized cross entropy `CE(t, p) / sum_k CE(e_k, p)`. Requires a one-hot target.
pub fn nce<T: Scalar>(target: &[T], probs: &[T], eps: T) -> Result<LossEval<T>> {
    check_lengths(target, probs)?;
    if is_ignored(target) {
        return Ok(LossEval::zero(probs.len()));
    }
    let y = one_hot_class(target)
        .ok_or_else(|| Error::UnsupportedTarget("normalized cross entropy needs a one-hot target".into()))?;
    let k = probs.len();
    let numer = -probs[y].max(eps).ln();
    let denom = -probs.iter().map(|&p| p.max(eps).ln()).sum::<T>();
    if denom <= T::zero() {
        // K = 1, or a prediction of exactly one-hot with no clamping: the ratio is 0/0.
        return Ok(LossEval::zero(k));
    }
    // dN/dz_i = p_i - [i = y],  dD/dz_i = K p_i - 1
    let kk = T::of_usize(k);
    let d2 = denom * denom;
    let grad = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let dn = if i == y { p - T::one() } else { p };
            let dd = kk * p - T::one();
            (dn * denom - numer * dd) / d2
        })
        .collect();
    Ok(LossEval {
        value: numer / denom,
        grad,
    })
}

/// `sum_k loss(e_k, p)`; constant in `p` for a symmetric loss.
pub fn symmetry_sum<T: Scalar>(loss: &LossSpec, probs: &[T]) -> Result<T> {
    let k = probs.len();
    let mut e = vec![T::zero(); k];
    let mut total = T::zero();
    for class in 0..k {
        e[class] = T::one();
        total += loss.evaluate(&e, probs)?.value;
        e[class] = T::zero();
    }
    Ok(total)
}

/// Spread (max minus min) of [`symmetry_sum`] over the sampled distributions.
/// Zero for a symmetric loss.
pub fn symmetry_defect<T: Scalar, P: AsRef<[T]>>(loss: &LossSpec, samples: &[P]) -> Result<T> {
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for p in samples {
        let s = symmetry_sum(loss, p.as_ref())?;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if samples.is_empty() {
        return Ok(T::zero());
    }
    Ok(hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const P: [f64; 2] = [0.7, 0.3];
    const E1: [f64; 2] = [1.0, 0.0];

    #[test]
    fn ce_scalar_oracle() {
        let out = ce(&E1, &P, 1e-4).unwrap();
        assert_abs_diff_eq!(out.value, 0.356675, epsilon = 1e-6);
        assert_abs_diff_eq!(out.value, -(0.7f64).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(out.grad[0], -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(out.grad[1], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn ce_perfect_prediction() {
        let eps = 1e-4;
        let out = ce(&E1, &E1, eps).unwrap();
        assert!(out.value <= -(1.0f64 - eps).ln());
    }

    #[test]
    fn rce_scalar_oracle() {
        let out = rce(&E1, &P, 1e-4).unwrap();
        assert_abs_diff_eq!(out.value, 2.763102, epsilon = 1e-6);
        let uniform = [0.25; 4];
        assert_abs_diff_eq!(
            rce(&uniform, &uniform, 1e-4).unwrap().value,
            (4.0f64).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(rce(&E1, &E1, 1e-4).unwrap().value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sce_combines_ce_and_rce() {
        let out = sce(&E1, &P, 1.0, 0.1, 1e-4).unwrap();
        assert_abs_diff_eq!(out.value, 0.632985, epsilon = 1e-6);
        let c = ce(&E1, &P, 1e-4).unwrap();
        let r = rce(&E1, &P, 1e-4).unwrap();
        assert_eq!(sce(&E1, &P, 1.0, 0.0, 1e-4).unwrap(), c);
        assert_eq!(sce(&E1, &P, 0.0, 1.0, 1e-4).unwrap(), r);
    }

    #[test]
    fn mae_values() {
        assert_abs_diff_eq!(mae(&E1, &P).unwrap().value, 0.6, epsilon = 1e-15);
        assert_eq!(mae(&P, &P).unwrap().value, 0.0);
        let p = [0.1, 0.25, 0.05, 0.6];
        let s = symmetry_sum(&LossSpec::new(LossKind::Mae), &p).unwrap();
        assert_abs_diff_eq!(s, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn nce_values() {
        let out = nce(&E1, &P, 1e-4).unwrap();
        let expected = 0.7f64.ln() / (0.7f64.ln() + 0.3f64.ln());
        assert_abs_diff_eq!(out.value, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(out.value, 0.2285429, epsilon = 1e-7);
        let uniform = [0.2; 5];
        let e3 = [0.0, 0.0, 1.0, 0.0, 0.0];
        assert_abs_diff_eq!(nce(&e3, &uniform, 1e-4).unwrap().value, 0.2, epsilon = 1e-12);
        let near = [1.0 - 1e-9, 1e-9];
        assert!(nce(&E1, &near, 1e-4).unwrap().value < 1e-6);
    }

    #[test]
    fn nce_rejects_soft_targets() {
        assert!(matches!(nce(&[0.6, 0.4], &P, 1e-4), Err(Error::UnsupportedTarget(_))));
    }

    #[test]
    fn zero_target_is_ignored_by_every_loss() {
        let zero = [0.0, 0.0];
        for kind in LossKind::ALL {
            let spec = LossSpec {
                beta: 0.5,
                ..LossSpec::new(kind)
            };
            let out = spec.evaluate(&zero, &P).unwrap();
            assert_eq!(out.value, 0.0, "{kind:?}");
            assert!(out.grad.iter().all(|&g| g == 0.0), "{kind:?}");
        }
    }

    #[test]
    fn length_mismatch_is_a_shape_error() {
        assert!(matches!(ce(&[1.0, 0.0, 0.0], &P, 1e-4), Err(Error::Shape(_))));
    }

    #[test]
    fn single_class_has_no_symmetry_defect() {
        let samples = [[1.0f64]];
        for kind in LossKind::ALL {
            let d = symmetry_defect(&LossSpec::new(kind), &samples).unwrap();
            assert_eq!(d, 0.0, "{kind:?}");
        }
    }

    #[test]
    fn ce_is_not_symmetric() {
        let samples = [[0.5, 0.5], [0.9, 0.1]];
        let d: f64 = symmetry_defect(&LossSpec::ce(), &samples).unwrap();
        assert!(d > 0.1);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(LossSpec::sce(-1.0, 0.1).validate().is_err());
        assert!(LossSpec {
            log_clamp_eps: 0.0,
            ..LossSpec::ce()
        }
        .validate()
        .is_err());
        assert!(LossSpec::sce(1.0, 0.1).validate().is_ok());
    }

    #[test]
    fn serde_uses_lowercase_kinds() {
        let s = serde_json::to_string(&LossSpec::sce(1.0, 0.1)).unwrap();
        assert!(s.contains("\"sce\""));
        let back: LossSpec = serde_json::from_str(r#"{"kind":"mae"}"#).unwrap();
        assert_eq!(back, LossSpec::new(LossKind::Mae));
    }
}
