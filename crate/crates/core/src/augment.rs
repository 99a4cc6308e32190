//! Weak and strong stochastic augmentation.
//!
//! Weak: horizontal flip plus integer translation with zero padding for grid
//! inputs, small Gaussian jitter for vector inputs. Strong: a random subset of
//! a small operation pool applied at one global magnitude.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Layout of one sample. Grids are stored height-major, then width, then channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum InputKind {
    Vector,
    Grid { h: usize, w: usize, c: usize },
}

impl InputKind {
    pub fn is_grid(&self) -> bool {
        matches!(self, InputKind::Grid { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrongOp {
    Scale,
    Rotate,
    ChannelShift,
    Jitter,
    Erase,
}

impl StrongOp {
    fn grid_only(self) -> bool {
        matches!(self, StrongOp::Rotate | StrongOp::ChannelShift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPolicy {
    pub flip_prob: f64,
    pub max_shift_frac: f64,
    /// Absolute standard deviation of the vector jitter.
    pub jitter_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongPolicy {
    pub ops_per_sample: usize,
    pub magnitude: f64,
    pub op_pool: Vec<StrongOp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub input_kind: InputKind,
    pub weak: WeakPolicy,
    pub strong: StrongPolicy,
}

/// Largest rotation, in radians, reached at magnitude 1.
const MAX_ROTATION: f64 = std::f64::consts::PI / 6.0;
/// Strong jitter standard deviation relative to the weak one, at magnitude 1.
const STRONG_JITTER_FACTOR: f64 = 10.0;

impl AugmentPolicy {
    pub fn vector(jitter_sigma: f64) -> Self {
        Self {
            input_kind: InputKind::Vector,
            weak: WeakPolicy {
                flip_prob: 0.0,
                max_shift_frac: 0.0,
                jitter_sigma,
            },
            strong: StrongPolicy {
                ops_per_sample: 2,
                magnitude: 0.5,
                op_pool: vec![StrongOp::Jitter, StrongOp::Scale],
            },
        }
    }

    pub fn grid(h: usize, w: usize, c: usize) -> Self {
        Self {
            input_kind: InputKind::Grid { h, w, c },
            weak: WeakPolicy {
                flip_prob: 0.5,
                max_shift_frac: 0.125,
                jitter_sigma: 0.05,
            },
            strong: StrongPolicy {
                ops_per_sample: 2,
                magnitude: 0.5,
                op_pool: vec![
                    StrongOp::Jitter,
                    StrongOp::Scale,
                    StrongOp::Rotate,
                    StrongOp::Erase,
                    StrongOp::ChannelShift,
                ],
            },
        }
    }

    /// The identity transform for both streams.
    pub fn identity(input_kind: InputKind) -> Self {
        Self {
            input_kind,
            weak: WeakPolicy {
                flip_prob: 0.0,
                max_shift_frac: 0.0,
                jitter_sigma: 0.0,
            },
            strong: StrongPolicy {
                ops_per_sample: 1,
                magnitude: 0.0,
                op_pool: vec![StrongOp::Jitter],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weak;
        let s = &self.strong;
        if !(0.0..=1.0).contains(&w.flip_prob) {
            return Err(Error::config(format!("flip probability {} outside [0,1]", w.flip_prob)));
        }
        if !(0.0..=0.5).contains(&w.max_shift_frac) {
            return Err(Error::config(format!(
                "shift fraction {} outside [0,0.5]",
                w.max_shift_frac
            )));
        }
        if !(w.jitter_sigma.is_finite() && w.jitter_sigma >= 0.0) {
            return Err(Error::config(format!("jitter sigma {} must be >= 0", w.jitter_sigma)));
        }
        if s.ops_per_sample == 0 || s.op_pool.is_empty() {
            return Err(Error::config("strong augmentation needs at least one operation"));
        }
        if !(0.0..=1.0).contains(&s.magnitude) {
            return Err(Error::config(format!("magnitude {} outside [0,1]", s.magnitude)));
        }
        if let InputKind::Grid { h, w, c } = self.input_kind {
            if h == 0 || w == 0 || c == 0 {
                return Err(Error::config("grid dimensions must be positive"));
            }
        } else if let Some(op) = s.op_pool.iter().find(|op| op.grid_only()) {
            return Err(Error::config(format!("{op:?} only applies to grid inputs")));
        }
        Ok(())
    }

    pub fn sample_len(&self) -> Option<usize> {
        match self.input_kind {
            InputKind::Vector => None,
            InputKind::Grid { h, w, c } => Some(h * w * c),
        }
    }

    fn check_sample<T>(&self, x: &[T]) -> Result<()> {
        match self.sample_len() {
            Some(n) if n != x.len() => Err(Error::shape(format!(
                "sample has {} values, grid policy expects {n}",
                x.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn weak<T: Scalar, R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<Vec<T>> {
        self.check_sample(x)?;
        let p = &self.weak;
        match self.input_kind {
            InputKind::Vector => Ok(jitter(x, p.jitter_sigma, rng)),
            InputKind::Grid { h, w, c } => {
                let flip = p.flip_prob > 0.0 && rng.random::<f64>() < p.flip_prob;
                let max_dx = (p.max_shift_frac * w as f64).floor() as i64;
                let max_dy = (p.max_shift_frac * h as f64).floor() as i64;
                let dx = if max_dx > 0 {
                    rng.random_range(-max_dx..=max_dx)
                } else {
                    0
                };
                let dy = if max_dy > 0 {
                    rng.random_range(-max_dy..=max_dy)
                } else {
                    0
                };
                Ok(flip_shift(x, (h, w, c), flip, dx, dy))
            }
        }
    }

    pub fn strong<T: Scalar, R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<Vec<T>> {
        self.check_sample(x)?;
        let s = &self.strong;
        let m = s.magnitude;
        let count = s.ops_per_sample.min(s.op_pool.len());
        let mut ops: Vec<StrongOp> = index::sample(rng, s.op_pool.len(), count)
            .into_iter()
            .map(|i| s.op_pool[i])
            .collect();
        ops.sort();

        let mut out = x.to_vec();
        for op in ops {
            match op {
                StrongOp::Scale => {
                    let half = 0.5 * m;
                    let f = if half > 0.0 {
                        1.0 + rng.random_range(-half..=half)
                    } else {
                        1.0
                    };
                    let f = T::of(f);
                    out.iter_mut().for_each(|v| *v *= f);
                }
                StrongOp::Jitter => {
                    out = jitter(&out, STRONG_JITTER_FACTOR * self.weak.jitter_sigma * m, rng);
                }
                StrongOp::Erase => erase(&mut out, self.input_kind, m, rng),
                StrongOp::Rotate => {
                    if let InputKind::Grid { h, w, c } = self.input_kind {
                        let limit = MAX_ROTATION * m;
                        if limit > 0.0 {
                            let angle = rng.random_range(-limit..=limit);
                            out = rotate(&out, (h, w, c), angle);
                        }
                    }
                }
                StrongOp::ChannelShift => {
                    if let InputKind::Grid { c, .. } = self.input_kind {
                        let half = 0.5 * m;
                        if half > 0.0 {
                            let shifts: Vec<T> = (0..c).map(|_| T::of(rng.random_range(-half..=half))).collect();
                            for (i, v) in out.iter_mut().enumerate() {
                                *v += shifts[i % c];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn weak_batch<T: Scalar, R: Rng + ?Sized>(&self, batch: &Matrix<T>, rng: &mut R) -> Result<Matrix<T>> {
        self.map_batch(batch, |x| self.weak(x, rng))
    }

    pub fn strong_batch<T: Scalar, R: Rng + ?Sized>(&self, batch: &Matrix<T>, rng: &mut R) -> Result<Matrix<T>> {
        self.map_batch(batch, |x| self.strong(x, rng))
    }

    fn map_batch<T: Scalar>(&self, batch: &Matrix<T>, mut f: impl FnMut(&[T]) -> Result<Vec<T>>) -> Result<Matrix<T>> {
        let mut data = Vec::with_capacity(batch.data().len());
        for row in batch.row_iter() {
            data.extend(f(row)?);
        }
        Matrix::new(batch.rows(), batch.cols(), data)
    }
}

fn jitter<T: Scalar, R: Rng + ?Sized>(x: &[T], sigma: f64, rng: &mut R) -> Vec<T> {
    if sigma <= 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + T::of(sigma * z)
        })
        .collect()
}

fn flip_shift<T: Scalar>(x: &[T], (h, w, c): (usize, usize, usize), flip: bool, dx: i64, dy: i64) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for y in 0..h {
        let sy = y as i64 - dy;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for xo in 0..w {
            let mut sx = xo as i64 - dx;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            if flip {
                sx = w as i64 - 1 - sx;
            }
            let src = (sy as usize * w + sx as usize) * c;
            let dst = (y * w + xo) * c;
            out[dst..dst + c].copy_from_slice(&x[src..src + c]);
        }
    }
    out
}

/// Nearest-neighbour rotation about the grid centre, zero fill.
fn rotate<T: Scalar>(x: &[T], (h, w, c): (usize, usize, usize), angle: f64) -> Vec<T> {
    let (sin, cos) = angle.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![T::zero(); x.len()];
    for y in 0..h {
        for xo in 0..w {
            let (ry, rx) = (y as f64 - cy, xo as f64 - cx);
            let sx = (cos * rx + sin * ry + cx).round();
            let sy = (-sin * rx + cos * ry + cy).round();
            if sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            let src = (sy as usize * w + sx as usize) * c;
            let dst = (y * w + xo) * c;
            out[dst..dst + c].copy_from_slice(&x[src..src + c]);
        }
    }
    out
}

/// Zeroes a square patch (grids) or a contiguous run (vectors) whose side is
/// `floor(magnitude / 2 * extent)`.
fn erase<T: Scalar, R: Rng + ?Sized>(x: &mut [T], kind: InputKind, m: f64, rng: &mut R) {
    match kind {
        InputKind::Vector => {
            let len = (0.5 * m * x.len() as f64).floor() as usize;
            if len == 0 {
                return;
            }
            let start = rng.random_range(0..=x.len() - len);
            x[start..start + len].iter_mut().for_each(|v| *v = T::zero());
        }
        InputKind::Grid { h, w, c } => {
            let side = (0.5 * m * h.min(w) as f64).floor() as usize;
            if side == 0 {
                return;
            }
            let y0 = rng.random_range(0..=h - side);
            let x0 = rng.random_range(0..=w - side);
            for y in y0..y0 + side {
                let row = (y * w + x0) * c;
                x[row..row + side * c].iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn grid_sample(h: usize, w: usize, c: usize) -> Vec<f64> {
        (0..h * w * c).map(|i| i as f64 + 1.0).collect()
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let x = grid_sample(4, 5, 2);
        let mut policy = AugmentPolicy::identity(InputKind::Grid { h: 4, w: 5, c: 2 });
        policy.strong.op_pool = vec![StrongOp::Jitter, StrongOp::Scale, StrongOp::Rotate, StrongOp::Erase];
        policy.strong.ops_per_sample = 4;
        let mut r = rng::seeded(1);
        assert_eq!(policy.weak(&x, &mut r).unwrap(), x);
        assert_eq!(policy.strong(&x, &mut r).unwrap(), x);

        let v = vec![0.3, -1.2, 5.0];
        let vp = AugmentPolicy::identity(InputKind::Vector);
        assert_eq!(vp.weak(&v, &mut r).unwrap(), v);
        assert_eq!(vp.strong(&v, &mut r).unwrap(), v);
    }

    #[test]
    fn augmentations_are_deterministic_and_shape_preserving() {
        let x = grid_sample(8, 8, 3);
        let policy = AugmentPolicy::grid(8, 8, 3);
        let a = policy.strong(&x, &mut rng::seeded(9)).unwrap();
        let b = policy.strong(&x, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), x.len());
        let a = policy.weak(&x, &mut rng::seeded(4)).unwrap();
        let b = policy.weak(&x, &mut rng::seeded(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), x.len());
    }

    #[test]
    fn weak_shift_is_bounded_by_one_pixel_on_8x8() {
        // A single bright pixel in the middle: after a shift of at most
        // floor(0.125 * 8) = 1 it must land within one pixel of where it started.
        let mut x = vec![0.0; 64];
        x[3 * 8 + 4] = 1.0;
        let mut policy = AugmentPolicy::grid(8, 8, 1);
        policy.weak.flip_prob = 0.0;
        let mut r = rng::seeded(0);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            let out = policy.weak(&x, &mut r).unwrap();
            let pos = out.iter().position(|&v| v == 1.0).unwrap();
            let (dy, dx) = (pos as i64 / 8 - 3, pos as i64 % 8 - 4);
            assert!(dy.abs() <= 1 && dx.abs() <= 1);
            seen.insert((dy, dx));
        }
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn flip_reverses_columns() {
        let x = grid_sample(2, 3, 1);
        let out = flip_shift(&x, (2, 3, 1), true, 0, 0);
        assert_eq!(out, vec![3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    }

    #[test]
    fn strong_vector_bounds() {
        let policy = AugmentPolicy::vector(0.1);
        let x = [0.0, 5.0];
        let m = policy.strong.magnitude;
        let sigma: f64 = 10.0 * 0.1 * m;
        let mut r = rng::seeded(3);
        let mut first = Vec::new();
        for _ in 0..1000 {
            let out = policy.strong(&x, &mut r).unwrap();
            first.push(out[0]);
            // (1+s)*5 + eps with |s| <= m/2
            assert!((out[1] - 5.0_f64).abs() <= 0.5 * m * 5.0 + 6.0 * sigma);
        }
        let mean = first.iter().sum::<f64>() / 1000.0;
        let std = (first.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0).sqrt();
        assert!(mean.abs() < 4.0 * sigma / 1000f64.sqrt());
        assert!((std - sigma).abs() < 0.1 * sigma, "std {std} vs {sigma}");
    }

    #[test]
    fn strong_distorts_more_than_weak() {
        let policy = AugmentPolicy::vector(0.05);
        let mut r = rng::seeded(8);
        let x = [0.7, -0.4];
        let dist = |a: &[f64]| ((a[0] - x[0]).powi(2) + (a[1] - x[1]).powi(2)).sqrt();
        let (mut weak, mut strong) = (0.0, 0.0);
        for _ in 0..1000 {
            weak += dist(&policy.weak(&x, &mut r).unwrap());
            strong += dist(&policy.strong(&x, &mut r).unwrap());
        }
        assert!(strong >= weak);
    }

    #[test]
    fn validation_and_shape_errors() {
        let mut p = AugmentPolicy::vector(0.1);
        p.strong.op_pool.push(StrongOp::Rotate);
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let g = AugmentPolicy::grid(4, 4, 1);
        assert!(g.validate().is_ok());
        assert!(matches!(g.weak(&[0.0; 15], &mut rng::seeded(0)), Err(Error::Shape(_))));
        let mut bad = AugmentPolicy::grid(4, 4, 1);
        bad.weak.max_shift_frac = 0.6;
        assert!(bad.validate().is_err());
        bad.weak.max_shift_frac = 0.1;
        bad.strong.op_pool.clear();
        assert!(bad.validate().is_err());
    }
}
