//! Datasets, synthetic generators, stratified splitting, and balanced label
//! sampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::augment::InputKind;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

/// Label value marking an unlabeled row.
pub const UNLABELED: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub features: Matrix<T>,
    /// Class per row, or [`UNLABELED`].
    pub labels: Vec<u16>,
    pub num_classes: usize,
    pub input_kind: InputKind,
    pub provenance: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        features: Matrix<T>,
        labels: Vec<u16>,
        num_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            num_classes,
            input_kind: InputKind::Vector,
            provenance: provenance.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.rows() == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if self.labels.len() != self.features.rows() {
            return Err(Error::Data(format!(
                "{} labels for {} rows",
                self.labels.len(),
                self.features.rows()
            )));
        }
        if self.num_classes == 0 || self.num_classes >= usize::from(UNLABELED) {
            return Err(Error::Data(format!("invalid class count {}", self.num_classes)));
        }
        if let Some((i, &y)) = self
            .labels
            .iter()
            .enumerate()
            .find(|&(_, &y)| y != UNLABELED && usize::from(y) >= self.num_classes)
        {
            return Err(Error::Data(format!(
                "row {i} has label {y}, outside [0, {})",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            input_kind: self.input_kind,
            provenance: self.provenance.clone(),
        }
    }

    /// Row indices of each class; unlabeled rows are skipped.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            if y != UNLABELED {
                by_class[usize::from(y)].push(i);
            }
        }
        by_class
    }

    /// Mean over features of the per-feature standard deviation.
    pub fn mean_feature_std(&self) -> f64 {
        let (n, d) = self.features.shape();
        if n == 0 || d == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| self.features.get(i, j).as_f64()).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            total += (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        }
        total / d as f64
    }
}

/// Two interleaved half circles: class 0 on the upper unit arc centred at the
/// origin, class 1 on the lower unit arc centred at (1, 0.5). Angles are evenly
/// spaced; Gaussian noise is added per coordinate and rows are shuffled.
pub fn gen_two_moons<T: Scalar>(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset<T>> {
    if n < 2 {
        return Err(Error::config("two moons needs at least 2 samples"));
    }
    let n0 = n.div_ceil(2);
    let n1 = n - n0;
    let angle = |i: usize, m: usize| {
        if m <= 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (m - 1) as f64
        }
    };
    let mut points: Vec<([f64; 2], u16)> = Vec::with_capacity(n);
    for i in 0..n0 {
        let t = angle(i, n0);
        points.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..n1 {
        let t = angle(i, n1);
        points.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    let mut r = rng::stream(seed, Stream::Data, 0);
    points.shuffle(&mut r);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (p, y) in points {
        for v in p {
            let z: f64 = r.sample(StandardNormal);
            data.push(T::of(v + noise_sigma * z));
        }
        labels.push(y);
    }
    Dataset::new(
        Matrix::new(n, 2, data)?,
        labels,
        2,
        format!("two-moons(n={n},noise={noise_sigma},seed={seed})"),
    )
}

const CENTRE_RETRIES: usize = 1000;

/// Isotropic Gaussian blobs around random centres whose pairwise distance is
/// at least `separation`.
pub fn gen_blobs<T: Scalar>(
    k: usize,
    n_per_class: usize,
    d: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    Ok(gen_blobs_with_centres(k, n_per_class, d, separation, noise_sigma, seed)?.0)
}

/// [`gen_blobs`], also returning the generating centres (row `c` is class `c`).
pub fn gen_blobs_with_centres<T: Scalar>(
    k: usize,
    n_per_class: usize,
    d: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<(Dataset<T>, Vec<Vec<f64>>)> {
    if k < 2 || d == 0 || n_per_class == 0 {
        return Err(Error::config(
            "blobs need k >= 2, d >= 1, and at least one sample per class",
        ));
    }
    if !(separation.is_finite() && separation > 0.0 && noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::config("blob separation must be positive and noise non-negative"));
    }
    let mut r = rng::stream(seed, Stream::Data, 1);
    // the box grows with k so that rejection sampling has room in low dimensions
    let half = separation * k as f64;
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centres.len() < k {
        let mut placed = false;
        for _ in 0..CENTRE_RETRIES {
            let c: Vec<f64> = (0..d).map(|_| r.random_range(-half..=half)).collect();
            let far = centres
                .iter()
                .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= separation);
            if far {
                centres.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Data(format!(
                "could not place {k} centres {separation} apart after {CENTRE_RETRIES} tries"
            )));
        }
    }
    let mut rows: Vec<(Vec<f64>, u16)> = Vec::with_capacity(k * n_per_class);
    for (class, c) in centres.iter().enumerate() {
        for _ in 0..n_per_class {
            let x = c
                .iter()
                .map(|&m| {
                    let z: f64 = r.sample(StandardNormal);
                    m + noise_sigma * z
                })
                .collect();
            rows.push((x, class as u16));
        }
    }
    rows.shuffle(&mut r);
    let n = rows.len();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (x, y) in rows {
        data.extend(x.into_iter().map(T::of));
        labels.push(y);
    }
    let ds = Dataset::new(
        Matrix::new(n, d, data)?,
        labels,
        k,
        format!("blobs(k={k},n={n_per_class},d={d},sep={separation},noise={noise_sigma},seed={seed})"),
    )?;
    Ok((ds, centres))
}

/// Stratified 80/20 split. Each class keeps `floor(0.2 n_c)` rows for
/// validation; unlabeled rows all go to the training side.
pub fn split_80_20<T: Scalar>(ds: &Dataset<T>, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    let (train, val) = split_indices(ds, seed)?;
    Ok((ds.subset(&train), ds.subset(&val)))
}

/// Index form of [`split_80_20`]; both lists are sorted.
pub fn split_indices<T: Scalar>(ds: &Dataset<T>, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if ds.len() < 5 {
        return Err(Error::Data(format!("cannot split {} rows 80/20", ds.len())));
    }
    let mut r = rng::stream(seed, Stream::Split, 0);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, mut idx) in ds.class_indices().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 5 {
            return Err(Error::Data(format!(
                "class {class} has {} samples; stratified splitting needs at least 5",
                idx.len()
            )));
        }
        idx.shuffle(&mut r);
        let n_val = idx.len() / 5;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.extend(
        ds.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == UNLABELED)
            .map(|(i, _)| i),
    );
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Picks exactly `labels_per_class` labeled rows per class. The unlabeled
/// pool is the whole training set, labeled rows included, with labels ignored.
pub fn sample_balanced_labels<T: Scalar>(
    train: &Dataset<T>,
    labels_per_class: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels_per_class == 0 {
        return Err(Error::config("labels per class must be at least 1"));
    }
    let mut r = rng::stream(seed, Stream::LabelSample, 0);
    let mut labeled = Vec::with_capacity(labels_per_class * train.num_classes);
    for (class, mut idx) in train.class_indices().into_iter().enumerate() {
        if idx.len() < labels_per_class {
            return Err(Error::Data(format!(
                "class {class} has {} training samples, {labels_per_class} requested",
                idx.len()
            )));
        }
        idx.shuffle(&mut r);
        labeled.extend_from_slice(&idx[..labels_per_class]);
    }
    labeled.sort_unstable();
    Ok((labeled, (0..train.len()).collect()))
}

/// Histogram of labels over the given rows.
pub fn class_histogram<T: Scalar>(ds: &Dataset<T>, indices: &[usize]) -> BTreeMap<u16, usize> {
    let mut h = BTreeMap::new();
    for &i in indices {
        *h.entry(ds.labels[i]).or_default() += 1;
    }
    h
}
