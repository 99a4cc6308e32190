#![allow(dead_code)]

use kdfm_core::harness::{gen_two_moons, sample_balanced_labels, split_indices, Dataset};
use kdfm_core::losses::{LossKind, LossSpec};
use kdfm_core::nn::Network;
use kdfm_core::rng::{self, Stream};
use kdfm_core::ssl::{SslConfig, SslData};
use kdfm_core::Matrix;
use rand::Rng;

/// Mean loss over the batch and its analytic parameter gradient.
pub fn loss_and_grad(net: &Network<f64>, x: &Matrix<f64>, targets: &Matrix<f64>, loss: &LossSpec) -> (f64, Vec<f64>) {
    let trace = net.forward(x).unwrap();
    let (value, g_logits) = loss.batch_mean(targets, &trace.probs, 1.0).unwrap();
    (value, net.backward(&trace, &g_logits).unwrap().into_inner())
}

/// Worst relative error between analytic and central-difference gradients,
/// measured as |a - n| / max(|a| + |n|, floor) per coordinate.
pub fn gradient_check(arch: &[usize], seed: u64, loss: &LossSpec, h: f64) -> f64 {
    let mut r = rng::stream(seed, Stream::Data, 99);
    let net = Network::<f64>::init(arch, seed).unwrap();
    let (d, k) = (arch[0], arch[arch.len() - 1]);
    let b = 4;
    let x = Matrix::new(b, d, (0..b * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let mut targets = Matrix::zeros(b, k);
    for i in 0..b {
        let y = r.random_range(0..k);
        if loss.kind == LossKind::Nce || i % 2 == 0 {
            targets.set(i, y, 1.0);
        } else {
            // soft target
            let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for (c, v) in raw.iter().enumerate() {
                targets.set(i, c, v / s);
            }
        }
    }
    let (_, analytic) = loss_and_grad(&net, &x, &targets, loss);
    let base = net.params().into_inner();
    let mut worst: f64 = 0.0;
    for j in 0..base.len() {
        let mut p = base.clone();
        p[j] = base[j] + h;
        let up = loss_and_grad(&Network::from_params(arch, &p).unwrap(), &x, &targets, loss).0;
        p[j] = base[j] - h;
        let down = loss_and_grad(&Network::from_params(arch, &p).unwrap(), &x, &targets, loss).0;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[j] - numeric).abs() / (analytic[j].abs() + numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

pub fn all_losses() -> Vec<LossSpec> {
    vec![
        LossSpec::new(LossKind::Ce),
        LossSpec::new(LossKind::Rce),
        LossSpec::sce(1.0, 0.1),
        LossSpec::new(LossKind::Mae),
        LossSpec::new(LossKind::Nce),
    ]
}

/// Training split of a two-moons set with a balanced labeled subset.
pub struct Moons {
    pub train: Dataset<f64>,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl Moons {
    pub fn new(n: usize, labels_per_class: usize, seed: u64) -> Self {
        let ds = gen_two_moons::<f64>(n, 0.1, 0).unwrap();
        let (train_idx, _) = split_indices(&ds, seed).unwrap();
        let train = ds.subset(&train_idx);
        let (labeled, unlabeled) = sample_balanced_labels(&train, labels_per_class, seed).unwrap();
        Self {
            train,
            labeled,
            unlabeled,
        }
    }

    pub fn data(&self) -> SslData<'_, f64> {
        SslData {
            features: &self.train.features,
            labels: &self.train.labels,
            labeled: &self.labeled,
            unlabeled: &self.unlabeled,
            num_classes: 2,
        }
    }
}

/// Small, fast training config for property tests.
pub fn small_cfg(seed: u64) -> SslConfig {
    SslConfig {
        hidden: vec![16, 8],
        epochs_outer: 3,
        epochs_inner: 3,
        batch_labeled: 8,
        batch_unlabeled: 16,
        lr0: 1e-2,
        seed,
        ..SslConfig::default()
    }
}
