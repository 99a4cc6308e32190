mod common;

use common::{all_losses, gradient_check};
use kdfm_core::losses::LossSpec;
use kdfm_core::nn::Network;
use kdfm_core::ssl::{fixmatch_batch_loss, BatchLossConfig, LabeledBatch, PseudoLabelRule, UnlabeledBatch};
use kdfm_core::Matrix;

#[test]
fn every_loss_matches_finite_differences() {
    for seed in 1..=5 {
        for loss in all_losses() {
            let err = gradient_check(&[10, 16, 3], seed, &loss, 1e-5);
            assert!(err < 1e-4, "{:?} seed {seed}: relative error {err:e}", loss.kind);
        }
    }
}

#[test]
fn deeper_network_gradients() {
    for loss in all_losses() {
        let err = gradient_check(&[3, 8, 8, 5, 4], 11, &loss, 1e-5);
        assert!(err < 1e-4, "{:?}: relative error {err:e}", loss.kind);
    }
}

// The FixMatch objective with the regularizer, teacher targets held fixed
// (one-hot targets are locally constant, so finite differences see the same
// objective).
#[test]
fn full_objective_gradient() {
    let arch = [2, 6, 2];
    let net = Network::<f64>::init(&arch, 4).unwrap();
    let labeled = LabeledBatch {
        weak: Matrix::from_rows(&[[0.3, -0.2], [1.0, 0.4], [-0.7, 0.1]]).unwrap(),
        labels: vec![0, 1, 1],
    };
    let unlabeled = UnlabeledBatch {
        indices: vec![0, 1, 2, 3],
        weak: Matrix::from_rows(&[[2.0, 1.0], [-2.0, 0.5], [0.0, 0.0], [3.0, -3.0]]).unwrap(),
        strong: Matrix::from_rows(&[[1.7, 1.4], [-2.4, 0.1], [0.3, -0.2], [2.5, -3.3]]).unwrap(),
    };
    let cfg = BatchLossConfig {
        loss_l: LossSpec::ce(),
        loss_u: LossSpec::sce(1.0, 0.1),
        lambda_u: 1.0,
        inv_c: 5e-2,
    };
    let rule = PseudoLabelRule::Threshold { tau: 0.6 };
    let eval = |p: &[f64]| {
        let n = Network::from_params(&arch, p).unwrap();
        fixmatch_batch_loss(&n, &labeled, &unlabeled, &rule, &cfg, 0).unwrap()
    };
    let base = net.params().into_inner();
    let out = eval(&base);
    assert!(
        out.mask_rate > 0.0 && out.mask_rate < 1.0,
        "mask rate {}",
        out.mask_rate
    );
    let h = 1e-6;
    for j in 0..base.len() {
        let mut p = base.clone();
        p[j] += h;
        let up = eval(&p);
        p[j] -= 2.0 * h;
        let down = eval(&p);
        assert_eq!(up.mask_rate, out.mask_rate, "threshold crossed at parameter {j}");
        let numeric = (up.loss - down.loss) / (2.0 * h);
        let err = (out.grad[j] - numeric).abs() / (out.grad[j].abs() + numeric.abs()).max(1e-6);
        assert!(err < 1e-4, "parameter {j}: analytic {} numeric {numeric}", out.grad[j]);
    }
}
