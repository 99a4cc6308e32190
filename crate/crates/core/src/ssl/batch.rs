use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::matrix::Matrix;
use crate::nn::{Network, ParamVector};
use crate::optim::{l2_augment, l2_penalty};
use crate::scalar::Scalar;

use super::pseudo::{BranchCounts, PseudoLabelRule};

/// Weakly augmented labeled samples with their classes.
#[derive(Debug, Clone)]
pub struct LabeledBatch<T> {
    pub weak: Matrix<T>,
    pub labels: Vec<usize>,
}

/// Both views of the unlabeled samples, with their dataset indices.
#[derive(Debug, Clone)]
pub struct UnlabeledBatch<T> {
    pub indices: Vec<usize>,
    pub weak: Matrix<T>,
    pub strong: Matrix<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLossConfig {
    pub loss_l: LossSpec,
    pub loss_u: LossSpec,
    pub lambda_u: f64,
    pub inv_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput<T> {
    /// Labeled + unlabeled + regularizer.
    pub loss: T,
    pub loss_labeled: T,
    /// Already weighted by lambda_u.
    pub loss_unlabeled: T,
    /// Gradient of `loss`, regularizer included.
    pub grad: ParamVector<T>,
    /// Fraction of unlabeled samples with a non-zero target.
    pub mask_rate: f64,
    pub branches: Option<BranchCounts>,
}

fn one_hot<T: Scalar>(labels: &[usize], k: usize) -> Result<Matrix<T>> {
    let mut m = Matrix::zeros(labels.len(), k);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::shape(format!("label {y} out of range for {k} classes")));
        }
        m.set(i, y, T::one());
    }
    Ok(m)
}

fn labeled_term<T: Scalar>(net: &Network<T>, batch: &LabeledBatch<T>, loss: &LossSpec) -> Result<(T, ParamVector<T>)> {
    if batch.weak.rows() != batch.labels.len() {
        return Err(Error::shape("labeled batch features and labels differ in length"));
    }
    let trace = net.forward(&batch.weak)?;
    let targets = one_hot(&batch.labels, net.num_classes())?;
    let (value, grad_logits) = loss.batch_mean(&targets, &trace.probs, T::one())?;
    Ok((value, net.backward(&trace, &grad_logits)?))
}

fn finish<T: Scalar>(
    net: &Network<T>,
    loss_labeled: T,
    loss_unlabeled: T,
    data_grad: ParamVector<T>,
    inv_c: f64,
    step: u64,
) -> Result<(T, ParamVector<T>)> {
    let params = net.params();
    let inv_c = T::of(inv_c);
    let loss = loss_labeled + loss_unlabeled + l2_penalty(&params, inv_c);
    if !loss.is_finite() {
        return Err(Error::Numerical {
            step,
            what: format!("loss is {loss}"),
        });
    }
    Ok((loss, l2_augment(&data_grad, &params, inv_c)?))
}

/// Supervised objective on one labeled batch.
pub fn supervised_batch_loss<T: Scalar>(
    net: &Network<T>,
    batch: &LabeledBatch<T>,
    loss_l: &LossSpec,
    inv_c: f64,
    step: u64,
) -> Result<BatchOutput<T>> {
    let (loss_labeled, g) = labeled_term(net, batch, loss_l)?;
    let (loss, grad) = finish(net, loss_labeled, T::zero(), g, inv_c, step)?;
    Ok(BatchOutput {
        loss,
        loss_labeled,
        loss_unlabeled: T::zero(),
        grad,
        mask_rate: 0.0,
        branches: None,
    })
}

/// FixMatch objective on one labeled and one unlabeled batch.
///
/// The teacher pass on the weak view only produces targets; no gradient flows
/// through it. The unlabeled mean divides by the full unlabeled batch size,
/// so ignored samples count as zeros.
pub fn fixmatch_batch_loss<T: Scalar>(
    net: &Network<T>,
    labeled: &LabeledBatch<T>,
    unlabeled: &UnlabeledBatch<T>,
    rule: &PseudoLabelRule<'_, T>,
    cfg: &BatchLossConfig,
    step: u64,
) -> Result<BatchOutput<T>> {
    let b = unlabeled.indices.len();
    if unlabeled.weak.rows() != b || unlabeled.strong.rows() != b {
        return Err(Error::shape("unlabeled views and indices differ in length"));
    }
    let (loss_labeled, g_l) = labeled_term(net, labeled, &cfg.loss_l)?;

    let teacher = net.predict_proba(&unlabeled.weak)?;
    let k = net.num_classes();
    let mut targets = Matrix::zeros(b, k);
    let mut counts = BranchCounts::default();
    let mut merged = false;
    let mut used = 0usize;
    for (i, &index) in unlabeled.indices.iter().enumerate() {
        let (target, branch) = rule.target(teacher.row(i), index);
        if let Some(br) = branch {
            counts.record(br);
            merged = true;
        }
        if target.iter().any(|&t| t != T::zero()) {
            used += 1;
        }
        targets.row_mut(i).copy_from_slice(&target);
    }

    let student = net.forward(&unlabeled.strong)?;
    let (loss_unlabeled, grad_logits) = cfg.loss_u.batch_mean(&targets, &student.probs, T::of(cfg.lambda_u))?;
    let g_u = net.backward(&student, &grad_logits)?;
    let data_grad = ParamVector(g_l.iter().zip(g_u.iter()).map(|(&a, &c)| a + c).collect());

    let (loss, grad) = finish(net, loss_labeled, loss_unlabeled, data_grad, cfg.inv_c, step)?;
    Ok(BatchOutput {
        loss,
        loss_labeled,
        loss_unlabeled,
        grad,
        mask_rate: if b == 0 { 0.0 } else { used as f64 / b as f64 },
        branches: merged.then_some(counts),
    })
}
