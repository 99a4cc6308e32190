use serde::{Deserialize, Serialize};

use crate::cluster::{PseudoLabelTable, TrustedSet};
use crate::ema::EmaState;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::nn::{argmax, Network};
use crate::scalar::Scalar;

/// One-hot vector at the argmax (smallest index on ties).
pub fn ohl<T: Scalar>(soft: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); soft.len()];
    if !soft.is_empty() {
        out[argmax(soft)] = T::one();
    }
    out
}

fn max_of<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().fold(T::neg_infinity(), T::max)
}

/// Which rule produced an inner-run pseudo label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The inner teacher was confident enough.
    Inner,
    /// The sample is trusted and the frozen outer label was used.
    Trusted,
    /// Neither; the sample contributes nothing.
    Ignored,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub inner: usize,
    pub trusted: usize,
    pub ignored: usize,
}

impl BranchCounts {
    pub fn total(&self) -> usize {
        self.inner + self.trusted + self.ignored
    }

    pub(crate) fn record(&mut self, b: Branch) {
        match b {
            Branch::Inner => self.inner += 1,
            Branch::Trusted => self.trusted += 1,
            Branch::Ignored => self.ignored += 1,
        }
    }
}

/// Resolves the target for unlabeled sample `index` during the inner run:
/// a confident inner prediction wins, then a trusted outer label, otherwise
/// the all-zero (ignored) target.
pub fn merge_pseudo_label<T: Scalar>(
    inner_soft: &[T],
    index: usize,
    trusted: &TrustedSet<T>,
    tau_inner: f64,
    soft_outer: bool,
) -> (Vec<T>, Branch) {
    if max_of(inner_soft) >= T::of(tau_inner) {
        return (ohl(inner_soft), Branch::Inner);
    }
    match trusted.get(index) {
        Some(entry) if soft_outer => (entry.outer.clone(), Branch::Trusted),
        Some(entry) => (ohl(&entry.outer), Branch::Trusted),
        None => (vec![T::zero(); inner_soft.len()], Branch::Ignored),
    }
}

/// How teacher outputs become unlabeled targets.
#[derive(Debug, Clone, Copy)]
pub enum PseudoLabelRule<'a, T> {
    /// Plain confidence filter: one-hot if `max >= tau`, otherwise ignored.
    Threshold { tau: f64 },
    /// Inner-run merging with a trusted set.
    Merge {
        trusted: &'a TrustedSet<T>,
        tau_inner: f64,
        soft_outer: bool,
    },
}

impl<T: Scalar> PseudoLabelRule<'_, T> {
    /// Target for one unlabeled sample given the teacher output. The branch is
    /// reported only for [`PseudoLabelRule::Merge`].
    pub fn target(&self, teacher: &[T], index: usize) -> (Vec<T>, Option<Branch>) {
        match *self {
            PseudoLabelRule::Threshold { tau } => {
                if max_of(teacher) >= T::of(tau) {
                    (ohl(teacher), None)
                } else {
                    (vec![T::zero(); teacher.len()], None)
                }
            }
            PseudoLabelRule::Merge {
                trusted,
                tau_inner,
                soft_outer,
            } => {
                let (t, b) = merge_pseudo_label(teacher, index, trusted, tau_inner, soft_outer);
                (t, Some(b))
            }
        }
    }
}

const EVAL_CHUNK: usize = 512;

/// Clean-input forward pass of the averaged weights over `unlabeled`,
/// recording softmax outputs and embeddings.
pub fn generate_pseudo_labels<T: Scalar>(
    ema: &EmaState<T>,
    arch: &[usize],
    features: &Matrix<T>,
    unlabeled: &[usize],
) -> Result<PseudoLabelTable<T>> {
    let net = Network::from_params(arch, ema.params()?)?;
    let k = net.num_classes();
    let e = net.embedding_dim();
    let mut soft = Vec::with_capacity(unlabeled.len() * k);
    let mut emb = Vec::with_capacity(unlabeled.len() * e);
    for chunk in unlabeled.chunks(EVAL_CHUNK) {
        let trace = net.forward(&features.select_rows(chunk))?;
        soft.extend_from_slice(trace.probs.data());
        emb.extend_from_slice(trace.embedding().data());
    }
    Ok(PseudoLabelTable {
        indices: unlabeled.to_vec(),
        soft: Matrix::new(unlabeled.len(), k, soft)?,
        embeddings: Matrix::new(unlabeled.len(), e, emb)?,
    })
}
