//! Supervised baseline, FixMatch, and KD-FixMatch training.
//!
//! The siamese teacher/student pair is realized as two forward passes through
//! one set of weights: the teacher sees the weak view and is treated as a
//! constant, the student sees the strong view and receives the gradient.

mod batch;
mod config;
mod pseudo;
mod train;

pub use batch::{
    fixmatch_batch_loss, supervised_batch_loss, BatchLossConfig, BatchOutput, LabeledBatch, UnlabeledBatch,
};
pub use config::{SslConfig, Stage};
pub use pseudo::{generate_pseudo_labels, merge_pseudo_label, ohl, Branch, BranchCounts, PseudoLabelRule};
pub use train::{
    accuracy, run_kd_fixmatch, run_kd_fixmatch_with, train_fixmatch, train_supervised, KdOutcome, SslData, StepMetrics,
    TrainState,
};
