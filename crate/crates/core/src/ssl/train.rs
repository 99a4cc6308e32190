use std::io::Write;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::Serialize;

use crate::cluster::{build_trusted_set, PseudoLabelTable, TrustedSet};
use crate::ema::EmaState;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{argmax, Network};
use crate::optim::{lr_at, AdamState};
use crate::rng::{self, Rng, Stream};
use crate::scalar::Scalar;

use super::batch::{
    fixmatch_batch_loss, supervised_batch_loss, BatchLossConfig, BatchOutput, LabeledBatch, UnlabeledBatch,
};
use super::config::{SslConfig, Stage};
use super::pseudo::{generate_pseudo_labels, BranchCounts, PseudoLabelRule};

/// Training inputs: the feature matrix plus index sets into it.
#[derive(Debug, Clone, Copy)]
pub struct SslData<'a, T> {
    pub features: &'a Matrix<T>,
    /// Class per row; only read at labeled indices.
    pub labels: &'a [u16],
    pub labeled: &'a [usize],
    pub unlabeled: &'a [usize],
    pub num_classes: usize,
}

impl<T: Scalar> SslData<'_, T> {
    fn validate(&self, need_unlabeled: bool) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("need at least one class"));
        }
        if self.labeled.is_empty() {
            return Err(Error::InsufficientData("no labeled samples".into()));
        }
        if need_unlabeled && self.unlabeled.is_empty() {
            return Err(Error::InsufficientData("no unlabeled samples".into()));
        }
        let n = self.features.rows();
        if self.labels.len() != n {
            return Err(Error::shape(format!(
                "{} labels for {n} feature rows",
                self.labels.len()
            )));
        }
        if let Some(&i) = self.labeled.iter().chain(self.unlabeled).find(|&&i| i >= n) {
            return Err(Error::shape(format!("index {i} out of range for {n} rows")));
        }
        if let Some(&i) = self
            .labeled
            .iter()
            .find(|&&i| usize::from(self.labels[i]) >= self.num_classes)
        {
            return Err(Error::Data(format!("labeled sample {i} has no valid class")));
        }
        Ok(())
    }
}

/// Metrics for one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub phase: Stage,
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss_labeled: f64,
    pub loss_unlabeled: f64,
    pub loss_total: f64,
    pub mask_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch_counts: Option<BranchCounts>,
    pub ema_effective_decay: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub stage: Stage,
    pub network: Network<T>,
    pub adam: AdamState<T>,
    pub ema: EmaState<T>,
    /// Number of optimizer steps taken.
    pub step: u64,
    pub history: Vec<StepMetrics>,
}

impl<T: Scalar> TrainState<T> {
    fn new(cfg: &SslConfig, arch: &[usize], stage: Stage) -> Result<Self> {
        let mut init = rng::stream(cfg.seed, Stream::Init, stage.init_salt());
        let network = Network::init(arch, init.next_u64())?;
        let adam = AdamState::new(network.num_params(), &cfg.adam)?;
        let ema = EmaState::with_counter(network.params(), cfg.ema_decay, cfg.ema_counter_start)?;
        Ok(Self {
            stage,
            network,
            adam,
            ema,
            step: 0,
            history: Vec::new(),
        })
    }

    /// The network used for evaluation: averaged weights once any update has
    /// happened, otherwise the raw initialization.
    pub fn eval_network(&self) -> Result<Network<T>> {
        match self.ema.params() {
            Ok(p) => Network::from_params(self.network.arch(), p),
            Err(Error::UninitializedEma) => Ok(self.network.clone()),
            Err(e) => Err(e),
        }
    }

    /// Writes one JSON line per `log_every` steps, plus the final step.
    pub fn write_log<W: Write>(&self, mut out: W, log_every: u64) -> Result<()> {
        let last = self.history.last().map(|m| m.step);
        for m in &self.history {
            if m.step % log_every.max(1) == 0 || Some(m.step) == last {
                serde_json::to_writer(&mut out, m)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    fn apply(&mut self, out: BatchOutput<T>, epoch: usize, lr: f64) -> Result<()> {
        let mut params = self.network.params();
        self.adam.step(&mut params, &out.grad, T::of(lr))?;
        self.network.set_params(&params)?;
        let decay = self.ema.effective_decay();
        self.ema.update(&params)?;
        self.step += 1;
        self.history.push(StepMetrics {
            phase: self.stage,
            step: self.step,
            epoch,
            lr,
            loss_labeled: out.loss_labeled.as_f64(),
            loss_unlabeled: out.loss_unlabeled.as_f64(),
            loss_total: out.loss.as_f64(),
            mask_rate: out.mask_rate,
            branch_counts: out.branches,
            ema_effective_decay: decay.as_f64(),
        });
        Ok(())
    }
}

/// Endless labeled index stream: reshuffled permutations of the labeled set.
struct CyclicSampler<'a> {
    pool: &'a [usize],
    order: Vec<usize>,
    pos: usize,
}

impl<'a> CyclicSampler<'a> {
    fn new(pool: &'a [usize]) -> Self {
        Self {
            pool,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn take(&mut self, n: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order = self.pool.to_vec();
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

struct Streams {
    batch: Rng,
    weak: Rng,
    strong: Rng,
}

impl Streams {
    fn new(seed: u64, stage: Stage) -> Self {
        let salt = stage.stream_salt();
        Self {
            batch: rng::stream(seed, Stream::Batch, salt),
            weak: rng::stream(seed, Stream::Weak, salt),
            strong: rng::stream(seed, Stream::Strong, salt),
        }
    }
}

fn labeled_batch<T: Scalar>(
    cfg: &SslConfig,
    data: &SslData<'_, T>,
    idx: &[usize],
    rng: &mut Rng,
) -> Result<LabeledBatch<T>> {
    Ok(LabeledBatch {
        weak: cfg.augment.weak_batch(&data.features.select_rows(idx), rng)?,
        labels: idx.iter().map(|&i| usize::from(data.labels[i])).collect(),
    })
}

/// Supervised training on the labeled set only, with the labeled loss,
/// regularizer, Adam, and the moving average. One epoch is one pass over the
/// labeled set in batches of `batch_labeled`.
pub fn train_supervised<T: Scalar>(cfg: &SslConfig, data: &SslData<'_, T>) -> Result<TrainState<T>> {
    cfg.validate()?;
    data.validate(false)?;
    let arch = cfg.arch(data.features.cols(), data.num_classes);
    let mut state = TrainState::new(cfg, &arch, Stage::Supervised)?;
    let mut streams = Streams::new(cfg.seed, Stage::Supervised);
    let steps_per_epoch = data.labeled.len().div_ceil(cfg.batch_labeled);
    let reg = cfg.reg(steps_per_epoch);

    let mut order = data.labeled.to_vec();
    for epoch in 0..cfg.epochs_outer {
        order.shuffle(&mut streams.batch);
        for chunk in order.chunks(cfg.batch_labeled) {
            let batch = labeled_batch(cfg, data, chunk, &mut streams.weak)?;
            let lr = lr_at(&reg, state.step);
            let out = supervised_batch_loss(&state.network, &batch, &cfg.loss_l, cfg.inv_c, state.step + 1)?;
            state.apply(out, epoch, lr)?;
        }
    }
    Ok(state)
}

/// FixMatch training. With `trusted` absent this is plain FixMatch using the
/// stage's threshold; with a trusted set, unlabeled targets come from
/// [`merge_pseudo_label`](super::merge_pseudo_label) at `tau_inner`.
///
/// `Stage::Outer` uses `tau`, `loss_u` and `epochs_outer`; `Stage::Inner`
/// uses `tau_inner`, `loss_u_inner` and `epochs_inner`.
pub fn train_fixmatch<T: Scalar>(
    cfg: &SslConfig,
    data: &SslData<'_, T>,
    trusted: Option<&TrustedSet<T>>,
    stage: Stage,
) -> Result<TrainState<T>> {
    cfg.validate()?;
    data.validate(true)?;
    let (epochs, tau, loss_u) = match stage {
        Stage::Outer => (cfg.epochs_outer, cfg.tau, cfg.loss_u),
        Stage::Inner => (cfg.epochs_inner, cfg.tau_inner, cfg.loss_u_inner),
        Stage::Supervised => return Err(Error::config("FixMatch needs the outer or inner stage")),
    };
    let rule = match trusted {
        None => PseudoLabelRule::Threshold { tau },
        Some(set) => PseudoLabelRule::Merge {
            trusted: set,
            tau_inner: tau,
            soft_outer: cfg.soft_outer_targets,
        },
    };
    let loss_cfg = BatchLossConfig {
        loss_l: cfg.loss_l,
        loss_u,
        lambda_u: cfg.lambda_u,
        inv_c: cfg.inv_c,
    };

    let arch = cfg.arch(data.features.cols(), data.num_classes);
    let mut state = TrainState::new(cfg, &arch, stage)?;
    let mut streams = Streams::new(cfg.seed, stage);
    let steps_per_epoch = data.unlabeled.len().div_ceil(cfg.batch_unlabeled);
    let reg = cfg.reg(steps_per_epoch);
    let mut labeled = CyclicSampler::new(data.labeled);
    let mut order = data.unlabeled.to_vec();

    for epoch in 0..epochs {
        order.shuffle(&mut streams.batch);
        for chunk in order.chunks(cfg.batch_unlabeled) {
            let l_idx = labeled.take(cfg.batch_labeled, &mut streams.batch);
            let l_batch = labeled_batch(cfg, data, &l_idx, &mut streams.weak)?;
            let raw = data.features.select_rows(chunk);
            let u_batch = UnlabeledBatch {
                indices: chunk.to_vec(),
                weak: cfg.augment.weak_batch(&raw, &mut streams.weak)?,
                strong: cfg.augment.strong_batch(&raw, &mut streams.strong)?,
            };
            let lr = lr_at(&reg, state.step);
            let out = fixmatch_batch_loss(&state.network, &l_batch, &u_batch, &rule, &loss_cfg, state.step + 1)?;
            state.apply(out, epoch, lr)?;
        }
    }
    Ok(state)
}

/// Everything produced by a KD-FixMatch run.
#[derive(Debug, Clone)]
pub struct KdOutcome<T> {
    pub outer: TrainState<T>,
    pub table: PseudoLabelTable<T>,
    pub trusted: TrustedSet<T>,
    pub inner: TrainState<T>,
}

/// KD-FixMatch: train the outer network with FixMatch, label the unlabeled
/// pool with its averaged weights, select the trusted subset, then train a
/// freshly initialized inner network with merged pseudo labels.
pub fn run_kd_fixmatch<T: Scalar>(cfg: &SslConfig, data: &SslData<'_, T>) -> Result<KdOutcome<T>> {
    let cluster_seed = rng::stream(cfg.seed, Stream::Cluster, 0).next_u64();
    run_kd_fixmatch_with(cfg, data, |table| {
        build_trusted_set(
            table,
            cfg.tau_select,
            data.num_classes,
            cfg.kmeans_max_iters,
            cluster_seed,
        )
    })
}

/// [`run_kd_fixmatch`] with a caller-supplied trusted-set selection.
pub fn run_kd_fixmatch_with<T: Scalar>(
    cfg: &SslConfig,
    data: &SslData<'_, T>,
    select: impl FnOnce(&PseudoLabelTable<T>) -> Result<TrustedSet<T>>,
) -> Result<KdOutcome<T>> {
    let outer = train_fixmatch(cfg, data, None, Stage::Outer)?;
    let table = generate_pseudo_labels(&outer.ema, outer.network.arch(), data.features, data.unlabeled)?;
    let trusted = select(&table)?;
    let inner = train_fixmatch(cfg, data, Some(&trusted), Stage::Inner)?;
    Ok(KdOutcome {
        outer,
        table,
        trusted,
        inner,
    })
}

/// Fraction of `indices` whose argmax prediction matches the label.
pub fn accuracy<T: Scalar>(net: &Network<T>, features: &Matrix<T>, labels: &[u16], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InsufficientData("no samples to evaluate".into()));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(512) {
        let probs = net.predict_proba(&features.select_rows(chunk))?;
        correct += chunk
            .iter()
            .enumerate()
            .filter(|&(r, &i)| argmax(probs.row(r)) == usize::from(labels[i]))
            .count();
    }
    Ok(correct as f64 / indices.len() as f64)
}
