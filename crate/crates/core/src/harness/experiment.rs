//! Multi-seed experiments: data preparation, method dispatch, evaluation, and
//! the per-run files under the output directory.
//!
//! Layout of an output directory:
//!
//! ```text
//! config.json            resolved experiment config
//! seed_{s}.json          one SeedResult per finished seed
//! logs/seed_{s}.jsonl    training metrics (every log_every steps + last)
//! trusted/seed_{s}.csv   trusted set (KD methods only)
//! report.json            aggregate Report
//! table_row.csv          one row of the method x label-budget table
//! ```

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentPolicy, InputKind};
use crate::cluster::{confident_indices, PseudoLabelTable, TrustedSet};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::ssl::{accuracy, run_kd_fixmatch, train_fixmatch, train_supervised, SslConfig, SslData, Stage, TrainState};

use super::data::{gen_blobs, gen_two_moons, sample_balanced_labels, split_80_20, Dataset, UNLABELED};
use super::io::{load_csv, load_kdf1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    Fixmatch,
    KdFixmatchCe,
    KdFixmatchSce,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Baseline,
        Method::Fixmatch,
        Method::KdFixmatchCe,
        Method::KdFixmatchSce,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Fixmatch => "fixmatch",
            Method::KdFixmatchCe => "kd-fixmatch-ce",
            Method::KdFixmatchSce => "kd-fixmatch-sce",
        }
    }

    /// Table label, e.g. `KD-FixMatch-SCE-1.0-0.1`.
    pub fn display_name(self, alpha: Option<f64>, beta: Option<f64>) -> String {
        match self {
            Method::Baseline => "Baseline".into(),
            Method::Fixmatch => "FixMatch".into(),
            Method::KdFixmatchCe => "KD-FixMatch-CE".into(),
            Method::KdFixmatchSce => format!(
                "KD-FixMatch-SCE-{:?}-{:?}",
                alpha.unwrap_or(f64::NAN),
                beta.unwrap_or(f64::NAN)
            ),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.cli_name() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

/// Where the data comes from. Synthetic generators use their own `seed`,
/// fixed across runs, so every run seed sees the same dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSpec {
    TwoMoons {
        #[serde(default = "default_moons_n")]
        n: usize,
        #[serde(default = "default_moons_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Blobs {
        #[serde(default = "default_blobs_k")]
        k: usize,
        #[serde(default = "default_blobs_n")]
        n_per_class: usize,
        #[serde(default = "default_blobs_d")]
        d: usize,
        #[serde(default = "default_blobs_sep")]
        separation: f64,
        #[serde(default = "default_blobs_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
    Kdf1 {
        path: PathBuf,
    },
}

fn default_moons_n() -> usize {
    2500
}
fn default_moons_noise() -> f64 {
    0.1
}
fn default_blobs_k() -> usize {
    4
}
fn default_blobs_n() -> usize {
    200
}
fn default_blobs_d() -> usize {
    2
}
fn default_blobs_sep() -> f64 {
    10.0
}
fn default_blobs_noise() -> f64 {
    1.0
}

impl DataSpec {
    pub fn two_moons() -> Self {
        DataSpec::TwoMoons {
            n: default_moons_n(),
            noise: default_moons_noise(),
            seed: 0,
        }
    }

    pub fn blobs() -> Self {
        DataSpec::Blobs {
            k: default_blobs_k(),
            n_per_class: default_blobs_n(),
            d: default_blobs_d(),
            separation: default_blobs_sep(),
            noise: default_blobs_noise(),
            seed: 0,
        }
    }

    pub fn load(&self) -> Result<Dataset<f64>> {
        match self {
            DataSpec::TwoMoons { n, noise, seed } => gen_two_moons(*n, *noise, *seed),
            DataSpec::Blobs {
                k,
                n_per_class,
                d,
                separation,
                noise,
                seed,
            } => gen_blobs(*k, *n_per_class, *d, *separation, *noise, *seed),
            DataSpec::Csv { path } => load_csv(path),
            DataSpec::Kdf1 { path } => load_kdf1(path),
        }
    }

    /// Synthetic data carries trustworthy labels on every row.
    pub fn is_synthetic(&self) -> bool {
        matches!(self, DataSpec::TwoMoons { .. } | DataSpec::Blobs { .. })
    }
}

impl FromStr for DataSpec {
    type Err = Error;

    /// `two-moons`, `blobs`, `csv:PATH` or `kdf1:PATH`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-moons" => Ok(DataSpec::two_moons()),
            "blobs" => Ok(DataSpec::blobs()),
            _ => match s.split_once(':') {
                Some(("csv", p)) if !p.is_empty() => Ok(DataSpec::Csv { path: p.into() }),
                Some(("kdf1", p)) if !p.is_empty() => Ok(DataSpec::Kdf1 { path: p.into() }),
                _ => Err(Error::config(format!("unknown data source {s:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    /// SCE weights; required for `kd-fixmatch-sce`.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub labels_per_class: usize,
    pub data: DataSpec,
    /// Grid metadata for image-like rows; switches to grid augmentation.
    pub input: Option<InputKind>,
    /// For vector data, replaces the augmentation with jitter at this multiple
    /// of the mean feature standard deviation. `None` keeps `ssl.augment`.
    pub jitter_rel: Option<f64>,
    pub ssl: SslConfig,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Fixmatch,
            alpha: None,
            beta: None,
            labels_per_class: 4,
            data: DataSpec::two_moons(),
            input: None,
            jitter_rel: Some(0.05),
            ssl: SslConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.labels_per_class == 0 {
            return Err(Error::config("labels_per_class must be at least 1"));
        }
        if self.method == Method::KdFixmatchSce {
            match (self.alpha, self.beta) {
                (Some(a), Some(b)) => LossSpec::sce(a, b).validate()?,
                _ => return Err(Error::config("kd-fixmatch-sce needs both alpha and beta")),
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("need at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        if let Some(r) = self.jitter_rel {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::config("jitter_rel must be finite and non-negative"));
            }
        }
        self.ssl.validate()
    }

    pub fn method_name(&self) -> String {
        self.method.display_name(self.alpha, self.beta)
    }

    /// The training config for one seed on the given dataset.
    pub fn ssl_for(&self, ds: &Dataset<f64>, seed: u64) -> Result<SslConfig> {
        let mut ssl = self.ssl.clone();
        ssl.seed = seed;
        if self.method == Method::KdFixmatchSce {
            ssl.loss_u_inner = LossSpec {
                log_clamp_eps: ssl.loss_u_inner.log_clamp_eps,
                ..LossSpec::sce(self.alpha.unwrap_or(1.0), self.beta.unwrap_or(0.0))
            };
        } else if self.method == Method::KdFixmatchCe {
            ssl.loss_u_inner = LossSpec {
                log_clamp_eps: ssl.loss_u_inner.log_clamp_eps,
                ..LossSpec::ce()
            };
        }
        match ds.input_kind {
            InputKind::Grid { h, w, c } => ssl.augment = AugmentPolicy::grid(h, w, c),
            InputKind::Vector => {
                if let Some(r) = self.jitter_rel {
                    ssl.augment = AugmentPolicy::vector(r * ds.mean_feature_std());
                }
            }
        }
        ssl.validate()?;
        Ok(ssl)
    }
}

/// Outcome for one seed. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub test_accuracy: f64,
    pub num_labeled: usize,
    pub num_unlabeled: usize,
    pub num_test: usize,
    pub steps: u64,
    /// Outer run accuracy (KD methods).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionStats>,
}

/// Trusted-set statistics. Noise fractions are measured against the true
/// labels and are only present when those are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub confident: usize,
    pub trusted: usize,
    pub clustered: bool,
    pub confident_noise: Option<f64>,
    pub trusted_noise: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: Method,
    pub method_name: String,
    pub labels_per_class: usize,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<SeedResult>,
    /// Percent.
    pub mean: f64,
    /// Population standard deviation over seeds, percent.
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Report {
    pub fn from_runs(cfg: &ExperimentConfig, dataset: &str, runs: Vec<SeedResult>) -> Self {
        let acc: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        let (mean, std) = mean_std(&acc);
        Report {
            method: cfg.method,
            method_name: cfg.method_name(),
            labels_per_class: cfg.labels_per_class,
            dataset: dataset.to_string(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            runs,
            mean,
            std,
        }
    }

    /// `mean±std` with two decimals.
    pub fn cell(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.std)
    }
}

/// Options that affect files and scheduling but not results.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub log_every: u64,
    pub parallel: usize,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            log_every: 50,
            parallel: 1,
        }
    }
}

fn noise_fraction(labels: &[u16], pairs: impl Iterator<Item = (usize, usize)>) -> Option<f64> {
    let (mut known, mut wrong) = (0usize, 0usize);
    for (row, predicted) in pairs {
        let y = labels[row];
        if y != UNLABELED {
            known += 1;
            wrong += usize::from(usize::from(y) != predicted);
        }
    }
    (known > 0).then(|| wrong as f64 / known as f64)
}

/// Confident-set and trusted-set sizes and true-label noise.
pub fn selection_stats(
    table: &PseudoLabelTable<f64>,
    trusted: &TrustedSet<f64>,
    tau_select: f64,
    labels: &[u16],
) -> SelectionStats {
    let confident = confident_indices(table, tau_select);
    SelectionStats {
        confident: confident.len(),
        trusted: trusted.len(),
        clustered: trusted.clustered,
        confident_noise: noise_fraction(
            labels,
            confident.iter().map(|&r| (table.indices[r], table.predicted(r))),
        ),
        trusted_noise: noise_fraction(labels, trusted.members.iter().map(|(&i, e)| (i, e.predicted))),
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_logs(path: &Path, states: &[&TrainState<f64>], log_every: u64) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in states {
        s.write_log(&mut w, log_every)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains and evaluates one seed, writing its files under `opts.out`.
pub fn run_seed(cfg: &ExperimentConfig, ds: &Dataset<f64>, seed: u64, opts: &RunOptions) -> Result<SeedResult> {
    let ssl = cfg.ssl_for(ds, seed)?;
    let (train, test) = split_80_20(ds, seed)?;
    let (labeled, unlabeled) = sample_balanced_labels(&train, cfg.labels_per_class, seed)?;
    let data = SslData {
        features: &train.features,
        labels: &train.labels,
        labeled: &labeled,
        unlabeled: &unlabeled,
        num_classes: train.num_classes,
    };
    let test_idx: Vec<usize> = (0..test.len()).filter(|&i| test.labels[i] != UNLABELED).collect();
    let eval = |state: &TrainState<f64>| -> Result<f64> {
        Ok(100.0 * accuracy(&state.eval_network()?, &test.features, &test.labels, &test_idx)?)
    };
    let log_path = opts.out.join("logs").join(format!("seed_{seed}.jsonl"));

    let mut result = SeedResult {
        seed,
        test_accuracy: f64::NAN,
        num_labeled: labeled.len(),
        num_unlabeled: unlabeled.len(),
        num_test: test_idx.len(),
        steps: 0,
        outer_test_accuracy: None,
        selection: None,
    };
    match cfg.method {
        Method::Baseline | Method::Fixmatch => {
            let state = if cfg.method == Method::Baseline {
                train_supervised(&ssl, &data)?
            } else {
                train_fixmatch(&ssl, &data, None, Stage::Outer)?
            };
            write_logs(&log_path, &[&state], opts.log_every)?;
            result.test_accuracy = eval(&state)?;
            result.steps = state.step;
        }
        Method::KdFixmatchCe | Method::KdFixmatchSce => {
            let kd = run_kd_fixmatch(&ssl, &data)?;
            write_logs(&log_path, &[&kd.outer, &kd.inner], opts.log_every)?;
            let mut csv = BufWriter::new(fs::File::create(
                opts.out.join("trusted").join(format!("seed_{seed}.csv")),
            )?);
            kd.trusted.write_csv(&mut csv)?;
            csv.flush()?;
            result.test_accuracy = eval(&kd.inner)?;
            result.outer_test_accuracy = Some(eval(&kd.outer)?);
            result.steps = kd.outer.step + kd.inner.step;
            result.selection = Some(selection_stats(&kd.table, &kd.trusted, ssl.tau_select, &train.labels));
        }
    }
    write_json(&opts.out.join(format!("seed_{seed}.json")), &result)?;
    Ok(result)
}

/// Runs every seed, then writes `report.json` and `table_row.csv`. A failing
/// seed aborts the sweep; files of seeds that already finished stay on disk.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    cfg.validate()?;
    let mut ds = cfg.data.load()?;
    if let Some(kind) = cfg.input {
        if let InputKind::Grid { h, w, c } = kind {
            if h * w * c != ds.dim() {
                return Err(Error::config(format!(
                    "grid {h}x{w}x{c} does not match dimension {}",
                    ds.dim()
                )));
            }
        }
        ds.input_kind = kind;
    }
    fs::create_dir_all(opts.out.join("logs"))?;
    if matches!(cfg.method, Method::KdFixmatchCe | Method::KdFixmatchSce) {
        fs::create_dir_all(opts.out.join("trusted"))?;
    }
    write_json(&opts.out.join("config.json"), cfg)?;

    let runs = run_seeds(cfg, &ds, opts)?;
    let report = Report::from_runs(cfg, &ds.provenance, runs);
    write_json(&opts.out.join("report.json"), &report)?;
    fs::write(
        opts.out.join("table_row.csv"),
        format!(
            "method,{}\n{},{}\n",
            report.labels_per_class,
            report.method_name,
            report.cell()
        ),
    )?;
    Ok(report)
}

fn run_seeds(cfg: &ExperimentConfig, ds: &Dataset<f64>, opts: &RunOptions) -> Result<Vec<SeedResult>> {
    let workers = opts.parallel.clamp(1, cfg.seeds.len());
    if workers == 1 {
        return cfg.seeds.iter().map(|&s| run_seed(cfg, ds, s, opts)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SeedResult>>>> = Mutex::new((0..cfg.seeds.len()).map(|_| None).collect());
    let failed = std::sync::atomic::AtomicBool::new(false);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                let r = run_seed(cfg, ds, seed, opts);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    // first error in seed order wins; unstarted seeds are simply absent
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for r in slots.into_inner().expect("result slots poisoned").into_iter().flatten() {
        runs.push(r?);
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names() {
        assert_eq!(
            Method::KdFixmatchSce.display_name(Some(1.0), Some(0.1)),
            "KD-FixMatch-SCE-1.0-0.1"
        );
        assert_eq!("kd-fixmatch-ce".parse::<Method>().unwrap(), Method::KdFixmatchCe);
        assert!("fm".parse::<Method>().is_err());
        assert_eq!(
            serde_json::to_string(&Method::KdFixmatchSce).unwrap(),
            "\"kd-fixmatch-sce\""
        );
    }

    #[test]
    fn data_spec_parsing() {
        assert_eq!("two-moons".parse::<DataSpec>().unwrap(), DataSpec::two_moons());
        assert_eq!(
            "kdf1:/tmp/x.kdf1".parse::<DataSpec>().unwrap(),
            DataSpec::Kdf1 {
                path: "/tmp/x.kdf1".into()
            }
        );
        assert!("csv:".parse::<DataSpec>().is_err());
        let spec: DataSpec = serde_json::from_str(r#"{"kind":"blobs","k":3}"#).unwrap();
        assert!(matches!(
            spec,
            DataSpec::Blobs {
                k: 3,
                n_per_class: 200,
                ..
            }
        ));
    }

    #[test]
    fn sce_requires_weights() {
        let mut cfg = ExperimentConfig {
            method: Method::KdFixmatchSce,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.alpha = Some(1.0);
        cfg.beta = Some(0.1);
        cfg.validate().unwrap();
        cfg.labels_per_class = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn noise_counts_only_known_labels() {
        let labels = [0, 1, UNLABELED, 1];
        assert_eq!(noise_fraction(&labels, [(0, 0), (1, 0), (2, 1)].into_iter()), Some(0.5));
        assert_eq!(noise_fraction(&labels, [(2, 0)].into_iter()), None);
    }

    #[test]
    fn grid_input_switches_augmentation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig {
            method: Method::KdFixmatchCe,
            labels_per_class: 2,
            data: DataSpec::Blobs {
                k: 2,
                n_per_class: 30,
                d: 8,
                separation: 6.0,
                noise: 1.0,
                seed: 0,
            },
            input: Some(InputKind::Grid { h: 2, w: 4, c: 1 }),
            seeds: vec![1],
            ..Default::default()
        };
        cfg.ssl.hidden = vec![8];
        cfg.ssl.epochs_outer = 2;
        cfg.ssl.epochs_inner = 2;
        let ds = cfg.data.load().unwrap();
        let mut grid = ds.clone();
        grid.input_kind = InputKind::Grid { h: 2, w: 4, c: 1 };
        assert_eq!(cfg.ssl_for(&grid, 1).unwrap().augment, AugmentPolicy::grid(2, 4, 1));
        run_experiment(&cfg, &RunOptions::new(dir.path())).unwrap();

        cfg.input = Some(InputKind::Grid { h: 3, w: 3, c: 1 });
        assert!(matches!(
            run_experiment(&cfg, &RunOptions::new(dir.path())),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partial_results_survive_a_failing_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig {
            method: Method::Baseline,
            labels_per_class: 2,
            data: DataSpec::TwoMoons {
                n: 40,
                noise: 0.1,
                seed: 0,
            },
            seeds: vec![1, 2],
            ..Default::default()
        };
        cfg.ssl.hidden = vec![4];
        cfg.ssl.epochs_outer = 2;
        let report = run_experiment(&cfg, &RunOptions::new(dir.path())).unwrap();
        assert_eq!(report.runs.len(), 2);
        assert!(dir.path().join("seed_2.json").exists());

        // 16 training samples per class cannot supply 20 labels each
        let dir = tempfile::tempdir().unwrap();
        cfg.labels_per_class = 20;
        let err = run_experiment(&cfg, &RunOptions::new(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(dir.path().join("config.json").exists());
        assert!(!dir.path().join("report.json").exists());
    }
}
