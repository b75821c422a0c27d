//! Seeded experiment orchestration and artifact rendering.
//!
//! Five entry points cover the lab's workloads:
//!
//! * [`run_benchmark`] — the repeated-seeds protocol (train a baseline, run
//!   every configured method from a fresh copy, evaluate retain/forget
//!   accuracy, the membership attack, and runtime; aggregate mean ± std).
//! * [`run_geometry_study`] — 2-D decision-boundary snapshots for baseline /
//!   retrain / JiT / naive-mislabel models on a dense grid, plus pairwise
//!   grid agreement.
//! * [`run_sigmoid_study`] — the 1-D curve study: smooth a boundary pair and
//!   a saturated pair out of a sigmoid fit and report curve displacement.
//! * [`run_entropy_study`] — image-scale forget-set entropy comparison
//!   (baseline vs retrain vs JiT) with the signed-rank test and attack
//!   scores.
//! * [`run_sensitivity_sweep`] — the (η, σ) grid with one seeded repeat per
//!   cell.
//!
//! [`render_reports`] persists results as a CSV table and plain SVG 1.1
//! figures, all byte-deterministic for identical inputs. Repeats run in
//! parallel under rayon; everything is derived from `base_seed + repeat`
//! through named substreams, so the outputs are reproducible from the config
//! alone.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    self, ForgetPartition, ForgetSpec, LabeledDataset, SyntheticImageParams, CIFAR_CLASSES,
};
use crate::error::{Error, Result};
use crate::eval::{accuracy, mia_score, output_entropy, time_method, wilcoxon_signed_rank};
use crate::eval::{EntropySummary, WilcoxonResult};
use crate::models::{init_model, train_sgd, Model, ModelSpec, TrainConfig};
use crate::seeding;
use crate::unlearn::{
    amnesiac_baseline, boundary_shrink_baseline, finetune_baseline, jit_unlearn, retrain_oracle,
    OutputSpace, UnlearnConfig, DESK_2D_ETA, DESK_2D_N_PERTURB, DESK_2D_SIGMA,
};

/// Default repeat count for benchmark runs.
pub const DEFAULT_REPEATS: usize = 10;
/// Default boundary-grid resolution (cells per axis).
pub const DEFAULT_GRID_RESOLUTION: usize = 200;
/// Margin added around the data bounding box for boundary grids, as a
/// fraction of each axis span.
pub const GRID_MARGIN: f64 = 0.10;
/// Cap on the member / nonmember pool sizes fed to the membership attack.
pub const MIA_POOL_CAP: usize = 100;

fn one() -> usize {
    1
}

fn default_repeats() -> usize {
    DEFAULT_REPEATS
}

// ---------------------------------------------------------------------------
// Config tree
// ---------------------------------------------------------------------------

/// Training section of a config file; becomes a [`TrainConfig`] once the
/// repeat's shuffle stream is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { epochs: t.epochs, learning_rate: t.learning_rate, batch_size: t.batch_size }
    }
}

impl TrainSection {
    #[must_use]
    pub fn to_config(self, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            shuffle_seed,
            ..TrainConfig::default()
        }
    }
}

/// JiT parameters as they appear in config files; the per-repeat noise seed
/// is derived by the runner, never configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitSection {
    pub eta: f64,
    pub sigma: f64,
    pub n_perturb: usize,
    #[serde(default = "one")]
    pub epochs: usize,
    #[serde(default)]
    pub space: OutputSpace,
}

impl Default for JitSection {
    /// The 2-D desk defaults (see the unlearn module).
    fn default() -> Self {
        Self {
            eta: DESK_2D_ETA,
            sigma: DESK_2D_SIGMA,
            n_perturb: DESK_2D_N_PERTURB,
            epochs: 1,
            space: OutputSpace::default(),
        }
    }
}

impl JitSection {
    #[must_use]
    pub fn to_config(self, seed: u64) -> UnlearnConfig {
        let mut cfg = UnlearnConfig::new(self.eta, self.sigma, self.n_perturb, seed);
        cfg.epochs = self.epochs;
        cfg.space = self.space;
        cfg
    }

    pub fn validate(self) -> Result<()> {
        self.to_config(0).validate()
    }
}

/// Synthetic 2-D blob mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsSection {
    pub n_per_class: usize,
    pub means: Vec<Vec<f64>>,
    pub std: f64,
}

/// Blob mixture with several blobs per class, tagged by blob of origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsGroupedSection {
    pub n_per_blob: usize,
    pub means: Vec<Vec<f64>>,
    pub class_of_blob: Vec<usize>,
    pub std: f64,
}

/// Interleaved half-moons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoonsSection {
    pub n_per_class: usize,
    pub noise_std: f64,
}

/// Deterministic synthetic image corpus in CIFAR-10 binary layout, written
/// under the experiment's output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticImagesSection {
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Per-class training subsample; `None` keeps the whole corpus.
    #[serde(default)]
    pub subsample_per_class: Option<usize>,
    /// Pixel noise std; `None` uses the corpus default.
    #[serde(default)]
    pub noise_std: Option<f64>,
}

/// Real CIFAR-10 binary batches on disk: `path` holds `data_batch_*.bin`
/// plus `test_batch.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifarDirSection {
    pub path: PathBuf,
    #[serde(default)]
    pub subsample_per_class: Option<usize>,
}

/// Dataset choice. `kind` selects the variant in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Blobs(BlobsSection),
    BlobsGrouped(BlobsGroupedSection),
    Moons(MoonsSection),
    SyntheticImages(SyntheticImagesSection),
    CifarDir(CifarDirSection),
}

impl DatasetConfig {
    /// Realizes the dataset as a (train, test) pair. Generated corpora land
    /// under `scratch`; the draw is derived from `seed` through named
    /// substreams so the same config always yields the same data.
    pub fn materialize(&self, seed: u64, scratch: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
        let train_seed = seeding::derive_seed(seed, "data-train");
        let test_seed = seeding::derive_seed(seed, "data-test");
        match self {
            Self::Blobs(b) => Ok((
                data::make_blobs(b.n_per_class, &b.means, b.std, train_seed)?,
                data::make_blobs(b.n_per_class, &b.means, b.std, test_seed)?,
            )),
            Self::BlobsGrouped(b) => Ok((
                data::make_blobs_grouped(b.n_per_blob, &b.means, &b.class_of_blob, b.std, train_seed)?,
                data::make_blobs_grouped(b.n_per_blob, &b.means, &b.class_of_blob, b.std, test_seed)?,
            )),
            Self::Moons(m) => Ok((
                data::make_moons(m.n_per_class, m.noise_std, train_seed)?,
                data::make_moons(m.n_per_class, m.noise_std, test_seed)?,
            )),
            Self::SyntheticImages(s) => {
                let mut params = SyntheticImageParams::default();
                if let Some(std) = s.noise_std {
                    params.noise_std = std;
                }
                let dir = scratch.join("synthetic-images");
                let (train_path, test_path) = data::write_synthetic_images(
                    &dir,
                    s.train_per_class,
                    s.test_per_class,
                    params,
                    seeding::derive_seed(seed, "corpus"),
                )?;
                let sub_seed = seeding::derive_seed(seed, "data-subsample");
                Ok((
                    data::load_cifar10(&train_path, s.subsample_per_class, sub_seed)?,
                    data::load_cifar10(&test_path, None, 0)?,
                ))
            }
            Self::CifarDir(c) => {
                let test_path = c.path.join("test_batch.bin");
                if !test_path.is_file() {
                    return Err(Error::Config(format!(
                        "cifar_dir needs {} to exist",
                        test_path.display()
                    )));
                }
                let sub_seed = seeding::derive_seed(seed, "data-subsample");
                Ok((
                    data::load_cifar10(&c.path, c.subsample_per_class, sub_seed)?,
                    data::load_cifar10(&test_path, None, 0)?,
                ))
            }
        }
    }
}

/// Model choice; input dimensionality and class count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelConfig {
    Mlp(MlpSection),
    SmallCnn,
    Sigmoid1d(Sigmoid1dSection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSection {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Sigmoid1dSection {
    #[serde(default)]
    pub hidden: Vec<usize>,
}

impl ModelConfig {
    pub fn to_spec(&self, input_dim: usize, classes: usize, seed: u64) -> Result<ModelSpec> {
        match self {
            Self::Mlp(m) => ModelSpec::mlp(input_dim, m.hidden.clone(), classes, seed),
            Self::SmallCnn => ModelSpec::small_cnn(classes, seed),
            Self::Sigmoid1d(s) => {
                if input_dim != 1 || classes != 2 {
                    return Err(Error::Config(format!(
                        "sigmoid1d wants 1-D two-class data, got d={input_dim} c={classes}"
                    )));
                }
                ModelSpec::sigmoid1d_deep(s.hidden.clone(), seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmnesiacSection {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryShrinkSection {
    pub fgsm_eps: f64,
    pub steps: usize,
    pub lr: f64,
}

/// One benchmark method; `name` selects the variant in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MethodConfig {
    Baseline,
    Retrain,
    Finetune(FinetuneSection),
    Amnesiac(AmnesiacSection),
    BoundaryShrink(BoundaryShrinkSection),
    Jit(JitSection),
}

impl MethodConfig {
    /// Stable method label used in result rows and CSV output.
    #[must_use]
    pub fn label(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Retrain => "retrain",
            Self::Finetune(_) => "finetune",
            Self::Amnesiac(_) => "amnesiac",
            Self::BoundaryShrink(_) => "boundary_shrink",
            Self::Jit(_) => "jit",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be finite and > 0, got {v}")))
            }
        };
        match self {
            Self::Baseline | Self::Retrain => Ok(()),
            Self::Finetune(f) => positive(f.lr, "finetune lr"),
            Self::Amnesiac(a) => positive(a.lr, "amnesiac lr"),
            Self::BoundaryShrink(b) => {
                positive(b.fgsm_eps, "boundary_shrink fgsm_eps")?;
                positive(b.lr, "boundary_shrink lr")?;
                if b.steps == 0 {
                    return Err(Error::Config("boundary_shrink needs steps >= 1".into()));
                }
                Ok(())
            }
            Self::Jit(j) => j.validate(),
        }
    }
}

/// Root config for [`run_benchmark`], usually parsed from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    pub forget: ForgetSpec,
    pub methods: Vec<MethodConfig>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses a TOML config. Unknown keys anywhere in the tree are errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        let mut seen = HashSet::new();
        for m in &self.methods {
            m.validate()?;
            if !seen.insert(m.label()) {
                return Err(Error::Config(format!(
                    "duplicate method '{}' — one row per method",
                    m.label()
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Result aggregation
// ---------------------------------------------------------------------------

/// Summary statistics over per-repeat values. `std` is the population
/// standard deviation, so a single repeat reports exactly 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

impl Stats {
    #[must_use]
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Self { mean, std: var.sqrt(), min: sorted[0], max: sorted[sorted.len() - 1], median }
    }
}

/// Metrics from one successful (method, repeat) cell.
#[derive(Debug, Clone, Copy)]
struct CellMetrics {
    dr_acc: f64,
    df_acc: f64,
    mia: f64,
    runtime_s: f64,
}

/// A failed (method, repeat) cell, kept as a record instead of aborting the
/// run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellError {
    pub method: String,
    pub repeat: usize,
    pub seed: u64,
    pub message: String,
}

/// One aggregated row of the benchmark table.
#[derive(Debug, Clone)]
pub struct MethodRow {
    pub method: String,
    pub forget_target: String,
    /// Seeds of the successful repeats, ascending.
    pub seeds: Vec<u64>,
    pub dr_acc: Stats,
    pub df_acc: Stats,
    pub mia: Stats,
    pub runtime_s: Stats,
}

/// Benchmark output: one row per method plus the failures that were skipped.
#[derive(Debug, Clone)]
pub struct ResultTable {
    pub rows: Vec<MethodRow>,
    pub errors: Vec<CellError>,
}

/// Fixed CSV schema for benchmark tables.
pub const RESULT_CSV_HEADER: &str = "method,forget_target,seed_count,dr_acc_mean,dr_acc_std,\
df_acc_mean,df_acc_std,mia_mean,mia_std,runtime_mean_s,runtime_std_s";

impl ResultTable {
    /// Renders the fixed-schema CSV. Runtime columns are the only
    /// nondeterministic output.
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RESULT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.method,
                r.forget_target,
                r.seeds.len(),
                r.dr_acc.mean,
                r.dr_acc.std,
                r.df_acc.mean,
                r.df_acc.std,
                r.mia.mean,
                r.mia.std,
                r.runtime_s.mean,
                r.runtime_s.std,
            );
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Benchmark protocol
// ---------------------------------------------------------------------------

/// Test samples against which retain accuracy is measured: for full-class
/// forgetting the forgotten class is excluded; for sub-class forgetting the
/// forgotten blob's tag is excluded when the test set carries tags; random
/// and explicit forgetting keep the whole test set.
pub fn retain_test_set(test: &LabeledDataset, spec: &ForgetSpec) -> Result<LabeledDataset> {
    let keep: Vec<usize> = match spec {
        ForgetSpec::FullClass(c) => {
            (0..test.len()).filter(|&i| test.labels[i] != *c).collect()
        }
        ForgetSpec::SubClass(s) => match &test.subclasses {
            Some(tags) => (0..test.len()).filter(|&i| tags[i] != *s).collect(),
            None => (0..test.len()).collect(),
        },
        ForgetSpec::Random { .. } | ForgetSpec::Explicit(_) => (0..test.len()).collect(),
    };
    if keep.is_empty() {
        return Err(Error::Config("retain test set is empty after filtering".into()));
    }
    test.subset(&keep)
}

/// First-`cap` prefix of a dataset (the attack canonicalizes pool order
/// internally, so a deterministic prefix is sufficient).
fn pool_prefix(set: &LabeledDataset, cap: usize) -> Result<LabeledDataset> {
    let take: Vec<usize> = (0..set.len().min(cap)).collect();
    set.subset(&take)
}

/// FNV-1a over the exact parameter bits; used for the isolation invariant.
fn param_hash(model: &Model) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in model.flat_params() {
        for byte in v.to_bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Runs one method from a fresh copy of the baseline and returns the
/// unlearned (or untouched) model.
fn apply_method(
    method: &MethodConfig,
    baseline: &Model,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
    part: &ForgetPartition,
    repeat_seed: u64,
) -> Result<Model> {
    match method {
        MethodConfig::Baseline => Ok(baseline.clone()),
        MethodConfig::Retrain => Ok(retrain_oracle(spec, &part.retain, train_cfg)?.0),
        MethodConfig::Finetune(f) => {
            let mut m = baseline.clone();
            finetune_baseline(&mut m, &part.retain, f.epochs, f.lr)?;
            Ok(m)
        }
        MethodConfig::Amnesiac(a) => {
            let mut m = baseline.clone();
            let seed = seeding::derive_seed(repeat_seed, "amnesiac");
            amnesiac_baseline(&mut m, &part.forget, &part.retain, seed, a.epochs, a.lr)?;
            Ok(m)
        }
        MethodConfig::BoundaryShrink(b) => {
            let mut m = baseline.clone();
            boundary_shrink_baseline(&mut m, &part.forget, b.fgsm_eps, b.steps, b.lr)?;
            Ok(m)
        }
        MethodConfig::Jit(j) => {
            let mut m = baseline.clone();
            let cfg = j.to_config(seeding::derive_seed(repeat_seed, "jit"));
            jit_unlearn(&mut m, &part.forget.inputs, &cfg)?;
            Ok(m)
        }
    }
}

/// The repeated-seeds benchmark. Repeat `r` derives every random stream from
/// `base_seed + r`; the dataset itself is drawn once from `base_seed`.
/// Method failures become error records, not aborts.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let (train_data, test_data) = cfg.dataset.materialize(cfg.base_seed, &cfg.output_dir)?;
    let part = data::split_forget(&train_data, &cfg.forget)?;
    if part.forget.is_empty() {
        return Err(Error::Config("forget set is empty".into()));
    }
    if part.retain.is_empty() {
        return Err(Error::Config("retain set is empty".into()));
    }
    let retain_test = retain_test_set(&test_data, &cfg.forget)?;
    let member_pool = pool_prefix(&part.retain, MIA_POOL_CAP)?;
    let nonmember_pool = pool_prefix(&retain_test, MIA_POOL_CAP)?;

    // One entry per repeat: per-method outcome in config order.
    let per_repeat: Vec<Vec<std::result::Result<CellMetrics, String>>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| -> Result<Vec<std::result::Result<CellMetrics, String>>> {
            let repeat_seed = cfg.base_seed.wrapping_add(r as u64);
            let spec = cfg.model.to_spec(
                train_data.dim,
                train_data.classes,
                seeding::derive_seed(repeat_seed, "model-init"),
            )?;
            let train_cfg = cfg.train.to_config(seeding::derive_seed(repeat_seed, "shuffle"));
            let mut baseline = init_model(&spec)?;
            train_sgd(&mut baseline, &train_data, &train_cfg)?;
            let baseline_hash = param_hash(&baseline);
            let attack_seed = seeding::derive_seed(repeat_seed, "attack");

            let mut outcomes = Vec::with_capacity(cfg.methods.len());
            for method in &cfg.methods {
                let timed = time_method(|| {
                    apply_method(method, &baseline, &spec, &train_cfg, &part, repeat_seed)
                });
                let outcome = timed.and_then(|(model, runtime_s)| {
                    let dr_acc = accuracy(&model, &retain_test)?;
                    let df_acc = accuracy(&model, &part.forget)?;
                    let mia =
                        mia_score(&model, &part.forget, &member_pool, &nonmember_pool, attack_seed)?
                            .score;
                    Ok(CellMetrics { dr_acc, df_acc, mia, runtime_s })
                });
                if param_hash(&baseline) != baseline_hash {
                    return Err(Error::Contract(
                        "method run mutated the shared baseline checkpoint".into(),
                    ));
                }
                outcomes.push(outcome.map_err(|e| e.to_string()));
            }
            Ok(outcomes)
        })
        .collect::<Result<_>>()?;

    Ok(aggregate_rows(&cfg.methods, &cfg.forget.to_string(), cfg.base_seed, &per_repeat))
}

/// Folds per-repeat method outcomes into one row per method; failures become
/// [`CellError`] records and are excluded from the statistics.
fn aggregate_rows(
    methods: &[MethodConfig],
    forget_target: &str,
    base_seed: u64,
    per_repeat: &[Vec<std::result::Result<CellMetrics, String>>],
) -> ResultTable {
    let mut rows = Vec::with_capacity(methods.len());
    let mut errors = Vec::new();
    for (mi, method) in methods.iter().enumerate() {
        let mut seeds = Vec::new();
        let (mut dr, mut df, mut mia, mut rt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (r, outcomes) in per_repeat.iter().enumerate() {
            let seed = base_seed.wrapping_add(r as u64);
            match &outcomes[mi] {
                Ok(m) => {
                    seeds.push(seed);
                    dr.push(m.dr_acc);
                    df.push(m.df_acc);
                    mia.push(m.mia);
                    rt.push(m.runtime_s);
                }
                Err(msg) => errors.push(CellError {
                    method: method.label().into(),
                    repeat: r,
                    seed,
                    message: msg.clone(),
                }),
            }
        }
        rows.push(MethodRow {
            method: method.label().into(),
            forget_target: forget_target.to_string(),
            seeds,
            dr_acc: Stats::from_samples(&dr),
            df_acc: Stats::from_samples(&df),
            mia: Stats::from_samples(&mia),
            runtime_s: Stats::from_samples(&rt),
        });
    }
    ResultTable { rows, errors }
}

// ---------------------------------------------------------------------------
// Geometry study (2-D boundary snapshots)
// ---------------------------------------------------------------------------

/// Config for [`run_geometry_study`]; the dataset must be 2-D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryStudyConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainSection,
    /// MLP hidden widths.
    pub hidden: Vec<usize>,
    pub forget: ForgetSpec,
    #[serde(default)]
    pub jit: JitSection,
    /// Epochs of batch-1 training toward false labels for the naive model.
    #[serde(default = "default_naive_epochs")]
    pub naive_epochs: usize,
    #[serde(default = "default_naive_lr")]
    pub naive_lr: f64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_naive_epochs() -> usize {
    10
}

fn default_naive_lr() -> f64 {
    0.1
}

fn default_resolution() -> usize {
    DEFAULT_GRID_RESOLUTION
}

/// Dense evaluation of a model over a 2-D box: per-cell argmax and softmax
/// confidence (max probability), row-major with y as the outer axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub argmax: Vec<usize>,
    pub confidence: Vec<f64>,
}

impl BoundaryGrid {
    /// Evaluates `model` on the `resolution`² grid spanning `bounds`
    /// (inclusive endpoints).
    pub fn evaluate(model: &Model, bounds: &[(f64, f64); 2], resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Config("grid resolution must be >= 2".into()));
        }
        if model.spec.input_dim != 2 {
            return Err(Error::Config(format!(
                "boundary grids need a 2-D model, got d={}",
                model.spec.input_dim
            )));
        }
        let line = |lo: f64, hi: f64| -> Vec<f64> {
            (0..resolution)
                .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
                .collect()
        };
        let xs = line(bounds[0].0, bounds[0].1);
        let ys = line(bounds[1].0, bounds[1].1);
        let cells: Vec<(usize, f64)> = ys
            .par_iter()
            .flat_map_iter(|&y| xs.iter().map(move |&x| (x, y)))
            .map(|(x, y)| -> Result<(usize, f64)> {
                let p = model.predict_proba(&[x, y])?;
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                Ok((best, p[best]))
            })
            .collect::<Result<_>>()?;
        let (argmax, confidence) = cells.into_iter().unzip();
        Ok(Self { xs, ys, argmax, confidence })
    }
}

/// Fraction of grid cells on which two snapshots agree about the argmax.
pub fn grid_agreement(a: &BoundaryGrid, b: &BoundaryGrid) -> Result<f64> {
    if a.argmax.len() != b.argmax.len() || a.argmax.is_empty() {
        return Err(Error::Dimension(format!(
            "grids must have equal nonzero cell counts, got {} and {}",
            a.argmax.len(),
            b.argmax.len()
        )));
    }
    let equal = a.argmax.iter().zip(&b.argmax).filter(|(x, y)| x == y).count();
    Ok(equal as f64 / a.argmax.len() as f64)
}

/// Per-forget-point confidence movement under JiT.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgetPointReport {
    pub x: Vec<f64>,
    /// Baseline softmax confidence (max probability) at the point.
    pub baseline_confidence: f64,
    /// Confidence of the JiT-unlearned model at the same point.
    pub jit_confidence: f64,
}

/// Output of [`run_geometry_study`].
#[derive(Debug, Clone)]
pub struct GeometryReport {
    /// Training data (rendered under the heatmaps).
    pub data: LabeledDataset,
    /// Grid bounds per axis, data bounding box + margin.
    pub bounds: [(f64, f64); 2],
    pub resolution: usize,
    /// Snapshots in fixed order: baseline, retrain, jit, naive.
    pub grids: Vec<(String, BoundaryGrid)>,
    /// All pairwise agreements, in snapshot order.
    pub agreements: Vec<(String, String, f64)>,
    pub forget_points: Vec<ForgetPointReport>,
}

impl GeometryReport {
    /// Looks up a pairwise agreement by snapshot names (order-insensitive).
    pub fn agreement(&self, a: &str, b: &str) -> Result<f64> {
        self.agreements
            .iter()
            .find(|(x, y, _)| (x == a && y == b) || (x == b && y == a))
            .map(|(_, _, v)| *v)
            .ok_or_else(|| Error::Index(format!("no agreement recorded for ({a}, {b})")))
    }
}

/// Bounding box of the data plus [`GRID_MARGIN`] on each side.
fn data_bounds(data: &LabeledDataset) -> Result<[(f64, f64); 2]> {
    if data.dim != 2 {
        return Err(Error::Config(format!("geometry study needs 2-D data, got d={}", data.dim)));
    }
    let mut bounds = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for x in &data.inputs {
        for (d, b) in bounds.iter_mut().enumerate() {
            b.0 = b.0.min(x[d]);
            b.1 = b.1.max(x[d]);
        }
    }
    for b in &mut bounds {
        let margin = GRID_MARGIN * (b.1 - b.0);
        b.0 -= margin;
        b.1 += margin;
    }
    Ok(bounds)
}

/// Trains the forget samples toward a false label ((argmax + 1) mod c) with
/// batch-1 SGD — the destructive strawman the boundary figures contrast
/// against.
fn naive_mislabel(
    baseline: &Model,
    forget: &LabeledDataset,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Model> {
    let mut model = baseline.clone();
    let mut false_labels = Vec::with_capacity(forget.len());
    for x in &forget.inputs {
        false_labels.push((model.predict_class(x)? + 1) % model.spec.classes);
    }
    let mislabeled = LabeledDataset::new(
        format!("{}-naive", forget.name),
        forget.dim,
        model.spec.classes,
        forget.inputs.clone(),
        false_labels,
        None,
    )?;
    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        batch_size: 1,
        shuffle_seed: seeding::derive_seed(seed, "naive"),
        ..TrainConfig::default()
    };
    train_sgd(&mut model, &mislabeled, &cfg)?;
    Ok(model)
}

/// Boundary snapshots for baseline / retrain / JiT / naive-mislabel over a
/// dense grid, with pairwise agreements and per-forget-point confidence.
pub fn run_geometry_study(cfg: &GeometryStudyConfig, scratch: &Path) -> Result<GeometryReport> {
    cfg.jit.validate()?;
    let (train_data, _test) = cfg.dataset.materialize(cfg.seed, scratch)?;
    let bounds = data_bounds(&train_data)?;
    let part = data::split_forget(&train_data, &cfg.forget)?;
    if part.forget.is_empty() {
        return Err(Error::Config("forget set is empty".into()));
    }

    let spec = ModelSpec::mlp(
        2,
        cfg.hidden.clone(),
        train_data.classes,
        seeding::derive_seed(cfg.seed, "model-init"),
    )?;
    let train_cfg = cfg.train.to_config(seeding::derive_seed(cfg.seed, "shuffle"));
    let mut baseline = init_model(&spec)?;
    train_sgd(&mut baseline, &train_data, &train_cfg)?;

    let (retrain, _) = retrain_oracle(&spec, &part.retain, &train_cfg)?;
    let mut jit = baseline.clone();
    let jit_cfg = cfg.jit.to_config(seeding::derive_seed(cfg.seed, "jit"));
    jit_unlearn(&mut jit, &part.forget.inputs, &jit_cfg)?;
    let naive = naive_mislabel(&baseline, &part.forget, cfg.naive_epochs, cfg.naive_lr, cfg.seed)?;

    let names = ["baseline", "retrain", "jit", "naive"];
    let models = [&baseline, &retrain, &jit, &naive];
    let grids: Vec<(String, BoundaryGrid)> = names
        .iter()
        .zip(models)
        .map(|(name, m)| Ok(((*name).to_string(), BoundaryGrid::evaluate(m, &bounds, cfg.resolution)?)))
        .collect::<Result<_>>()?;

    let mut agreements = Vec::new();
    for i in 0..grids.len() {
        for j in i + 1..grids.len() {
            agreements.push((
                grids[i].0.clone(),
                grids[j].0.clone(),
                grid_agreement(&grids[i].1, &grids[j].1)?,
            ));
        }
    }

    let mut forget_points = Vec::with_capacity(part.forget.len());
    for x in &part.forget.inputs {
        let conf = |m: &Model| -> Result<f64> {
            let p = m.predict_proba(x)?;
            Ok(p.iter().fold(0.0_f64, |a, &b| a.max(b)))
        };
        forget_points.push(ForgetPointReport {
            x: x.clone(),
            baseline_confidence: conf(&baseline)?,
            jit_confidence: conf(&jit)?,
        });
    }

    Ok(GeometryReport {
        data: train_data,
        bounds,
        resolution: cfg.resolution,
        grids,
        agreements,
        forget_points,
    })
}

// ---------------------------------------------------------------------------
// Sigmoid study (1-D curve)
// ---------------------------------------------------------------------------

/// Config for [`run_sigmoid_study`]. The defaults reproduce the 1-D figure:
/// two blobs at ±`blob_center`, a small sigmoid-unit network, one smoothing
/// pass over a symmetric pair straddling the fitted 0.5 crossing, and a
/// matched pair deep in the saturated tails as the low-curvature control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmoidStudyConfig {
    #[serde(default = "default_sig_n")]
    pub n_per_class: usize,
    #[serde(default = "default_sig_center")]
    pub blob_center: f64,
    #[serde(default = "default_sig_std")]
    pub blob_std: f64,
    #[serde(default = "default_sig_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainSection,
    /// Half-width of the boundary pair around the fitted crossing.
    #[serde(default = "default_sig_offset")]
    pub boundary_offset: f64,
    /// Position of the saturated pair (±saturated_x).
    #[serde(default = "default_sig_saturated")]
    pub saturated_x: f64,
    #[serde(default = "default_sig_jit")]
    pub jit: JitSection,
    #[serde(default = "default_sig_grid")]
    pub grid_points: usize,
    #[serde(default = "default_sig_half_width")]
    pub grid_half_width: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sig_n() -> usize {
    120
}
fn default_sig_center() -> f64 {
    1.0
}
fn default_sig_std() -> f64 {
    0.35
}
fn default_sig_hidden() -> Vec<usize> {
    vec![16]
}
fn default_sig_offset() -> f64 {
    0.15
}
fn default_sig_saturated() -> f64 {
    2.5
}
fn default_sig_jit() -> JitSection {
    JitSection { eta: 0.2, sigma: 0.5, n_perturb: 32, epochs: 1, space: OutputSpace::Logits }
}
fn default_sig_grid() -> usize {
    201
}
fn default_sig_half_width() -> f64 {
    3.0
}

impl Default for SigmoidStudyConfig {
    fn default() -> Self {
        Self {
            n_per_class: default_sig_n(),
            blob_center: default_sig_center(),
            blob_std: default_sig_std(),
            hidden: default_sig_hidden(),
            train: TrainSection::default(),
            boundary_offset: default_sig_offset(),
            saturated_x: default_sig_saturated(),
            jit: default_sig_jit(),
            grid_points: default_sig_grid(),
            grid_half_width: default_sig_half_width(),
            seed: 0,
        }
    }
}

/// Before/after value of the learned curve at one probed forget point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointReport {
    pub x: f64,
    pub f_before: f64,
    pub f_after: f64,
}

impl PointReport {
    /// Displacement toward the 0.5 level set; positive means pulled toward
    /// the boundary.
    #[must_use]
    pub fn pull(&self) -> f64 {
        (self.f_before - 0.5).abs() - (self.f_after - 0.5).abs()
    }
}

/// Output of [`run_sigmoid_study`].
#[derive(Debug, Clone)]
pub struct SigmoidStudyReport {
    /// Grid abscissae shared by all curves.
    pub grid_xs: Vec<f64>,
    pub curve_before: Vec<f64>,
    /// Curve after smoothing the boundary pair out of the fit.
    pub curve_boundary_after: Vec<f64>,
    /// Curve after smoothing the saturated pair out of the fit.
    pub curve_saturated_after: Vec<f64>,
    /// Fitted 0.5 crossing of the baseline curve.
    pub crossing: f64,
    /// Upper member of the boundary pair — the designated boundary probe.
    pub boundary_probe: PointReport,
    /// Lower member of the boundary pair.
    pub boundary_twin: PointReport,
    /// Upper member of the saturated pair — the designated saturated probe.
    pub saturated_probe: PointReport,
    /// Lower member of the saturated pair.
    pub saturated_twin: PointReport,
    pub boundary_max_displacement: f64,
    pub saturated_max_displacement: f64,
    /// Training data (rendered as rug marks).
    pub data: LabeledDataset,
}

/// Probability of class 1 at a scalar input.
fn sigmoid_value(model: &Model, x: f64) -> Result<f64> {
    Ok(model.predict_proba(&[x])?[1])
}

/// The 1-D study: fit, locate the crossing, smooth out a boundary pair and a
/// saturated pair (separately, from fresh copies), and report both curves
/// and all probed points.
pub fn run_sigmoid_study(cfg: &SigmoidStudyConfig) -> Result<SigmoidStudyReport> {
    cfg.jit.validate()?;
    if cfg.grid_points < 2 {
        return Err(Error::Config("sigmoid study needs at least 2 grid points".into()));
    }
    let data = data::make_blobs(
        cfg.n_per_class,
        &[vec![-cfg.blob_center], vec![cfg.blob_center]],
        cfg.blob_std,
        seeding::derive_seed(cfg.seed, "data-train"),
    )?;
    let spec =
        ModelSpec::sigmoid1d_deep(cfg.hidden.clone(), seeding::derive_seed(cfg.seed, "model-init"))?;
    let train_cfg = cfg.train.to_config(seeding::derive_seed(cfg.seed, "shuffle"));
    let mut model = init_model(&spec)?;
    train_sgd(&mut model, &data, &train_cfg)?;

    let grid_xs: Vec<f64> = (0..cfg.grid_points)
        .map(|i| {
            -cfg.grid_half_width
                + 2.0 * cfg.grid_half_width * i as f64 / (cfg.grid_points - 1) as f64
        })
        .collect();
    let curve = |m: &Model| -> Result<Vec<f64>> {
        grid_xs.iter().map(|&x| sigmoid_value(m, x)).collect()
    };
    let curve_before = curve(&model)?;

    // Fine search for the 0.5 crossing of the fitted curve.
    let fine = 20 * (cfg.grid_points - 1);
    let mut crossing = 0.0;
    let mut best = f64::INFINITY;
    for i in 0..=fine {
        let x = -cfg.grid_half_width + 2.0 * cfg.grid_half_width * i as f64 / fine as f64;
        let d = (sigmoid_value(&model, x)? - 0.5).abs();
        if d < best {
            best = d;
            crossing = x;
        }
    }

    let jit_cfg = cfg.jit.to_config(seeding::derive_seed(cfg.seed, "jit"));
    let run_pair = |lo: f64, hi: f64| -> Result<Model> {
        let mut m = model.clone();
        jit_unlearn(&mut m, &[vec![lo], vec![hi]], &jit_cfg)?;
        Ok(m)
    };
    let (b_lo, b_hi) = (crossing - cfg.boundary_offset, crossing + cfg.boundary_offset);
    let boundary_model = run_pair(b_lo, b_hi)?;
    let (s_lo, s_hi) = (-cfg.saturated_x, cfg.saturated_x);
    let saturated_model = run_pair(s_lo, s_hi)?;

    let curve_boundary_after = curve(&boundary_model)?;
    let curve_saturated_after = curve(&saturated_model)?;
    let max_disp = |after: &[f64]| {
        after
            .iter()
            .zip(&curve_before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max)
    };

    let probe = |m: &Model, x: f64| -> Result<PointReport> {
        Ok(PointReport { x, f_before: sigmoid_value(&model, x)?, f_after: sigmoid_value(m, x)? })
    };
    Ok(SigmoidStudyReport {
        boundary_max_displacement: max_disp(&curve_boundary_after),
        saturated_max_displacement: max_disp(&curve_saturated_after),
        boundary_probe: probe(&boundary_model, b_hi)?,
        boundary_twin: probe(&boundary_model, b_lo)?,
        saturated_probe: probe(&saturated_model, s_hi)?,
        saturated_twin: probe(&saturated_model, s_lo)?,
        grid_xs,
        curve_before,
        curve_boundary_after,
        curve_saturated_after,
        crossing,
        data,
    })
}

// ---------------------------------------------------------------------------
// Entropy study (image scale)
// ---------------------------------------------------------------------------

/// Config for [`run_entropy_study`]: a CIFAR-layout corpus, a small CNN,
/// full-class forgetting, and the baseline / retrain / JiT triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyStudyConfig {
    /// Directory holding (or receiving) the image corpus.
    pub corpus_dir: PathBuf,
    #[serde(default = "default_ent_train_pc")]
    pub train_per_class: usize,
    #[serde(default = "default_ent_test_pc")]
    pub test_per_class: usize,
    /// Per-class training subsample drawn fresh each seed.
    #[serde(default = "default_ent_sub_pc")]
    pub subsample_per_class: usize,
    /// Pixel noise of the synthetic corpus; `None` = corpus default.
    #[serde(default)]
    pub noise_std: Option<f64>,
    /// The corpus is drawn once from this seed and shared by all seeds.
    #[serde(default = "default_ent_corpus_seed")]
    pub corpus_seed: u64,
    #[serde(default = "default_ent_train")]
    pub train: TrainSection,
    #[serde(default)]
    pub forget_class: usize,
    #[serde(default = "default_ent_jit")]
    pub jit: JitSection,
    #[serde(default)]
    pub seed: u64,
}

fn default_ent_train_pc() -> usize {
    600
}
fn default_ent_test_pc() -> usize {
    100
}
fn default_ent_sub_pc() -> usize {
    500
}
fn default_ent_corpus_seed() -> u64 {
    7
}
fn default_ent_train() -> TrainSection {
    TrainSection { epochs: 5, learning_rate: 0.02, batch_size: 16 }
}
fn default_ent_jit() -> JitSection {
    JitSection {
        eta: 0.003,
        sigma: 0.5,
        n_perturb: 16,
        epochs: 1,
        space: OutputSpace::Logits,
    }
}

/// Output of [`run_entropy_study`]: per-forget-sample entropies under the
/// three models, the signed-rank comparison, retain accuracies, and attack
/// scores.
#[derive(Debug, Clone)]
pub struct EntropyStudyReport {
    pub baseline_entropy: EntropySummary,
    pub retrain_entropy: EntropySummary,
    pub jit_entropy: EntropySummary,
    /// Two-sided signed-rank test of JiT vs retrain forget entropies.
    pub wilcoxon_jit_vs_retrain: WilcoxonResult,
    pub baseline_retain_acc: f64,
    pub retrain_retain_acc: f64,
    pub jit_retain_acc: f64,
    pub baseline_mia: f64,
    pub retrain_mia: f64,
    pub jit_mia: f64,
    pub forget_count: usize,
}

/// Trains baseline / retrain / JiT on a per-seed subsample of the image
/// corpus and compares forget-set entropy, retain accuracy, and attack
/// scores across the triple.
pub fn run_entropy_study(cfg: &EntropyStudyConfig) -> Result<EntropyStudyReport> {
    cfg.jit.validate()?;
    if cfg.forget_class >= CIFAR_CLASSES {
        return Err(Error::Config(format!(
            "forget_class must be < {CIFAR_CLASSES}, got {}",
            cfg.forget_class
        )));
    }
    let mut params = SyntheticImageParams::default();
    if let Some(std) = cfg.noise_std {
        params.noise_std = std;
    }
    let (train_path, test_path) = data::write_synthetic_images(
        &cfg.corpus_dir,
        cfg.train_per_class,
        cfg.test_per_class,
        params,
        cfg.corpus_seed,
    )?;
    let train_data = data::load_cifar10(
        &train_path,
        Some(cfg.subsample_per_class),
        seeding::derive_seed(cfg.seed, "data-subsample"),
    )?;
    let test_data = data::load_cifar10(&test_path, None, 0)?;

    let forget_spec = ForgetSpec::FullClass(cfg.forget_class);
    let part = data::split_forget(&train_data, &forget_spec)?;
    if part.forget.is_empty() {
        return Err(Error::Config("forget class has no samples in the subsample".into()));
    }
    let retain_test = retain_test_set(&test_data, &forget_spec)?;

    let spec = ModelSpec::small_cnn(CIFAR_CLASSES, seeding::derive_seed(cfg.seed, "model-init"))?;
    let train_cfg = cfg.train.to_config(seeding::derive_seed(cfg.seed, "shuffle"));
    let mut baseline = init_model(&spec)?;
    train_sgd(&mut baseline, &train_data, &train_cfg)?;
    let (retrain, _) = retrain_oracle(&spec, &part.retain, &train_cfg)?;
    let mut jit = baseline.clone();
    let jit_cfg = cfg.jit.to_config(seeding::derive_seed(cfg.seed, "jit"));
    jit_unlearn(&mut jit, &part.forget.inputs, &jit_cfg)?;

    let member_pool = pool_prefix(&part.retain, MIA_POOL_CAP)?;
    let nonmember_pool = pool_prefix(&retain_test, MIA_POOL_CAP)?;
    let attack_seed = seeding::derive_seed(cfg.seed, "attack");
    let mia = |m: &Model| -> Result<f64> {
        Ok(mia_score(m, &part.forget, &member_pool, &nonmember_pool, attack_seed)?.score)
    };

    let baseline_entropies = output_entropy(&baseline, &part.forget)?;
    let retrain_entropies = output_entropy(&retrain, &part.forget)?;
    let jit_entropies = output_entropy(&jit, &part.forget)?;
    let wilcoxon_jit_vs_retrain = wilcoxon_signed_rank(&jit_entropies, &retrain_entropies)?;

    Ok(EntropyStudyReport {
        wilcoxon_jit_vs_retrain,
        baseline_retain_acc: accuracy(&baseline, &retain_test)?,
        retrain_retain_acc: accuracy(&retrain, &retain_test)?,
        jit_retain_acc: accuracy(&jit, &retain_test)?,
        baseline_mia: mia(&baseline)?,
        retrain_mia: mia(&retrain)?,
        jit_mia: mia(&jit)?,
        forget_count: part.forget.len(),
        baseline_entropy: EntropySummary::from_samples(baseline_entropies)?,
        retrain_entropy: EntropySummary::from_samples(retrain_entropies)?,
        jit_entropy: EntropySummary::from_samples(jit_entropies)?,
    })
}

// ---------------------------------------------------------------------------
// Sensitivity sweep
// ---------------------------------------------------------------------------

/// Config for [`run_sensitivity_sweep`]: a full factorial (η, σ) grid, one
/// seeded JiT repeat per cell over a shared baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    pub forget: ForgetSpec,
    pub etas: Vec<f64>,
    pub sigmas: Vec<f64>,
    #[serde(default = "default_sweep_n")]
    pub n_perturb: usize,
    #[serde(default = "one")]
    pub epochs: usize,
    #[serde(default)]
    pub space: OutputSpace,
    #[serde(default)]
    pub seed: u64,
}

fn default_sweep_n() -> usize {
    DESK_2D_N_PERTURB
}

/// One sweep cell; a failure is recorded in `error` with the metrics zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub eta: f64,
    pub sigma: f64,
    pub dr_acc: f64,
    pub df_acc: f64,
    pub mia: f64,
    pub error: Option<String>,
}

/// Sweep output, row-major over (η outer, σ inner), plus the shared
/// baseline's metrics for reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    pub baseline_dr_acc: f64,
    pub baseline_df_acc: f64,
    pub baseline_mia: f64,
}

/// Fixed CSV schema for sweep tables.
pub const SWEEP_CSV_HEADER: &str = "eta,sigma,dr_acc,df_acc,mia,error";

impl SweepTable {
    /// Renders the fixed-schema CSV; error messages are CSV-quoted.
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let err = match &c.error {
                Some(e) => format!("\"{}\"", e.replace('"', "\"\"")),
                None => String::new(),
            };
            let _ = writeln!(
                out,
                "{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                c.eta, c.sigma, c.dr_acc, c.df_acc, c.mia, err
            );
        }
        out
    }
}

/// Full factorial sweep: the baseline is trained once, every (η, σ) cell
/// unlearns a fresh copy with the *same* derived noise seed, so cells differ
/// only in their hyperparameters. Cell failures become error rows.
pub fn run_sensitivity_sweep(cfg: &SweepConfig, scratch: &Path) -> Result<SweepTable> {
    if cfg.etas.is_empty() || cfg.sigmas.is_empty() {
        return Err(Error::Config("sweep grids must be nonempty".into()));
    }
    let (train_data, test_data) = cfg.dataset.materialize(cfg.seed, scratch)?;
    let part = data::split_forget(&train_data, &cfg.forget)?;
    if part.forget.is_empty() || part.retain.is_empty() {
        return Err(Error::Config("sweep needs nonempty forget and retain sets".into()));
    }
    let retain_test = retain_test_set(&test_data, &cfg.forget)?;
    let member_pool = pool_prefix(&part.retain, MIA_POOL_CAP)?;
    let nonmember_pool = pool_prefix(&retain_test, MIA_POOL_CAP)?;
    let attack_seed = seeding::derive_seed(cfg.seed, "attack");

    let spec = cfg.model.to_spec(
        train_data.dim,
        train_data.classes,
        seeding::derive_seed(cfg.seed, "model-init"),
    )?;
    let train_cfg = cfg.train.to_config(seeding::derive_seed(cfg.seed, "shuffle"));
    let mut baseline = init_model(&spec)?;
    train_sgd(&mut baseline, &train_data, &train_cfg)?;

    let evaluate = |m: &Model| -> Result<(f64, f64, f64)> {
        Ok((
            accuracy(m, &retain_test)?,
            accuracy(m, &part.forget)?,
            mia_score(m, &part.forget, &member_pool, &nonmember_pool, attack_seed)?.score,
        ))
    };
    let (baseline_dr_acc, baseline_df_acc, baseline_mia) = evaluate(&baseline)?;
    let jit_seed = seeding::derive_seed(cfg.seed, "jit");

    let grid: Vec<(f64, f64)> = cfg
        .etas
        .iter()
        .flat_map(|&eta| cfg.sigmas.iter().map(move |&sigma| (eta, sigma)))
        .collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(eta, sigma)| {
            let outcome = (|| -> Result<(f64, f64, f64)> {
                let mut cell_cfg = UnlearnConfig::new(eta, sigma, cfg.n_perturb, jit_seed);
                cell_cfg.epochs = cfg.epochs;
                cell_cfg.space = cfg.space;
                let mut m = baseline.clone();
                jit_unlearn(&mut m, &part.forget.inputs, &cell_cfg)?;
                evaluate(&m)
            })();
            match outcome {
                Ok((dr_acc, df_acc, mia)) => {
                    SweepCell { eta, sigma, dr_acc, df_acc, mia, error: None }
                }
                Err(e) => SweepCell {
                    eta,
                    sigma,
                    dr_acc: 0.0,
                    df_acc: 0.0,
                    mia: 0.0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(SweepTable { cells, baseline_dr_acc, baseline_df_acc, baseline_mia })
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

/// Everything [`render_reports`] can persist; every input is optional but at
/// least one must be present.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportInputs<'a> {
    pub benchmark: Option<&'a ResultTable>,
    pub geometry: Option<&'a GeometryReport>,
    pub entropy: Option<&'a EntropyStudyReport>,
    pub sigmoid: Option<&'a SigmoidStudyReport>,
}

/// Class color palette for figures (cycled past its length).
const PALETTE: [&str; 6] = ["#4878cf", "#ee854a", "#6acc65", "#d65f5f", "#956cb4", "#8c613c"];

fn class_color(class: usize) -> &'static str {
    PALETTE[class % PALETTE.len()]
}

/// Maps a confidence to a fill-opacity bucket (uncertain cells render
/// lighter).
fn confidence_opacity(conf: f64) -> &'static str {
    if conf < 0.6 {
        "0.20"
    } else if conf < 0.9 {
        "0.45"
    } else {
        "0.80"
    }
}

/// Writes the CSV and SVG artifacts for every present input and returns the
/// written paths (in a fixed order). Identical inputs produce identical
/// bytes; runtime columns in the benchmark CSV are the only values that vary
/// between runs of the *experiments* themselves.
pub fn render_reports(dir: &Path, inputs: &ReportInputs<'_>) -> Result<Vec<PathBuf>> {
    if inputs.benchmark.is_none()
        && inputs.geometry.is_none()
        && inputs.entropy.is_none()
        && inputs.sigmoid.is_none()
    {
        return Err(Error::Config("render_reports needs at least one result".into()));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if let Some(table) = inputs.benchmark {
        let path = dir.join("benchmark.csv");
        fs::write(&path, table.to_csv())?;
        written.push(path);
    }
    if let Some(report) = inputs.geometry {
        let path = dir.join("geometry.svg");
        fs::write(&path, geometry_svg(report))?;
        written.push(path);
    }
    if let Some(report) = inputs.entropy {
        let path = dir.join("entropy.svg");
        fs::write(&path, entropy_svg(report))?;
        written.push(path);
    }
    if let Some(report) = inputs.sigmoid {
        let path = dir.join("sigmoid.svg");
        fs::write(&path, sigmoid_svg(report))?;
        written.push(path);
    }
    Ok(written)
}

/// 2×2 panel figure: one boundary heatmap per snapshot with the data and
/// forget markers overlaid. Grid cells are run-length merged along x.
fn geometry_svg(report: &GeometryReport) -> String {
    const PANEL: f64 = 300.0;
    const GAP: f64 = 46.0;
    const MARGIN: f64 = 30.0;
    let cols = 2usize;
    let rows = report.grids.len().div_ceil(cols);
    let width = MARGIN * 2.0 + cols as f64 * PANEL + (cols as f64 - 1.0) * GAP;
    let height = MARGIN * 2.0 + rows as f64 * (PANEL + GAP);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.0}\" \
         height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    );
    let _ = write!(
        svg,
        "<desc>decision boundary snapshots; resolution={res}; bounds=[{x0:.4},{x1:.4}]x\
         [{y0:.4},{y1:.4}]</desc>\n",
        res = report.resolution,
        x0 = report.bounds[0].0,
        x1 = report.bounds[0].1,
        y0 = report.bounds[1].0,
        y1 = report.bounds[1].1,
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    for (gi, (name, grid)) in report.grids.iter().enumerate() {
        let ox = MARGIN + (gi % cols) as f64 * (PANEL + GAP);
        let oy = MARGIN + (gi / cols) as f64 * (PANEL + GAP) + 14.0;
        let to_px = |x: f64, y: f64| -> (f64, f64) {
            let (x0, x1) = report.bounds[0];
            let (y0, y1) = report.bounds[1];
            (ox + (x - x0) / (x1 - x0) * PANEL, oy + PANEL - (y - y0) / (y1 - y0) * PANEL)
        };
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\">{name}</text>\n",
            ox,
            oy - 4.0
        );
        // Heatmap: merge equal (class, opacity bucket) runs along each row.
        let g = grid.xs.len();
        let cell_w = PANEL / g as f64;
        let cell_h = PANEL / g as f64;
        for yi in 0..g {
            let mut xi = 0;
            while xi < g {
                let idx = yi * g + xi;
                let class = grid.argmax[idx];
                let bucket = confidence_opacity(grid.confidence[idx]);
                let mut run = 1;
                while xi + run < g {
                    let j = yi * g + xi + run;
                    if grid.argmax[j] != class || confidence_opacity(grid.confidence[j]) != bucket {
                        break;
                    }
                    run += 1;
                }
                // Cell centers run bottom-up in y (row-major grid, y outer).
                let px = ox + xi as f64 * cell_w;
                let py = oy + PANEL - (yi + 1) as f64 * cell_h;
                let _ = write!(
                    svg,
                    "<rect x=\"{px:.2}\" y=\"{py:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" \
                     fill=\"{color}\" fill-opacity=\"{bucket}\"/>\n",
                    w = cell_w * run as f64 + 0.05,
                    h = cell_h + 0.05,
                    color = class_color(class),
                );
                xi += run;
            }
        }
        for (x, label) in report.data.inputs.iter().zip(&report.data.labels) {
            let (px, py) = to_px(x[0], x[1]);
            let _ = write!(
                svg,
                "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"1.6\" fill=\"{}\" stroke=\"white\" \
                 stroke-width=\"0.3\"/>\n",
                class_color(*label)
            );
        }
        for fp in &report.forget_points {
            let (px, py) = to_px(fp.x[0], fp.x[1]);
            let _ = write!(
                svg,
                "<path d=\"M {x0:.2} {y0:.2} L {x1:.2} {y1:.2} M {x0:.2} {y1:.2} L {x1:.2} {y0:.2}\" \
                 stroke=\"black\" stroke-width=\"1.4\"/>\n",
                x0 = px - 3.5,
                y0 = py - 3.5,
                x1 = px + 3.5,
                y1 = py + 3.5,
            );
        }
        let _ = write!(
            svg,
            "<rect x=\"{ox:.2}\" y=\"{oy:.2}\" width=\"{PANEL:.2}\" height=\"{PANEL:.2}\" \
             fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n"
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Histogram bin counts for `values` over `[lo, hi]`.
fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    let span = hi - lo;
    for &v in values {
        let frac = ((v - lo) / span).clamp(0.0, 1.0);
        let b = ((frac * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Overlaid step-histograms of forget-set entropy for the three models.
fn entropy_svg(report: &EntropyStudyReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 50.0;
    const MR: f64 = 20.0;
    const MT: f64 = 30.0;
    const MB: f64 = 46.0;
    const BINS: usize = 40;
    let lo = 0.0;
    let hi = (CIFAR_CLASSES as f64).ln();
    let series = [
        ("baseline", "#777777", &report.baseline_entropy.samples),
        ("retrain", "#6acc65", &report.retrain_entropy.samples),
        ("jit", "#ee854a", &report.jit_entropy.samples),
    ];
    let hists: Vec<(&str, &str, Vec<usize>)> = series
        .iter()
        .map(|(name, color, samples)| (*name, *color, histogram(samples, lo, hi, BINS)))
        .collect();
    let peak = hists.iter().flat_map(|(_, _, h)| h.iter().copied()).max().unwrap_or(1).max(1);

    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{W:.0}\" \
         height=\"{H:.0}\" viewBox=\"0 0 {W:.0} {H:.0}\">\n"
    );
    let _ = write!(
        svg,
        "<desc>forget-set output entropy; n={}; bins={BINS}; range=[0,{hi:.4}]</desc>\n",
        report.forget_count
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = write!(
        svg,
        "<rect x=\"{ML:.2}\" y=\"{MT:.2}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" \
         fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n"
    );
    for (si, (name, color, hist)) in hists.iter().enumerate() {
        let mut d = String::new();
        let base_y = MT + plot_h;
        let _ = write!(d, "M {:.2} {:.2}", ML, base_y);
        for (b, count) in hist.iter().enumerate() {
            let x0 = ML + plot_w * b as f64 / BINS as f64;
            let x1 = ML + plot_w * (b + 1) as f64 / BINS as f64;
            let y = MT + plot_h * (1.0 - *count as f64 / peak as f64);
            let _ = write!(d, " L {x0:.2} {y:.2} L {x1:.2} {y:.2}");
        }
        let _ = write!(d, " L {:.2} {:.2}", ML + plot_w, base_y);
        let _ = write!(
            svg,
            "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n"
        );
        let lx = ML + 12.0;
        let ly = MT + 18.0 + 18.0 * si as f64;
        let _ = write!(
            svg,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" \
             stroke-width=\"1.8\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" \
             font-size=\"12\">{name}</text>\n",
            lx + 22.0,
            lx + 28.0,
            ly + 4.0
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">output entropy</text>\n",
        ML + plot_w / 2.0,
        H - 12.0
    );
    let _ = write!(
        svg,
        "<text x=\"{ML:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">0</text>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{hi:.2}</text>\n",
        H - MB + 16.0,
        ML + plot_w,
        H - MB + 16.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Before/after curves of the 1-D study with the probed forget points and
/// data rug marks.
fn sigmoid_svg(report: &SigmoidStudyReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const ML: f64 = 46.0;
    const MR: f64 = 16.0;
    const MT: f64 = 26.0;
    const MB: f64 = 40.0;
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let x_lo = *report.grid_xs.first().unwrap_or(&-1.0);
    let x_hi = *report.grid_xs.last().unwrap_or(&1.0);
    let to_px = |x: f64, f: f64| -> (f64, f64) {
        (ML + (x - x_lo) / (x_hi - x_lo) * plot_w, MT + (1.0 - f) * plot_h)
    };
    let path_of = |curve: &[f64]| -> String {
        let mut d = String::new();
        for (i, (&x, &f)) in report.grid_xs.iter().zip(curve).enumerate() {
            let (px, py) = to_px(x, f);
            let _ = write!(d, "{} {px:.2} {py:.2}", if i == 0 { "M" } else { " L" });
        }
        d
    };
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{W:.0}\" \
         height=\"{H:.0}\" viewBox=\"0 0 {W:.0} {H:.0}\">\n"
    );
    let _ = write!(
        svg,
        "<desc>1-D curve study; crossing={:.4}; boundary probe x={:.4}; saturated probe \
         x={:.4}</desc>\n",
        report.crossing, report.boundary_probe.x, report.saturated_probe.x
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = write!(
        svg,
        "<rect x=\"{ML:.2}\" y=\"{MT:.2}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" \
         fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n"
    );
    // 0.5 level set.
    let (_, y_mid) = to_px(x_lo, 0.5);
    let _ = write!(
        svg,
        "<line x1=\"{ML:.2}\" y1=\"{y_mid:.2}\" x2=\"{:.2}\" y2=\"{y_mid:.2}\" \
         stroke=\"#aaaaaa\" stroke-width=\"1\" stroke-dasharray=\"5 4\"/>\n",
        ML + plot_w
    );
    // Data rug marks at the class levels.
    for (x, label) in report.data.inputs.iter().zip(&report.data.labels) {
        let f = if *label == 0 { 0.0 } else { 1.0 };
        let (px, py) = to_px(x[0], f);
        let dir = if *label == 0 { -5.0 } else { 5.0 };
        let _ = write!(
            svg,
            "<line x1=\"{px:.2}\" y1=\"{py:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"{}\" \
             stroke-width=\"0.6\" stroke-opacity=\"0.55\"/>\n",
            py + dir,
            class_color(*label)
        );
    }
    let curves = [
        ("before", "#333333", "", &report.curve_before),
        ("boundary pair unlearned", "#4878cf", "", &report.curve_boundary_after),
        ("saturated pair unlearned", "#ee854a", "6 4", &report.curve_saturated_after),
    ];
    for (si, (name, color, dash, curve)) in curves.iter().enumerate() {
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(" stroke-dasharray=\"{dash}\"")
        };
        let _ = write!(
            svg,
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"{dash_attr}/>\n",
            path_of(curve)
        );
        let lx = ML + 12.0;
        let ly = MT + 18.0 + 18.0 * si as f64;
        let _ = write!(
            svg,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" \
             stroke-width=\"1.8\"{dash_attr}/>\n<text x=\"{:.2}\" y=\"{:.2}\" \
             font-family=\"sans-serif\" font-size=\"12\">{name}</text>\n",
            lx + 22.0,
            lx + 28.0,
            ly + 4.0
        );
    }
    // Forget markers: red X at the before value, filled dot at the after value.
    let probes = [
        (&report.boundary_probe, "#4878cf"),
        (&report.boundary_twin, "#4878cf"),
        (&report.saturated_probe, "#ee854a"),
        (&report.saturated_twin, "#ee854a"),
    ];
    for (p, color) in probes {
        let (bx, by) = to_px(p.x, p.f_before);
        let _ = write!(
            svg,
            "<path d=\"M {x0:.2} {y0:.2} L {x1:.2} {y1:.2} M {x0:.2} {y1:.2} L {x1:.2} {y0:.2}\" \
             stroke=\"#d65f5f\" stroke-width=\"1.6\"/>\n",
            x0 = bx - 4.0,
            y0 = by - 4.0,
            x1 = bx + 4.0,
            y1 = by + 4.0,
        );
        let (ax, ay) = to_px(p.x, p.f_after);
        let _ = write!(
            svg,
            "<circle cx=\"{ax:.2}\" cy=\"{ay:.2}\" r=\"3.2\" fill=\"{color}\" stroke=\"black\" \
             stroke-width=\"0.6\"/>\n"
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">x</text>\n",
        ML + plot_w / 2.0,
        H - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}
