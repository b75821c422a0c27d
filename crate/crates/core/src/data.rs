//! Datasets and forget/retain partitioning.
//!
//! Three data sources, all deterministic per seed:
//!
//! * [`make_blobs`] / [`make_blobs_grouped`] — Gaussian blobs in `R^d`
//!   (the grouped variant tags every blob with a subclass id so a subclass
//!   of a coarser label can be forgotten).
//! * [`make_moons`] — the classic interleaved half-circles in `R^2`.
//! * [`load_cifar10`] — standard CIFAR-10 binary batches (3073-byte records:
//!   one label byte, then 3072 channel-planar RGB bytes), scaled to `[0,1]`.
//!
//! [`write_synthetic_images`] fabricates a class-structured image corpus in
//! the same binary format (oriented colour gratings plus pixel noise) so the
//! full image pipeline can run on machines where the real corpus is absent.
//!
//! A [`ForgetSpec`] names what to forget; [`split_forget`] realizes it as a
//! [`ForgetPartition`] whose retain and forget sides always re-assemble to
//! exactly the original dataset (a multiset invariant the tests enforce).

use std::fmt;
use std::fs;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Dataset type
// ---------------------------------------------------------------------------

/// A fixed-dimension labeled dataset with optional subclass tags.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub name: String,
    /// Input dimension (3072 for image data).
    pub dim: usize,
    /// Number of classes; labels are `0..classes`.
    pub classes: usize,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Finer-grained group ids, present only when the generator assigns them.
    pub subclasses: Option<Vec<usize>>,
}

impl LabeledDataset {
    /// Builds a dataset and validates internal consistency. Empty datasets
    /// are allowed (they arise as partition halves).
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        classes: usize,
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        subclasses: Option<Vec<usize>>,
    ) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("dataset needs at least one class".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} inputs vs {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(sc) = &subclasses {
            if sc.len() != labels.len() {
                return Err(Error::Dimension(format!(
                    "{} subclasses vs {} labels",
                    sc.len(),
                    labels.len()
                )));
            }
        }
        if let Some(bad) = inputs.iter().position(|x| x.len() != dim) {
            return Err(Error::Dimension(format!(
                "sample {bad} has dimension {}, expected {dim}",
                inputs[bad].len()
            )));
        }
        if let Some(bad) = labels.iter().position(|l| *l >= classes) {
            return Err(Error::Index(format!(
                "label {} at sample {bad} exceeds class count {classes}",
                labels[bad]
            )));
        }
        Ok(Self { name: name.into(), dim, classes, inputs, labels, subclasses })
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-class sample counts.
    #[must_use]
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for l in &self.labels {
            counts[*l] += 1;
        }
        counts
    }

    /// The sub-dataset at the given sample indices (order preserved).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
        }
        Ok(Self {
            name: self.name.clone(),
            dim: self.dim,
            classes: self.classes,
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subclasses: self
                .subclasses
                .as_ref()
                .map(|sc| indices.iter().map(|&i| sc[i]).collect()),
        })
    }

    /// Serializes to CSV with header `x0,...,x{d-1},label[,subclass]`.
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.dim {
            out.push_str(&format!("x{i},"));
        }
        out.push_str("label");
        if self.subclasses.is_some() {
            out.push_str(",subclass");
        }
        out.push('\n');
        for i in 0..self.len() {
            for v in &self.inputs[i] {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&self.labels[i].to_string());
            if let Some(sc) = &self.subclasses {
                out.push_str(&format!(",{}", sc[i]));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV produced by [`LabeledDataset::to_csv`]. The class
    /// count is taken as `max(label) + 1` unless `classes` overrides it.
    pub fn from_csv(name: &str, text: &str, classes: Option<usize>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let has_subclass = cols.last() == Some(&"subclass");
        let label_col = if has_subclass { cols.len() - 2 } else { cols.len() - 1 };
        if cols.get(label_col) != Some(&"label") {
            return Err(Error::Format(format!("bad CSV header: {header}")));
        }
        for (i, c) in cols[..label_col].iter().enumerate() {
            if *c != format!("x{i}") {
                return Err(Error::Format(format!("bad CSV header column {i}: {c}")));
            }
        }
        let dim = label_col;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut subclasses = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Format(format!(
                    "CSV row {} has {} fields, expected {}",
                    ln + 2,
                    fields.len(),
                    cols.len()
                )));
            }
            let mut x = Vec::with_capacity(dim);
            for f in &fields[..dim] {
                x.push(f.parse::<f64>().map_err(|e| {
                    Error::Format(format!("CSV row {}: bad float {f:?}: {e}", ln + 2))
                })?);
            }
            inputs.push(x);
            labels.push(fields[dim].parse::<usize>().map_err(|e| {
                Error::Format(format!("CSV row {}: bad label: {e}", ln + 2))
            })?);
            if has_subclass {
                subclasses.push(fields[dim + 1].parse::<usize>().map_err(|e| {
                    Error::Format(format!("CSV row {}: bad subclass: {e}", ln + 2))
                })?);
            }
        }
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        Self::new(name, dim, classes, inputs, labels, has_subclass.then_some(subclasses))
    }
}

// ---------------------------------------------------------------------------
// Synthetic 2-D generators
// ---------------------------------------------------------------------------

/// Isotropic Gaussian blobs: class `k` draws `n_per_class` samples from
/// `N(means[k], std^2 I)`. With `std == 0` every sample sits exactly on its
/// mean.
pub fn make_blobs(
    n_per_class: usize,
    means: &[Vec<f64>],
    std: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let classes = means.len();
    let class_of_blob: Vec<usize> = (0..classes).collect();
    let mut d = make_blobs_grouped(n_per_class, means, &class_of_blob, std, seed)?;
    // One blob per class: the subclass tags carry no extra information.
    d.subclasses = None;
    d.name = "blobs".into();
    Ok(d)
}

/// Gaussian blobs where blob `i` gets class label `class_of_blob[i]` and
/// subclass tag `i`. Several blobs may share a class, which is how the
/// subclass-forgetting scenario is realized on synthetic data.
pub fn make_blobs_grouped(
    n_per_blob: usize,
    means: &[Vec<f64>],
    class_of_blob: &[usize],
    std: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if means.is_empty() {
        return Err(Error::Config("make_blobs needs at least one mean".into()));
    }
    if n_per_blob == 0 {
        return Err(Error::Config("make_blobs needs n_per_class >= 1".into()));
    }
    if !(std >= 0.0) {
        return Err(Error::Config(format!("blob std must be >= 0, got {std}")));
    }
    if class_of_blob.len() != means.len() {
        return Err(Error::Dimension(format!(
            "{} class assignments for {} blobs",
            class_of_blob.len(),
            means.len()
        )));
    }
    let dim = means[0].len();
    if dim == 0 {
        return Err(Error::Config("blob means must be non-empty vectors".into()));
    }
    if let Some(bad) = means.iter().position(|m| m.len() != dim) {
        return Err(Error::Dimension(format!(
            "mean {bad} has dimension {}, expected {dim}",
            means[bad].len()
        )));
    }
    let classes = class_of_blob.iter().max().map_or(0, |m| m + 1);
    for k in 0..classes {
        if !class_of_blob.contains(&k) {
            return Err(Error::Config(format!("class {k} has no blob assigned")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // std == 0 would make Normal::new fail; treat it as "no noise".
    let noise = if std > 0.0 {
        Some(Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut inputs = Vec::with_capacity(means.len() * n_per_blob);
    let mut labels = Vec::with_capacity(means.len() * n_per_blob);
    let mut subclasses = Vec::with_capacity(means.len() * n_per_blob);
    for (blob, mean) in means.iter().enumerate() {
        for _ in 0..n_per_blob {
            let x: Vec<f64> = mean
                .iter()
                .map(|m| m + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng)))
                .collect();
            inputs.push(x);
            labels.push(class_of_blob[blob]);
            subclasses.push(blob);
        }
    }
    LabeledDataset::new("blobs_grouped", dim, classes, inputs, labels, Some(subclasses))
}

/// Two interleaved half-circles. Class 0 lies on the unit half-circle
/// centred at the origin (upper half), class 1 on the unit half-circle
/// centred at `(1, 0.5)` (lower half); Gaussian noise with `noise_std` is
/// added to both coordinates. With zero noise every sample sits exactly on
/// its half-circle.
pub fn make_moons(n_per_class: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(Error::Config("make_moons needs n_per_class >= 1".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Config(format!("moons noise must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if noise_std > 0.0 {
        Some(Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let jitter = |rng: &mut ChaCha8Rng| noise.as_ref().map_or(0.0, |n| n.sample(rng));
    let angle = |i: usize| {
        if n_per_class == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (n_per_class - 1) as f64
        }
    };
    let mut inputs = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        let t = angle(i);
        inputs.push(vec![t.cos() + jitter(&mut rng), t.sin() + jitter(&mut rng)]);
        labels.push(0);
    }
    for i in 0..n_per_class {
        let t = angle(i);
        inputs.push(vec![1.0 - t.cos() + jitter(&mut rng), 0.5 - t.sin() + jitter(&mut rng)]);
        labels.push(1);
    }
    LabeledDataset::new("moons", 2, 2, inputs, labels, None)
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary format
// ---------------------------------------------------------------------------

/// Image edge length of the CIFAR-10 binary format.
pub const CIFAR_EDGE: usize = 32;
/// Channels per image.
pub const CIFAR_CHANNELS: usize = 3;
/// Pixels per image (channel-planar, row-major within a plane).
pub const CIFAR_PIXELS: usize = CIFAR_CHANNELS * CIFAR_EDGE * CIFAR_EDGE;
/// One record: a label byte followed by the pixel bytes.
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
/// Number of classes.
pub const CIFAR_CLASSES: usize = 10;

/// Loads CIFAR-10 binary batches. `path` may be a single `.bin` file or a
/// directory holding `data_batch_*.bin` files (read in name order). Pixel
/// bytes are scaled to `[0,1]`; inputs keep the channel-planar layout, i.e.
/// an input vector is a row-major `[3,32,32]` tensor.
///
/// With `subsample_per_class = Some(m)`, exactly `m` samples per class are
/// drawn uniformly without replacement using `seed`; file order is preserved
/// among the survivors.
pub fn load_cifar10(
    path: &Path,
    subsample_per_class: Option<usize>,
    seed: u64,
) -> Result<LabeledDataset> {
    let files = cifar_files(path)?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for file in &files {
        read_cifar_file(file, &mut inputs, &mut labels)?;
    }
    let mut data = LabeledDataset::new(
        "cifar10",
        CIFAR_PIXELS,
        CIFAR_CLASSES,
        inputs,
        labels,
        None,
    )?;
    if let Some(m) = subsample_per_class {
        let keep = subsample_indices_per_class(&data, m, seed)?;
        data = data.subset(&keep)?;
        data.name = "cifar10".into();
    }
    Ok(data)
}

fn cifar_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Format(format!(
                "no data_batch_*.bin files under {}",
                path.display()
            )));
        }
        return Ok(files);
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} does not exist", path.display()),
    )))
}

fn read_cifar_file(
    path: &Path,
    inputs: &mut Vec<Vec<f64>>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a multiple of the {CIFAR_RECORD_BYTES}-byte record size",
            path.display(),
            bytes.len()
        )));
    }
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!(
                "{}: record {r} has label {label}, expected 0..{CIFAR_CLASSES}",
                path.display()
            )));
        }
        labels.push(label);
        inputs.push(record[1..].iter().map(|b| f64::from(*b) / 255.0).collect());
    }
    Ok(())
}

/// Uniform per-class subsample of exactly `m` indices per class, without
/// replacement, deterministic in `seed`; the returned indices are sorted so
/// the original sample order survives.
fn subsample_indices_per_class(
    data: &LabeledDataset,
    m: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(m * data.classes);
    for class in 0..data.classes {
        let mut pool: Vec<usize> =
            (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        if pool.len() < m {
            return Err(Error::Contract(format!(
                "class {class} has {} samples, cannot subsample {m}",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        keep.extend_from_slice(&pool[..m]);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Writes records (`label`, 3072 pixel bytes) as one CIFAR-10 binary batch.
pub fn write_cifar_batch(path: &Path, records: &[(u8, Vec<u8>)]) -> Result<()> {
    let mut bytes = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for (i, (label, pixels)) in records.iter().enumerate() {
        if *label as usize >= CIFAR_CLASSES {
            return Err(Error::Format(format!("record {i}: label {label} out of range")));
        }
        if pixels.len() != CIFAR_PIXELS {
            return Err(Error::Format(format!(
                "record {i}: {} pixel bytes, expected {CIFAR_PIXELS}",
                pixels.len()
            )));
        }
        bytes.push(*label);
        bytes.extend_from_slice(pixels);
    }
    fs::write(path, bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic image corpus
// ---------------------------------------------------------------------------

/// Tuning knobs of the synthetic image corpus.
///
/// Each class is an oriented colour grating: class `k` fixes an orientation,
/// a spatial frequency, and an RGB weighting; each sample randomizes phase,
/// contrast, and brightness and adds independent Gaussian pixel noise. The
/// classes are learnable by a small convolution network at an accuracy well
/// below memorization, which is the regime the image-scale experiments need.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticImageParams {
    /// Std of the per-pixel Gaussian noise (pixel scale `[0,1]`).
    pub noise_std: f64,
}

impl Default for SyntheticImageParams {
    fn default() -> Self {
        Self { noise_std: 0.22 }
    }
}

/// Generates `n_per_class` records per class in CIFAR-10 binary layout
/// (class-major order, labels `0..10`), deterministic in `seed`.
#[must_use]
pub fn synthetic_image_records(
    n_per_class: usize,
    params: SyntheticImageParams,
    seed: u64,
) -> Vec<(u8, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_std.max(f64::EPSILON)).expect("finite std");
    let mut records = Vec::with_capacity(CIFAR_CLASSES * n_per_class);
    for class in 0..CIFAR_CLASSES {
        let theta = std::f64::consts::PI * class as f64 / CIFAR_CLASSES as f64;
        let (sin_t, cos_t) = theta.sin_cos();
        let freq = 2.0 * std::f64::consts::PI * (1.5 + 0.5 * (class % 4) as f64)
            / CIFAR_EDGE as f64;
        let weights = class_rgb_weights(class);
        for _ in 0..n_per_class {
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let contrast: f64 = rng.gen_range(0.45..0.75);
            let brightness: f64 = rng.gen_range(0.10..0.30);
            let mut pixels = vec![0u8; CIFAR_PIXELS];
            for y in 0..CIFAR_EDGE {
                for x in 0..CIFAR_EDGE {
                    let along = cos_t * x as f64 + sin_t * y as f64;
                    let wave = 0.5 * (1.0 + (freq * along + phase).sin());
                    for c in 0..CIFAR_CHANNELS {
                        let v = brightness + contrast * wave * weights[c]
                            + noise.sample(&mut rng);
                        let byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                        pixels[c * CIFAR_EDGE * CIFAR_EDGE + y * CIFAR_EDGE + x] = byte;
                    }
                }
            }
            records.push((class as u8, pixels));
        }
    }
    records
}

/// Evenly spread RGB weightings (a crude hue wheel) so classes differ in
/// colour as well as orientation.
fn class_rgb_weights(class: usize) -> [f64; 3] {
    let hue = class as f64 / CIFAR_CLASSES as f64 * 6.0;
    let comp = |offset: f64| {
        let h = (hue + offset).rem_euclid(6.0);
        let v: f64 = if h < 2.0 {
            1.0
        } else if h < 3.0 {
            3.0 - h
        } else if h < 5.0 {
            0.0
        } else {
            h - 5.0
        };
        0.25 + 0.75 * v
    };
    [comp(0.0), comp(4.0), comp(2.0)]
}

/// Writes a synthetic train batch (`data_batch_1.bin`) and test batch
/// (`test_batch.bin`) under `dir`, returning their paths. Existing files of
/// the right size are reused, so repeated runs are cheap and byte-stable.
pub fn write_synthetic_images(
    dir: &Path,
    train_per_class: usize,
    test_per_class: usize,
    params: SyntheticImageParams,
    seed: u64,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let train = dir.join("data_batch_1.bin");
    let test = dir.join("test_batch.bin");
    let want_train = (train_per_class * CIFAR_CLASSES * CIFAR_RECORD_BYTES) as u64;
    let want_test = (test_per_class * CIFAR_CLASSES * CIFAR_RECORD_BYTES) as u64;
    let size_of = |p: &Path| fs::metadata(p).map(|m| m.len()).unwrap_or(0);
    if size_of(&train) != want_train {
        write_cifar_batch(&train, &synthetic_image_records(train_per_class, params, seed))?;
    }
    if size_of(&test) != want_test {
        // Disjoint stream for the test split.
        write_cifar_batch(
            &test,
            &synthetic_image_records(test_per_class, params, seed ^ 0x7e57_da7a),
        )?;
    }
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Forget specifications
// ---------------------------------------------------------------------------

/// What to forget. The textual form is `kind:arg[:arg]`:
/// `full_class:3`, `sub_class:1`, `random:100:7` (count, seed),
/// `explicit:4,9,17`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ForgetSpec {
    /// Forget every sample of one class.
    FullClass(usize),
    /// Forget every sample carrying one subclass tag.
    SubClass(usize),
    /// Forget `count` samples drawn uniformly with the given seed.
    Random { count: usize, seed: u64 },
    /// Forget exactly these sample indices.
    Explicit(Vec<usize>),
}

impl fmt::Display for ForgetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FullClass(c) => write!(f, "full_class:{c}"),
            Self::SubClass(s) => write!(f, "sub_class:{s}"),
            Self::Random { count, seed } => write!(f, "random:{count}:{seed}"),
            Self::Explicit(idxs) => {
                let list: Vec<String> = idxs.iter().map(ToString::to_string).collect();
                write!(f, "explicit:{}", list.join(","))
            }
        }
    }
}

impl std::str::FromStr for ForgetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("forget spec {s:?}: {msg}"));
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| bad("expected kind:arg"))?;
        match kind {
            "full_class" => Ok(Self::FullClass(
                rest.parse().map_err(|_| bad("class must be an integer"))?,
            )),
            "sub_class" => Ok(Self::SubClass(
                rest.parse().map_err(|_| bad("subclass must be an integer"))?,
            )),
            "random" => {
                let (count, seed) = rest
                    .split_once(':')
                    .ok_or_else(|| bad("random wants count:seed"))?;
                Ok(Self::Random {
                    count: count.parse().map_err(|_| bad("count must be an integer"))?,
                    seed: seed.parse().map_err(|_| bad("seed must be an integer"))?,
                })
            }
            "explicit" => {
                let idxs: std::result::Result<Vec<usize>, _> =
                    rest.split(',').map(str::parse).collect();
                Ok(Self::Explicit(idxs.map_err(|_| bad("indices must be integers"))?))
            }
            other => Err(bad(&format!("unknown kind {other:?}"))),
        }
    }
}

impl TryFrom<String> for ForgetSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ForgetSpec> for String {
    fn from(f: ForgetSpec) -> Self {
        f.to_string()
    }
}

/// A dataset split into retained and forgotten halves.
#[derive(Debug, Clone)]
pub struct ForgetPartition {
    pub retain: LabeledDataset,
    pub forget: LabeledDataset,
    /// Indices into the source dataset, ascending.
    pub retain_indices: Vec<usize>,
    /// Indices into the source dataset, ascending.
    pub forget_indices: Vec<usize>,
    /// Human-readable record of the spec that produced the split.
    pub provenance: String,
}

/// Realizes a [`ForgetSpec`] on a dataset. Every sample lands on exactly one
/// side, so `retain ⊎ forget` is always the original dataset.
pub fn split_forget(data: &LabeledDataset, spec: &ForgetSpec) -> Result<ForgetPartition> {
    let forget_indices: Vec<usize> = match spec {
        ForgetSpec::FullClass(class) => {
            if *class >= data.classes {
                return Err(Error::Index(format!(
                    "forget class {class} out of range for {} classes",
                    data.classes
                )));
            }
            (0..data.len()).filter(|&i| data.labels[i] == *class).collect()
        }
        ForgetSpec::SubClass(sub) => {
            let Some(sc) = &data.subclasses else {
                return Err(Error::Contract(
                    "sub_class forget spec on a dataset without subclass tags".into(),
                ));
            };
            let max = sc.iter().max().copied().unwrap_or(0);
            if *sub > max {
                return Err(Error::Index(format!(
                    "forget subclass {sub} out of range (max tag {max})"
                )));
            }
            (0..data.len()).filter(|&i| sc[i] == *sub).collect()
        }
        ForgetSpec::Random { count, seed } => {
            if *count > data.len() {
                return Err(Error::Index(format!(
                    "cannot forget {count} of {} samples",
                    data.len()
                )));
            }
            let mut idxs: Vec<usize> = (0..data.len()).collect();
            idxs.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let mut chosen = idxs[..*count].to_vec();
            chosen.sort_unstable();
            chosen
        }
        ForgetSpec::Explicit(idxs) => {
            let mut sorted = idxs.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Contract("explicit forget indices contain duplicates".into()));
            }
            if let Some(&bad) = sorted.iter().find(|&&i| i >= data.len()) {
                return Err(Error::Index(format!(
                    "explicit forget index {bad} out of range for {} samples",
                    data.len()
                )));
            }
            sorted
        }
    };

    let mut is_forget = vec![false; data.len()];
    for &i in &forget_indices {
        is_forget[i] = true;
    }
    let retain_indices: Vec<usize> = (0..data.len()).filter(|&i| !is_forget[i]).collect();
    Ok(ForgetPartition {
        retain: data.subset(&retain_indices)?,
        forget: data.subset(&forget_indices)?,
        retain_indices,
        forget_indices,
        provenance: spec.to_string(),
    })
}

// ---------------------------------------------------------------------------
