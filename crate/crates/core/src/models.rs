//! Classifier families, SGD training, and model serialization.
//!
//! Three architectures cover every experiment in the lab:
//!
//! * `mlp` — relu MLP with at least one hidden layer and a linear head.
//! * `small_cnn` — two convolutions + relu + flatten + linear head over
//!   `[3,32,32]` images.
//! * `sigmoid1d` — a scalar logit through a sigmoid (the 1-D
//!   boundary-visualization model), optionally preceded by sigmoid hidden
//!   layers; its probability vector is `[1 - s, s]`.
//!
//! All outputs are probability vectors of length `classes`. Forward passes
//! come in two flavours that share the same numeric kernels: a taped one for
//! gradients and a tape-free one for fast prediction. No normalization
//! layers exist anywhere, by design.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{kernels, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seeding;

// Fixed geometry of the small CNN (input is always [3,32,32]).
const CNN_IN_EDGE: usize = 32;
const CNN_C1_OUT: usize = 8;
const CNN_C2_OUT: usize = 16;
const CNN_KERNEL: usize = 3;
// First conv: stride 1, no padding, 32 -> 30.
const CNN_C1_EDGE: usize = CNN_IN_EDGE - CNN_KERNEL + 1;
// Second conv downsamples with stride 3: (30 - 3) / 3 + 1 = 10. A 3x3
// stride-2 window can never divide an even input extent exactly (the span
// stays odd no matter the padding), so stride 3 is the smallest legal
// downsampling stride under the exact-division convolution rule.
const CNN_C2_STRIDE: usize = 3;
const CNN_C2_EDGE: usize = (CNN_C1_EDGE - CNN_KERNEL) / CNN_C2_STRIDE + 1;
const CNN_FLAT: usize = CNN_C2_OUT * CNN_C2_EDGE * CNN_C2_EDGE;

/// Serialized model file magic.
pub const MODEL_MAGIC: [u8; 4] = *b"JITM";
/// Serialized model format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

/// Architecture tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Mlp,
    SmallCnn,
    Sigmoid1d,
}

/// Everything needed to build a model deterministically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Input dimensionality d (3072 for the CNN, 1 for sigmoid1d).
    pub input_dim: usize,
    /// Class count c.
    pub classes: usize,
    /// Hidden layer widths (mlp only; empty otherwise).
    pub hidden: Vec<usize>,
    /// Initialization seed.
    pub seed: u64,
}

impl ModelSpec {
    /// A relu MLP `d -> hidden... -> c` (at least one hidden layer).
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, classes: usize, seed: u64) -> Result<Self> {
        let spec = Self { arch: Arch::Mlp, input_dim, classes, hidden, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// The two-convolution image classifier over `[3,32,32]` inputs.
    pub fn small_cnn(classes: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            arch: Arch::SmallCnn,
            input_dim: 3 * CNN_IN_EDGE * CNN_IN_EDGE,
            classes,
            hidden: Vec::new(),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 1-D sigmoid model (one input, two classes).
    #[must_use]
    pub fn sigmoid1d(seed: u64) -> Self {
        Self { arch: Arch::Sigmoid1d, input_dim: 1, classes: 2, hidden: Vec::new(), seed }
    }

    /// A sigmoid1d with sigmoid hidden layers before the scalar logit
    /// (`1 -> hidden... -> 1`). The extra capacity lets the learned curve
    /// bend locally instead of rigidly shifting or rescaling, and the
    /// bounded units flatten the logit away from the data.
    pub fn sigmoid1d_deep(hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let spec = Self { arch: Arch::Sigmoid1d, input_dim: 1, classes: 2, hidden, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.arch {
            Arch::Mlp => {
                if self.input_dim == 0 || self.classes < 2 {
                    return Err(Error::Config(format!(
                        "mlp needs d >= 1 and c >= 2, got d={} c={}",
                        self.input_dim, self.classes
                    )));
                }
                if self.hidden.is_empty() || self.hidden.contains(&0) {
                    return Err(Error::Config(
                        "mlp needs at least one hidden layer of width >= 1".into(),
                    ));
                }
            }
            Arch::SmallCnn => {
                if self.input_dim != 3 * CNN_IN_EDGE * CNN_IN_EDGE {
                    return Err(Error::Config(format!(
                        "small_cnn input must be 3x32x32 = {}, got {}",
                        3 * CNN_IN_EDGE * CNN_IN_EDGE,
                        self.input_dim
                    )));
                }
                if self.classes < 2 {
                    return Err(Error::Config("small_cnn needs c >= 2".into()));
                }
                if !self.hidden.is_empty() {
                    return Err(Error::Config("small_cnn takes no hidden widths".into()));
                }
            }
            Arch::Sigmoid1d => {
                if self.input_dim != 1 || self.classes != 2 {
                    return Err(Error::Config("sigmoid1d is fixed at d=1, c=2".into()));
                }
                if self.hidden.contains(&0) {
                    return Err(Error::Config(
                        "sigmoid1d hidden widths must be >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Parameter tensors in declaration order as `(name, shape, fan_in)`.
    fn param_layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let dense_stack = |widths: &[usize]| {
            let mut layout = Vec::new();
            for l in 0..widths.len() - 1 {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                layout.push((format!("w{l}"), vec![fan_in, fan_out], fan_in));
                layout.push((format!("b{l}"), vec![1, fan_out], fan_in));
            }
            layout
        };
        match self.arch {
            Arch::Mlp => {
                let mut widths = vec![self.input_dim];
                widths.extend_from_slice(&self.hidden);
                widths.push(self.classes);
                dense_stack(&widths)
            }
            Arch::SmallCnn => vec![
                (
                    "conv1_w".into(),
                    vec![CNN_C1_OUT, 3, CNN_KERNEL, CNN_KERNEL],
                    3 * CNN_KERNEL * CNN_KERNEL,
                ),
                ("conv1_b".into(), vec![CNN_C1_OUT], 3 * CNN_KERNEL * CNN_KERNEL),
                (
                    "conv2_w".into(),
                    vec![CNN_C2_OUT, CNN_C1_OUT, CNN_KERNEL, CNN_KERNEL],
                    CNN_C1_OUT * CNN_KERNEL * CNN_KERNEL,
                ),
                ("conv2_b".into(), vec![CNN_C2_OUT], CNN_C1_OUT * CNN_KERNEL * CNN_KERNEL),
                ("fc_w".into(), vec![CNN_FLAT, self.classes], CNN_FLAT),
                ("fc_b".into(), vec![1, self.classes], CNN_FLAT),
            ],
            Arch::Sigmoid1d => {
                let mut widths = vec![1usize];
                widths.extend_from_slice(&self.hidden);
                widths.push(1);
                dense_stack(&widths)
            }
        }
    }

    /// Total number of scalar parameters.
    #[must_use]
    pub fn param_count(&self) -> usize {
        self.param_layout().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }

    /// Canonical descriptor embedded in serialized model files, e.g.
    /// `mlp;d=2;c=2;hidden=16;seed=42`.
    #[must_use]
    pub fn descriptor(&self) -> String {
        let arch = match self.arch {
            Arch::Mlp => "mlp",
            Arch::SmallCnn => "small_cnn",
            Arch::Sigmoid1d => "sigmoid1d",
        };
        let hidden: Vec<String> = self.hidden.iter().map(ToString::to_string).collect();
        let mut s = String::new();
        let _ = write!(
            s,
            "{arch};d={};c={};hidden={};seed={}",
            self.input_dim,
            self.classes,
            hidden.join(","),
            self.seed
        );
        s
    }

    /// Parses [`ModelSpec::descriptor`] output.
    pub fn parse_descriptor(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format(format!("model descriptor {s:?}: {msg}"));
        let mut parts = s.split(';');
        let arch = match parts.next() {
            Some("mlp") => Arch::Mlp,
            Some("small_cnn") => Arch::SmallCnn,
            Some("sigmoid1d") => Arch::Sigmoid1d,
            other => return Err(bad(format!("unknown architecture {other:?}"))),
        };
        let mut input_dim = None;
        let mut classes = None;
        let mut hidden = None;
        let mut seed = None;
        for part in parts {
            let (key, val) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
            match key {
                "d" => input_dim = Some(val.parse().map_err(|e| bad(format!("d: {e}")))?),
                "c" => classes = Some(val.parse().map_err(|e| bad(format!("c: {e}")))?),
                "hidden" => {
                    hidden = Some(if val.is_empty() {
                        Vec::new()
                    } else {
                        val.split(',')
                            .map(str::parse)
                            .collect::<std::result::Result<Vec<usize>, _>>()
                            .map_err(|e| bad(format!("hidden: {e}")))?
                    });
                }
                "seed" => seed = Some(val.parse().map_err(|e| bad(format!("seed: {e}")))?),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let spec = Self {
            arch,
            input_dim: input_dim.ok_or_else(|| bad("missing d".into()))?,
            classes: classes.ok_or_else(|| bad("missing c".into()))?,
            hidden: hidden.ok_or_else(|| bad("missing hidden".into()))?,
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// A concrete model: spec plus parameter tensors in declaration order.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    params: Vec<Param>,
}

/// Handles to one model's parameters on some tape, in declaration order.
pub struct TapedParams(Vec<Var>);

impl TapedParams {
    #[must_use]
    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Concatenates the parameters' gradients into one flat declaration-order
    /// vector (requires a prior `backward` on the tape).
    pub fn flat_grads(&self, tape: &Tape) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for v in &self.0 {
            out.extend_from_slice(tape.grad(*v)?);
        }
        Ok(out)
    }
}

/// Builds a model with scaled-uniform fan-in initialization: weights drawn
/// from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero. Deterministic in
/// `spec.seed`.
pub fn init_model(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let mut rng = seeding::stream(spec.seed, "init");
    let params = spec
        .param_layout()
        .into_iter()
        .map(|(name, shape, fan_in)| {
            let numel: usize = shape.iter().product();
            let is_bias = name.starts_with('b') || name.ends_with("_b");
            let data = if is_bias {
                vec![0.0; numel]
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..numel).map(|_| rng.gen_range(-bound..bound)).collect()
            };
            Ok(Param { name, value: Tensor::from_vec(shape, data)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Model { spec: spec.clone(), params })
}

/// A model with every parameter zero; useful for symmetry diagnostics (its
/// output is exactly uniform everywhere).
pub fn zeroed_model(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let params = spec
        .param_layout()
        .into_iter()
        .map(|(name, shape, _)| Ok(Param { name, value: Tensor::zeros(shape)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Model { spec: spec.clone(), params })
}

impl Model {
    #[must_use]
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    #[must_use]
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// FNV-1a hash over the exact parameter bits; cheap identity check for
    /// "did anything mutate this model".
    #[must_use]
    pub fn param_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for v in p.value.data() {
                for byte in v.to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Flat copy of every parameter in declaration order.
    #[must_use]
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    /// One plain gradient-descent step `θ ← θ − η·g` over the flat
    /// declaration-order parameter vector.
    pub fn gradient_step(&mut self, flat_grad: &[f64], eta: f64) -> Result<()> {
        if flat_grad.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "{} gradient entries for a {}-parameter model",
                flat_grad.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v -= eta * flat_grad[off];
                off += 1;
            }
        }
        Ok(())
    }

    /// Overwrites parameters from a flat buffer in declaration order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "{} flat parameters for a {}-parameter model",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Shapes an input slice into the tensor the architecture consumes.
    pub fn input_tensor(&self, x: &[f64]) -> Result<Tensor> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "input has dimension {}, model wants {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        match self.spec.arch {
            Arch::Mlp | Arch::Sigmoid1d => Tensor::from_vec(vec![1, x.len()], x.to_vec()),
            Arch::SmallCnn => Tensor::from_vec(vec![3, CNN_IN_EDGE, CNN_IN_EDGE], x.to_vec()),
        }
    }

    /// Records the parameters on a tape. With `trainable = true` gradients
    /// flow into them; with `false` they are frozen constants (used when
    /// only input gradients are wanted).
    pub fn tape_params(&self, tape: &mut Tape, trainable: bool) -> TapedParams {
        TapedParams(
            self.params
                .iter()
                .map(|p| {
                    if trainable {
                        tape.param(p.value.clone())
                    } else {
                        tape.leaf(p.value.clone())
                    }
                })
                .collect(),
        )
    }

    /// Taped forward pass to the raw logit vector `[c]` (pre-sigmoid scalar
    /// `[1]` for sigmoid1d).
    pub fn forward_logits(&self, tape: &mut Tape, pv: &TapedParams, x: Var) -> Result<Var> {
        let vars = &pv.0;
        match self.spec.arch {
            Arch::Mlp | Arch::Sigmoid1d => {
                let sig = self.spec.arch == Arch::Sigmoid1d;
                let layers = vars.len() / 2;
                let mut h = x;
                for l in 0..layers {
                    let z = tape.matmul(h, vars[2 * l])?;
                    let zb = tape.add(z, vars[2 * l + 1])?;
                    h = if l + 1 == layers {
                        zb
                    } else if sig {
                        // Bounded hidden units keep the scalar logit flat far
                        // from the data, unlike relu's unbounded tails.
                        tape.sigmoid(zb)
                    } else {
                        tape.relu(zb)
                    };
                }
                tape.reshape(h, vec![if sig { 1 } else { self.spec.classes }])
            }
            Arch::SmallCnn => {
                let c1 = tape.conv2d(x, vars[0], 1, 0)?;
                let c1b = tape.bias_add_chw(c1, vars[1])?;
                let a1 = tape.relu(c1b);
                let c2 = tape.conv2d(a1, vars[2], CNN_C2_STRIDE, 0)?;
                let c2b = tape.bias_add_chw(c2, vars[3])?;
                let a2 = tape.relu(c2b);
                let flat = tape.reshape(a2, vec![1, CNN_FLAT])?;
                let z = tape.matmul(flat, vars[4])?;
                let zb = tape.add(z, vars[5])?;
                tape.reshape(zb, vec![self.spec.classes])
            }
        }
    }

    /// Taped forward pass to the probability vector `[c]`: softmax over the
    /// logits, or `[1 - s, s]` for sigmoid1d.
    pub fn forward_proba(&self, tape: &mut Tape, pv: &TapedParams, x: Var) -> Result<Var> {
        let logits = self.forward_logits(tape, pv, x)?;
        match self.spec.arch {
            Arch::Mlp | Arch::SmallCnn => tape.softmax(logits),
            Arch::Sigmoid1d => {
                let s = tape.sigmoid(logits);
                let one = tape.leaf(Tensor::scalar(1.0));
                let q = tape.sub(one, s)?;
                tape.concat(q, s)
            }
        }
    }

    /// Tape-free probability prediction (same kernels as the taped path, no
    /// gradient bookkeeping). Never mutates the model.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "input has dimension {}, model wants {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        match self.spec.arch {
            Arch::Mlp | Arch::Sigmoid1d => {
                let sig = self.spec.arch == Arch::Sigmoid1d;
                let layers = self.params.len() / 2;
                let mut h = x.to_vec();
                for l in 0..layers {
                    let w = &self.params[2 * l].value;
                    let b = &self.params[2 * l + 1].value;
                    let (k, n) = (w.shape()[0], w.shape()[1]);
                    let mut z = kernels::matmul(&h, 1, k, w.data(), n);
                    for (zi, bi) in z.iter_mut().zip(b.data()) {
                        *zi += bi;
                    }
                    if l + 1 < layers {
                        for zi in &mut z {
                            *zi = if sig { kernels::sigmoid(*zi) } else { zi.max(0.0) };
                        }
                    }
                    h = z;
                }
                if sig {
                    let s = kernels::sigmoid(h[0]);
                    Ok(vec![1.0 - s, s])
                } else {
                    Ok(kernels::softmax_1d(&h))
                }
            }
            Arch::SmallCnn => {
                let w1 = &self.params[0].value;
                let mut a1 = kernels::conv2d(
                    x, 3, CNN_IN_EDGE, CNN_IN_EDGE,
                    w1.data(), CNN_C1_OUT, CNN_KERNEL, CNN_KERNEL,
                    1, 0, CNN_C1_EDGE, CNN_C1_EDGE,
                );
                add_chw_bias_relu(&mut a1, self.params[1].value.data(), CNN_C1_EDGE);
                let w2 = &self.params[2].value;
                let mut a2 = kernels::conv2d(
                    &a1, CNN_C1_OUT, CNN_C1_EDGE, CNN_C1_EDGE,
                    w2.data(), CNN_C2_OUT, CNN_KERNEL, CNN_KERNEL,
                    CNN_C2_STRIDE, 0, CNN_C2_EDGE, CNN_C2_EDGE,
                );
                add_chw_bias_relu(&mut a2, self.params[3].value.data(), CNN_C2_EDGE);
                let wf = &self.params[4].value;
                let mut z = kernels::matmul(&a2, 1, CNN_FLAT, wf.data(), self.spec.classes);
                for (zi, bi) in z.iter_mut().zip(self.params[5].value.data()) {
                    *zi += bi;
                }
                Ok(kernels::softmax_1d(&z))
            }
        }
    }

    /// Argmax prediction; ties resolve to the lowest class index.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let probs = self.predict_proba(x)?;
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// In-place per-channel bias add followed by relu on a `[C,edge,edge]`
/// buffer (fast-path helper).
fn add_chw_bias_relu(buf: &mut [f64], bias: &[f64], edge: usize) {
    let plane = edge * edge;
    for (ch, b) in bias.iter().enumerate() {
        for v in &mut buf[ch * plane..(ch + 1) * plane] {
            *v = (*v + b).max(0.0);
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Same rate every epoch.
    Constant,
    /// Epoch `e` of `E` uses `lr * (E - e) / E` (never reaches zero).
    LinearDecay,
}

/// Plain minibatch SGD settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    /// The 2-D desk defaults: 200 epochs of lr 0.05, batches of 16.
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.05,
            batch_size: 16,
            shuffle_seed: 0,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // learning_rate 0 is allowed as an explicit no-op guard.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn rate_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::LinearDecay => {
                self.learning_rate * (self.epochs - epoch) as f64 / self.epochs as f64
            }
        }
    }
}

/// Minibatch SGD on cross-entropy. Returns the per-epoch mean loss trace.
/// Deterministic given the model parameters and `cfg.shuffle_seed`: samples
/// are visited in a seeded shuffled order, gradients accumulate sequentially
/// over each batch, and the update is the batch-mean gradient.
pub fn train_sgd(model: &mut Model, data: &crate::data::LabeledDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("train_sgd on empty dataset".into()));
    }
    if data.dim != model.spec.input_dim {
        return Err(Error::Dimension(format!(
            "dataset dimension {} vs model input {}",
            data.dim, model.spec.input_dim
        )));
    }
    if data.classes > model.spec.classes {
        return Err(Error::Index(format!(
            "dataset has {} classes, model only {}",
            data.classes, model.spec.classes
        )));
    }

    let mut rng = seeding::stream(cfg.shuffle_seed, "shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let lr = cfg.rate_at(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            epoch_loss += sgd_batch_step(model, data, batch, lr)?;
        }
        trace.push(epoch_loss / data.len() as f64);
    }
    Ok(trace)
}

/// One SGD step on a batch: per-sample tapes, summed gradients, one
/// batch-mean update. Returns the summed (not averaged) loss.
fn sgd_batch_step(
    model: &mut Model,
    data: &crate::data::LabeledDataset,
    batch: &[usize],
    lr: f64,
) -> Result<f64> {
    let mut grad_acc = vec![0.0; model.param_count()];
    let mut loss_sum = 0.0;
    for &i in batch {
        let mut tape = Tape::new();
        let pv = model.tape_params(&mut tape, true);
        let x = tape.leaf(model.input_tensor(&data.inputs[i])?);
        let probs = model.forward_proba(&mut tape, &pv, x)?;
        let loss = tape.cross_entropy(probs, data.labels[i])?;
        loss_sum += tape.value(loss).item()?;
        tape.backward(loss)?;
        let g = pv.flat_grads(&tape)?;
        for (acc, gi) in grad_acc.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    if lr > 0.0 {
        model.gradient_step(&grad_acc, lr / batch.len() as f64)?;
    }
    Ok(loss_sum)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Serializes a model: magic `JITM`, format version (u32 LE), length-prefixed
/// UTF-8 spec descriptor, then every parameter tensor as little-endian f64 in
/// declaration order.
#[must_use]
pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let descriptor = model.spec.descriptor();
    let mut bytes = Vec::with_capacity(12 + descriptor.len() + 8 * model.param_count());
    bytes.extend_from_slice(&MODEL_MAGIC);
    bytes.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(descriptor.len()).expect("short descriptor").to_le_bytes());
    bytes.extend_from_slice(descriptor.as_bytes());
    for p in &model.params {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

/// Inverse of [`model_to_bytes`]; every structural problem is a format error.
pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let fail = |msg: &str| Error::Format(format!("model file: {msg}"));
    if bytes.len() < 12 {
        return Err(fail("shorter than the fixed header"));
    }
    if bytes[..4] != MODEL_MAGIC {
        return Err(fail("bad magic (expected JITM)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("sliced 4"));
    if version != MODEL_FORMAT_VERSION {
        return Err(fail(&format!(
            "unsupported format version {version} (expected {MODEL_FORMAT_VERSION})"
        )));
    }
    let desc_len = u32::from_le_bytes(bytes[8..12].try_into().expect("sliced 4")) as usize;
    if bytes.len() < 12 + desc_len {
        return Err(fail("truncated descriptor"));
    }
    let descriptor = std::str::from_utf8(&bytes[12..12 + desc_len])
        .map_err(|_| fail("descriptor is not UTF-8"))?;
    let spec = ModelSpec::parse_descriptor(descriptor)?;
    let mut model = zeroed_model(&spec)?;
    let payload = &bytes[12 + desc_len..];
    let want = model.param_count() * 8;
    if payload.len() != want {
        return Err(fail(&format!(
            "parameter payload is {} bytes, spec wants {want}",
            payload.len()
        )));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunked 8")))
        .collect();
    model.set_flat_params(&flat)?;
    Ok(model)
}

/// Writes a model file (see [`model_to_bytes`] for the format).
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

/// Reads a model file written by [`save_model`].
pub fn load_model(path: &Path) -> Result<Model> {
    model_from_bytes(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
