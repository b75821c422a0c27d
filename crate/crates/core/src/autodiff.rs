//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Tape`] records every operation as a node; [`Tape::backward`] walks the
//! nodes in reverse creation order and accumulates gradients additively into
//! each node that (transitively) depends on a parameter leaf. Creation order
//! is a valid topological order because an operation can only consume values
//! that already exist, so the reverse sweep needs no explicit sorting.
//!
//! Design notes:
//!
//! * Values are plain row-major `f64` buffers; shapes are explicit and every
//!   shape mismatch is an error, not a broadcast. The single exception is
//!   that `add`/`sub`/`mul` accept a one-element tensor on either side and
//!   broadcast it against the other operand.
//! * Gradients accumulate: calling [`Tape::backward`] twice doubles every
//!   gradient. Callers wanting fresh gradients build a fresh tape (the usual
//!   pattern: one tape per training step).
//! * A tape is single-threaded; parallel code builds one tape per task.

use crate::error::{Error, Result};

/// Smallest probability the cross-entropy node will take a logarithm of.
pub const CROSS_ENTROPY_CLAMP: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Tensor values
// ---------------------------------------------------------------------------

/// A dense row-major `f64` tensor value (no gradient state of its own).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly and the
    /// tensor is non-empty.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel == 0 {
            return Err(Error::Dimension(format!("empty tensor shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} wants {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// An all-zeros tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::from_vec(shape, vec![0.0; numel])
    }

    /// A one-element tensor holding `x`.
    #[must_use]
    pub fn scalar(x: f64) -> Self {
        Self { shape: vec![1], data: vec![x] }
    }

    /// A 1-D tensor over `data`.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::from_vec(vec![n], data)
    }

    #[must_use]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[must_use]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[must_use]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[must_use]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "item() on tensor with {} elements",
                self.numel()
            )))
        }
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

/// Handle to a value recorded on a [`Tape`].
///
/// A `Var` is only meaningful on the tape that created it; indexing with a
/// foreign handle panics (programmer error, like an out-of-bounds slice).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Geometry of a recorded convolution, kept for the backward pass.
#[derive(Debug, Clone, Copy)]
struct ConvDims {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k_h: usize,
    k_w: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Conv2d { x: usize, kern: usize, dims: ConvDims },
    BiasAddChw { x: usize, bias: usize },
    Relu { x: usize },
    Sigmoid { x: usize },
    Exp { x: usize },
    Log { x: usize },
    Sum { x: usize },
    Mean { x: usize },
    Softmax { x: usize },
    L2Norm { x: usize },
    CrossEntropy { probs: usize, label: usize },
    Reshape { x: usize },
    Concat { a: usize, b: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Per-backward-call gradient buffers, indexed like the tape nodes. Kept
/// separate from the persistent `Node::grad` accumulators so that repeated
/// backward calls add identical contributions instead of compounding stale
/// intermediate gradients.
struct Scratch(Vec<Option<Vec<f64>>>);

impl Scratch {
    fn add(&mut self, idx: usize, numel: usize, i: usize, v: f64) {
        self.0[idx].get_or_insert_with(|| vec![0.0; numel])[i] += v;
    }

    fn add_slice(&mut self, idx: usize, contrib: &[f64]) {
        let g = self.0[idx].get_or_insert_with(|| vec![0.0; contrib.len()]);
        for (gi, ci) in g.iter_mut().zip(contrib) {
            *gi += *ci;
        }
    }
}

/// Reverse-mode tape: a growing list of operation nodes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    #[must_use]
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    #[must_use]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input; gradients never flow into it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable parameter; gradients accumulate into it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// The value currently held by `v`.
    #[must_use]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// The gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Result<&[f64]> {
        self.nodes[v.0]
            .grad
            .as_deref()
            .ok_or_else(|| Error::Contract("gradient not computed; run backward first".into()))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // -- elementwise ------------------------------------------------------

    /// Elementwise addition; one side may be a one-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.broadcast_pair(a, b, "add", |x, y| x + y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor { shape, data }, Op::Add { a: a.0, b: b.0 }, rg))
    }

    /// Elementwise subtraction; one side may be a one-element tensor.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.broadcast_pair(a, b, "sub", |x, y| x - y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor { shape, data }, Op::Sub { a: a.0, b: b.0 }, rg))
    }

    /// Elementwise (Hadamard) product; one side may be a one-element tensor.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.broadcast_pair(a, b, "mul", |x, y| x * y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor { shape, data }, Op::Mul { a: a.0, b: b.0 }, rg))
    }

    /// Elementwise quotient; one side may be a one-element tensor. The
    /// caller is responsible for keeping the denominator away from zero.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.broadcast_pair(a, b, "div", |x, y| x / y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor { shape, data }, Op::Div { a: a.0, b: b.0 }, rg))
    }

    /// Shared shape handling for the binary elementwise ops: equal shapes, or
    /// a one-element tensor broadcast against the other side.
    fn broadcast_pair(
        &self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        if ta.shape == tb.shape {
            let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
            Ok((ta.shape.clone(), data))
        } else if ta.numel() == 1 {
            let s = ta.data[0];
            Ok((tb.shape.clone(), tb.data.iter().map(|y| f(s, *y)).collect()))
        } else if tb.numel() == 1 {
            let s = tb.data[0];
            Ok((ta.shape.clone(), ta.data.iter().map(|x| f(*x, s)).collect()))
        } else {
            Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} do not match",
                ta.shape, tb.shape
            )))
        }
    }

    // -- linear algebra ---------------------------------------------------

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let (&[m, k], &[k2, n]) = (&ta.shape[..], &tb.shape[..]) else {
            return Err(Error::Dimension(format!(
                "matmul wants 2-D operands, got {:?} and {:?}",
                ta.shape, tb.shape
            )));
        };
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dims differ: {:?} x {:?}",
                ta.shape, tb.shape
            )));
        }
        let data = kernels::matmul(&ta.data, m, k, &tb.data, n);
        let rg = self.requires(a) || self.requires(b);
        let t = Tensor { shape: vec![m, n], data };
        Ok(self.push(t, Op::MatMul { a: a.0, b: b.0, m, k, n }, rg))
    }

    /// 2-D cross-correlation of a `[C,H,W]` input with `[O,C,kH,kW]` kernels,
    /// zero padding, and an exact-division output extent
    /// `H' = (H + 2*padding - kH) / stride + 1` (non-integral extents are
    /// dimension errors).
    pub fn conv2d(&mut self, x: Var, kern: Var, stride: usize, padding: usize) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let tk = &self.nodes[kern.0].value;
        let (&[in_c, in_h, in_w], &[out_c, kc, k_h, k_w]) = (&tx.shape[..], &tk.shape[..]) else {
            return Err(Error::Dimension(format!(
                "conv2d wants [C,H,W] input and [O,C,kH,kW] kernels, got {:?} and {:?}",
                tx.shape, tk.shape
            )));
        };
        if kc != in_c {
            return Err(Error::Dimension(format!(
                "conv2d kernel channels {kc} do not match input channels {in_c}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        let out_h = kernels::conv_out_extent(in_h, k_h, padding, stride)?;
        let out_w = kernels::conv_out_extent(in_w, k_w, padding, stride)?;
        let dims = ConvDims { in_c, in_h, in_w, out_c, k_h, k_w, out_h, out_w, stride, padding };
        let data = kernels::conv2d(
            &tx.data, in_c, in_h, in_w, &tk.data, out_c, k_h, k_w, stride, padding, out_h, out_w,
        );
        let rg = self.requires(x) || self.requires(kern);
        let t = Tensor { shape: vec![out_c, out_h, out_w], data };
        Ok(self.push(t, Op::Conv2d { x: x.0, kern: kern.0, dims }, rg))
    }

    /// Adds a per-channel bias `[C]` to every spatial position of `[C,H,W]`.
    pub fn bias_add_chw(&mut self, x: Var, bias: Var) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let tb = &self.nodes[bias.0].value;
        let (&[c, h, w], &[bc]) = (&tx.shape[..], &tb.shape[..]) else {
            return Err(Error::Dimension(format!(
                "bias_add_chw wants [C,H,W] input and [C] bias, got {:?} and {:?}",
                tx.shape, tb.shape
            )));
        };
        if bc != c {
            return Err(Error::Dimension(format!(
                "bias_add_chw bias length {bc} does not match {c} channels"
            )));
        }
        let plane = h * w;
        let mut data = tx.data.clone();
        for ch in 0..c {
            let b = tb.data[ch];
            for v in &mut data[ch * plane..(ch + 1) * plane] {
                *v += b;
            }
        }
        let rg = self.requires(x) || self.requires(bias);
        let t = Tensor { shape: vec![c, h, w], data };
        Ok(self.push(t, Op::BiasAddChw { x: x.0, bias: bias.0 }, rg))
    }

    // -- nonlinearities ---------------------------------------------------

    /// Elementwise `max(x, 0)`; the derivative at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let data = tx.data.iter().map(|v| v.max(0.0)).collect();
        let t = Tensor { shape: tx.shape.clone(), data };
        let rg = self.requires(x);
        self.push(t, Op::Relu { x: x.0 }, rg)
    }

    /// Elementwise logistic sigmoid `1 / (1 + e^-x)`.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let data = tx.data.iter().map(|v| kernels::sigmoid(*v)).collect();
        let t = Tensor { shape: tx.shape.clone(), data };
        let rg = self.requires(x);
        self.push(t, Op::Sigmoid { x: x.0 }, rg)
    }

    /// Elementwise `e^x`.
    pub fn exp(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let data = tx.data.iter().map(|v| v.exp()).collect();
        let t = Tensor { shape: tx.shape.clone(), data };
        let rg = self.requires(x);
        self.push(t, Op::Exp { x: x.0 }, rg)
    }

    /// Elementwise natural logarithm; any entry `<= 0` is a domain error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if let Some(bad) = tx.data.iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let data = tx.data.iter().map(|v| v.ln()).collect();
        let t = Tensor { shape: tx.shape.clone(), data };
        let rg = self.requires(x);
        Ok(self.push(t, Op::Log { x: x.0 }, rg))
    }

    // -- reductions -------------------------------------------------------

    /// Sum of all elements (a one-element tensor).
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].value.data.iter().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, rg)
    }

    /// Mean of all elements (a one-element tensor).
    pub fn mean(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let m = tx.data.iter().sum::<f64>() / tx.numel() as f64;
        let rg = self.requires(x);
        self.push(Tensor::scalar(m), Op::Mean { x: x.0 }, rg)
    }

    /// Euclidean norm of all elements (a one-element tensor). The gradient
    /// at the zero vector is defined as zero.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.requires(x);
        self.push(Tensor::scalar(n), Op::L2Norm { x: x.0 }, rg)
    }

    // -- classification head ----------------------------------------------

    /// Softmax over a 1-D tensor, computed with max subtraction so large
    /// logits cannot overflow.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if tx.shape.len() != 1 {
            return Err(Error::Dimension(format!(
                "softmax wants a 1-D tensor, got shape {:?}",
                tx.shape
            )));
        }
        let data = kernels::softmax_1d(&tx.data);
        let t = Tensor { shape: tx.shape.clone(), data };
        let rg = self.requires(x);
        Ok(self.push(t, Op::Softmax { x: x.0 }, rg))
    }

    /// Negative log-likelihood `-ln(probs[label])` of a 1-D probability
    /// vector, with the probability clamped at [`CROSS_ENTROPY_CLAMP`].
    pub fn cross_entropy(&mut self, probs: Var, label: usize) -> Result<Var> {
        let tp = &self.nodes[probs.0].value;
        if tp.shape.len() != 1 {
            return Err(Error::Dimension(format!(
                "cross_entropy wants a 1-D probability vector, got shape {:?}",
                tp.shape
            )));
        }
        if label >= tp.numel() {
            return Err(Error::Index(format!(
                "cross_entropy label {label} out of range for {} classes",
                tp.numel()
            )));
        }
        let p = tp.data[label].max(CROSS_ENTROPY_CLAMP);
        let rg = self.requires(probs);
        Ok(self.push(Tensor::scalar(-p.ln()), Op::CrossEntropy { probs: probs.0, label }, rg))
    }

    /// Concatenates two 1-D tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        if ta.shape.len() != 1 || tb.shape.len() != 1 {
            return Err(Error::Dimension(format!(
                "concat wants 1-D tensors, got {:?} and {:?}",
                ta.shape, tb.shape
            )));
        }
        let mut data = ta.data.clone();
        data.extend_from_slice(&tb.data);
        let n = data.len();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor { shape: vec![n], data }, Op::Concat { a: a.0, b: b.0 }, rg))
    }

    // -- shape ------------------------------------------------------------

    /// Reinterprets the value under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let numel: usize = shape.iter().product();
        if numel != tx.numel() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {:?} changes element count",
                tx.shape, shape
            )));
        }
        let t = Tensor { shape, data: tx.data.clone() };
        let rg = self.requires(x);
        Ok(self.push(t, Op::Reshape { x: x.0 }, rg))
    }

    // -- backward ---------------------------------------------------------

    /// Reverse sweep from a one-element root. Each call computes the full
    /// gradient in per-call scratch buffers and then adds it into the
    /// persistent per-node accumulators, so calling backward twice doubles
    /// every gradient. After a call, every node up to the root that depends
    /// on a parameter has a readable (possibly zero) gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be one element, got shape {:?}",
                self.nodes[root.0].value.shape
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Err(Error::Contract(
                "backward root does not depend on any parameter".into(),
            ));
        }
        let mut scratch = Scratch(vec![None; root.0 + 1]);
        scratch.0[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = scratch.0[i].take() else { continue };
            self.push_input_grads(&mut scratch, i, &g);
            let node = &mut self.nodes[i];
            let numel = node.value.numel();
            let acc = node.grad.get_or_insert_with(|| vec![0.0; numel]);
            for (a, gv) in acc.iter_mut().zip(&g) {
                *a += *gv;
            }
        }
        // Parameters that got no contribution (e.g. behind the l2_norm zero
        // guard) still expose an explicit zero gradient.
        for node in &mut self.nodes[..=root.0] {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(())
    }

    /// Routes the output gradient `g` of node `i` into its inputs' scratch
    /// buffers (only for inputs that require gradients).
    fn push_input_grads(&self, scratch: &mut Scratch, i: usize, g: &[f64]) {
        let out = &self.nodes[i].value;
        let wants = |idx: usize| self.nodes[idx].requires_grad;
        let val = |idx: usize| &self.nodes[idx].value;

        match self.nodes[i].op {
            Op::Leaf => {}

            Op::Add { a, b } => {
                self.binary_grads(scratch, a, b, g, |_, _| (1.0, 1.0));
            }
            Op::Sub { a, b } => {
                self.binary_grads(scratch, a, b, g, |_, _| (1.0, -1.0));
            }
            Op::Mul { a, b } => {
                self.binary_grads(scratch, a, b, g, |x, y| (y, x));
            }
            Op::Div { a, b } => {
                self.binary_grads(scratch, a, b, g, |x, y| (1.0 / y, -x / (y * y)));
            }

            Op::MatMul { a, b, m, k, n } => {
                // dA += g . B^T ; dB += A^T . g
                if wants(a) {
                    let bd = &val(b).data;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += gij * bd[p * n + j];
                            }
                        }
                    }
                    scratch.add_slice(a, &da);
                }
                if wants(b) {
                    let ad = &val(a).data;
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    scratch.add_slice(b, &db);
                }
            }

            Op::Conv2d { x, kern, dims } => {
                self.conv2d_grads(scratch, x, kern, dims, g);
            }

            Op::BiasAddChw { x, bias } => {
                if wants(x) {
                    scratch.add_slice(x, g);
                }
                if wants(bias) {
                    let c = val(bias).numel();
                    let plane = g.len() / c;
                    for ch in 0..c {
                        let s: f64 = g[ch * plane..(ch + 1) * plane].iter().sum();
                        scratch.add(bias, c, ch, s);
                    }
                }
            }

            Op::Relu { x } => {
                if wants(x) {
                    let contrib: Vec<f64> = val(x)
                        .data
                        .iter()
                        .zip(g)
                        .map(|(v, gi)| if *v > 0.0 { *gi } else { 0.0 })
                        .collect();
                    scratch.add_slice(x, &contrib);
                }
            }
            Op::Sigmoid { x } => {
                if wants(x) {
                    let contrib: Vec<f64> =
                        out.data.iter().zip(g).map(|(s, gi)| gi * s * (1.0 - s)).collect();
                    scratch.add_slice(x, &contrib);
                }
            }
            Op::Exp { x } => {
                if wants(x) {
                    let contrib: Vec<f64> = out.data.iter().zip(g).map(|(e, gi)| gi * e).collect();
                    scratch.add_slice(x, &contrib);
                }
            }
            Op::Log { x } => {
                if wants(x) {
                    let contrib: Vec<f64> =
                        val(x).data.iter().zip(g).map(|(v, gi)| gi / v).collect();
                    scratch.add_slice(x, &contrib);
                }
            }

            Op::Sum { x } => {
                if wants(x) {
                    scratch.add_slice(x, &vec![g[0]; val(x).numel()]);
                }
            }
            Op::Mean { x } => {
                if wants(x) {
                    let n = val(x).numel();
                    scratch.add_slice(x, &vec![g[0] / n as f64; n]);
                }
            }
            Op::L2Norm { x } => {
                if wants(x) {
                    let norm = out.data[0];
                    // Gradient x / |x|, defined as zero at the zero vector.
                    if norm > 0.0 {
                        let contrib: Vec<f64> =
                            val(x).data.iter().map(|v| g[0] * v / norm).collect();
                        scratch.add_slice(x, &contrib);
                    }
                }
            }

            Op::Softmax { x } => {
                if wants(x) {
                    // dx_i = y_i * (g_i - sum_j g_j y_j)
                    let dot: f64 = g.iter().zip(&out.data).map(|(gi, yi)| gi * yi).sum();
                    let contrib: Vec<f64> =
                        out.data.iter().zip(g).map(|(yi, gi)| yi * (gi - dot)).collect();
                    scratch.add_slice(x, &contrib);
                }
            }
            Op::CrossEntropy { probs, label } => {
                if wants(probs) {
                    let p = val(probs).data[label];
                    // Flat inside the clamp region, -1/p outside it.
                    if p > CROSS_ENTROPY_CLAMP {
                        scratch.add(probs, val(probs).numel(), label, -g[0] / p);
                    }
                }
            }

            Op::Reshape { x } => {
                if wants(x) {
                    scratch.add_slice(x, g);
                }
            }
            Op::Concat { a, b } => {
                let na = val(a).numel();
                if wants(a) {
                    scratch.add_slice(a, &g[..na]);
                }
                if wants(b) {
                    scratch.add_slice(b, &g[na..]);
                }
            }
        }
    }

    /// Shared backward for the broadcasting binary elementwise ops.
    /// `d(a_elem, b_elem) -> (d/da, d/db)` evaluated per element; the
    /// broadcast one-element side receives the sum of its contributions.
    fn binary_grads(
        &self,
        scratch: &mut Scratch,
        a: usize,
        b: usize,
        g: &[f64],
        d: impl Fn(f64, f64) -> (f64, f64),
    ) {
        let av = &self.nodes[a].value.data;
        let bv = &self.nodes[b].value.data;
        let at = |i: usize| if av.len() == 1 { av[0] } else { av[i] };
        let bt = |i: usize| if bv.len() == 1 { bv[0] } else { bv[i] };

        if self.nodes[a].requires_grad {
            if av.len() == 1 && g.len() > 1 {
                let s: f64 = g.iter().enumerate().map(|(i, gi)| gi * d(at(i), bt(i)).0).sum();
                scratch.add(a, 1, 0, s);
            } else {
                let contrib: Vec<f64> =
                    g.iter().enumerate().map(|(i, gi)| gi * d(at(i), bt(i)).0).collect();
                scratch.add_slice(a, &contrib);
            }
        }
        if self.nodes[b].requires_grad {
            if bv.len() == 1 && g.len() > 1 {
                let s: f64 = g.iter().enumerate().map(|(i, gi)| gi * d(at(i), bt(i)).1).sum();
                scratch.add(b, 1, 0, s);
            } else {
                let contrib: Vec<f64> =
                    g.iter().enumerate().map(|(i, gi)| gi * d(at(i), bt(i)).1).collect();
                scratch.add_slice(b, &contrib);
            }
        }
    }

    fn conv2d_grads(&self, scratch: &mut Scratch, x: usize, kern: usize, dims: ConvDims, g: &[f64]) {
        let ConvDims { in_c, in_h, in_w, out_c, k_h, k_w, out_h, out_w, stride, padding } = dims;
        let want_dx = self.nodes[x].requires_grad;
        let want_dk = self.nodes[kern].requires_grad;
        if !want_dx && !want_dk {
            return;
        }
        let xd = &self.nodes[x].value.data;
        let kd = &self.nodes[kern].value.data;
        let mut dx = vec![0.0; xd.len()];
        let mut dk = vec![0.0; kd.len()];

        let in_plane = in_h * in_w;
        let out_plane = out_h * out_w;
        for oc in 0..out_c {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let go = g[oc * out_plane + oy * out_w + ox];
                    if go == 0.0 {
                        continue;
                    }
                    let base_y = (oy * stride) as isize - padding as isize;
                    let base_x = (ox * stride) as isize - padding as isize;
                    for ic in 0..in_c {
                        for ky in 0..k_h {
                            let iy = base_y + ky as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            for kx in 0..k_w {
                                let ix = base_x + kx as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                let xi = ic * in_plane + iy as usize * in_w + ix as usize;
                                let ki = ((oc * in_c + ic) * k_h + ky) * k_w + kx;
                                if want_dk {
                                    dk[ki] += go * xd[xi];
                                }
                                if want_dx {
                                    dx[xi] += go * kd[ki];
                                }
                            }
                        }
                    }
                }
            }
        }
        if want_dx {
            scratch.add_slice(x, &dx);
        }
        if want_dk {
            scratch.add_slice(kern, &dk);
        }
    }
}

// ---------------------------------------------------------------------------
// Raw kernels (shared with the tape-free prediction path)
// ---------------------------------------------------------------------------

/// Plain forward kernels used by both the tape ops above and the fast
/// no-gradient prediction path, so the two paths cannot drift apart.
pub(crate) mod kernels {
    use crate::error::{Error, Result};

    /// Row-major `[m,k] x [k,n]` product.
    pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        out
    }

    /// Output extent of a convolution axis under the exact-division rule.
    pub fn conv_out_extent(input: usize, kernel: usize, padding: usize, stride: usize) -> Result<usize> {
        let padded = input + 2 * padding;
        if kernel == 0 || kernel > padded {
            return Err(Error::Dimension(format!(
                "conv2d kernel extent {kernel} does not fit padded input {padded}"
            )));
        }
        let span = padded - kernel;
        if span % stride != 0 {
            return Err(Error::Dimension(format!(
                "conv2d output extent ({padded} - {kernel}) / {stride} + 1 is not integral"
            )));
        }
        Ok(span / stride + 1)
    }

    /// Cross-correlation forward pass (see `Tape::conv2d` for conventions).
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        x: &[f64],
        in_c: usize,
        in_h: usize,
        in_w: usize,
        kern: &[f64],
        out_c: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        padding: usize,
        out_h: usize,
        out_w: usize,
    ) -> Vec<f64> {
        let in_plane = in_h * in_w;
        let out_plane = out_h * out_w;
        let mut out = vec![0.0; out_c * out_plane];
        for oc in 0..out_c {
            for oy in 0..out_h {
                let base_y = (oy * stride) as isize - padding as isize;
                for ox in 0..out_w {
                    let base_x = (ox * stride) as isize - padding as isize;
                    let mut acc = 0.0;
                    for ic in 0..in_c {
                        for ky in 0..k_h {
                            let iy = base_y + ky as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let xrow = ic * in_plane + iy as usize * in_w;
                            let krow = ((oc * in_c + ic) * k_h + ky) * k_w;
                            for kx in 0..k_w {
                                let ix = base_x + kx as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                acc += x[xrow + ix as usize] * kern[krow + kx];
                            }
                        }
                    }
                    out[oc * out_plane + oy * out_w + ox] = acc;
                }
            }
        }
        out
    }

    /// Numerically stable softmax of a slice.
    pub fn softmax_1d(x: &[f64]) -> Vec<f64> {
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Central-finite-difference gradient checking, used by the unit tests and
/// exposed through the CLI so the whole differentiable surface can be
/// re-verified on demand.
pub mod gradcheck {
    use super::{Tape, Tensor, Var};
    use crate::error::Result;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Finite-difference step; large enough to stay above `f64` roundoff,
    /// small enough that the quadratic truncation error is negligible.
    pub const FD_EPS: f64 = 1e-5;

    /// Relative-error threshold for a single gradient coordinate.
    pub const TOLERANCE: f64 = 1e-4;

    /// A graph builder: given a tape and the leaf parameters (already
    /// recorded as differentiable params), returns the scalar loss root.
    pub type BuildFn<'a> = &'a dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

    /// Analytic gradients of `build` with respect to every tensor in
    /// `params`, via one reverse sweep.
    pub fn analytic_grads(build: BuildFn, params: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        tape.backward(loss)?;
        vars.iter().map(|v| Ok(tape.grad(*v)?.to_vec())).collect()
    }

    /// Central-difference gradients of `build`, rebuilding the graph twice
    /// per parameter coordinate.
    pub fn numeric_grads(build: BuildFn, params: &[Tensor], eps: f64) -> Result<Vec<Vec<f64>>> {
        let eval = |ps: &[Tensor]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
            let loss = build(&mut tape, &vars)?;
            tape.value(loss).item()
        };
        let mut grads = Vec::with_capacity(params.len());
        for pi in 0..params.len() {
            let mut g = vec![0.0; params[pi].numel()];
            for ci in 0..params[pi].numel() {
                let mut plus = params.to_vec();
                plus[pi].data_mut()[ci] += eps;
                let mut minus = params.to_vec();
                minus[pi].data_mut()[ci] -= eps;
                g[ci] = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            }
            grads.push(g);
        }
        Ok(grads)
    }

    /// Worst relative error between two gradient sets, with an absolute
    /// floor of 1 in the denominator so tiny gradients compare absolutely.
    #[must_use]
    pub fn max_rel_err(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (ga, gn) in analytic.iter().zip(numeric) {
            for (a, n) in ga.iter().zip(gn) {
                let denom = 1.0_f64.max(a.abs()).max(n.abs());
                worst = worst.max((a - n).abs() / denom);
            }
        }
        worst
    }

    /// Checks one builder with `trials` random parameter draws.
    /// `sample` fills fresh parameter tensors for each trial.
    pub fn check_op(
        build: BuildFn,
        mut sample: impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor>,
        trials: usize,
        seed: u64,
    ) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let params = sample(&mut rng);
            let a = analytic_grads(build, &params)?;
            let n = numeric_grads(build, &params, FD_EPS)?;
            worst = worst.max(max_rel_err(&a, &n));
        }
        Ok(worst)
    }

    /// Outcome of one operation's randomized check.
    #[derive(Debug, Clone)]
    pub struct OpReport {
        pub op: String,
        pub trials: usize,
        pub max_rel_err: f64,
        pub pass: bool,
    }

    /// Runs the randomized finite-difference suite over every
    /// differentiable operation. Inputs are drawn away from the
    /// non-differentiable points of `relu` (kink at 0), `l2_norm` (zero
    /// vector), and `log` (non-positive arguments).
    pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<OpReport>> {
        let mut reports = Vec::new();
        let mut run = |name: &str, build: BuildFn, sample: &mut dyn FnMut(&mut ChaCha8Rng) -> Vec<Tensor>| -> Result<()> {
            let worst = check_op(build, sample, trials, seed ^ name.len() as u64)?;
            reports.push(OpReport {
                op: name.to_string(),
                trials,
                max_rel_err: worst,
                pass: worst < TOLERANCE,
            });
            Ok(())
        };

        // Uniform draw helpers. `away_from_zero` keeps |x| >= 0.05 so relu
        // kinks and log domains stay out of the finite-difference window.
        fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
            Tensor::from_vec(shape, data).expect("static shape")
        }
        fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|_| {
                    let mag = rng.gen_range(0.05..2.0);
                    if rng.gen_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            Tensor::from_vec(shape, data).expect("static shape")
        }

        run(
            "matmul",
            &|t, vs| {
                let c = t.matmul(vs[0], vs[1])?;
                Ok(t.sum(c))
            },
            &mut |rng| vec![uniform(rng, vec![3, 4], -2.0, 2.0), uniform(rng, vec![4, 2], -2.0, 2.0)],
        )?;
        run(
            "conv2d",
            &|t, vs| {
                let c = t.conv2d(vs[0], vs[1], 2, 1)?;
                let r = t.relu(c);
                Ok(t.sum(r))
            },
            &mut |rng| {
                vec![
                    away_from_zero(rng, vec![2, 5, 5]),
                    uniform(rng, vec![3, 2, 3, 3], -1.0, 1.0),
                ]
            },
        )?;
        run(
            "add",
            &|t, vs| {
                let c = t.add(vs[0], vs[1])?;
                let sq = t.mul(c, c)?;
                Ok(t.sum(sq))
            },
            &mut |rng| vec![uniform(rng, vec![6], -2.0, 2.0), uniform(rng, vec![6], -2.0, 2.0)],
        )?;
        run(
            "add_scalar_broadcast",
            &|t, vs| {
                let c = t.add(vs[0], vs[1])?;
                let sq = t.mul(c, c)?;
                Ok(t.sum(sq))
            },
            &mut |rng| vec![uniform(rng, vec![1], -2.0, 2.0), uniform(rng, vec![5], -2.0, 2.0)],
        )?;
        run(
            "sub",
            &|t, vs| {
                let c = t.sub(vs[0], vs[1])?;
                let sq = t.mul(c, c)?;
                Ok(t.sum(sq))
            },
            &mut |rng| vec![uniform(rng, vec![6], -2.0, 2.0), uniform(rng, vec![6], -2.0, 2.0)],
        )?;
        run(
            "mul",
            &|t, vs| {
                let c = t.mul(vs[0], vs[1])?;
                Ok(t.sum(c))
            },
            &mut |rng| vec![uniform(rng, vec![6], -2.0, 2.0), uniform(rng, vec![6], -2.0, 2.0)],
        )?;
        run(
            "mul_scalar_broadcast",
            &|t, vs| {
                let c = t.mul(vs[0], vs[1])?;
                Ok(t.sum(c))
            },
            &mut |rng| vec![uniform(rng, vec![1], -2.0, 2.0), uniform(rng, vec![5], -2.0, 2.0)],
        )?;
        run(
            "div",
            &|t, vs| {
                let c = t.div(vs[0], vs[1])?;
                Ok(t.sum(c))
            },
            &mut |rng| vec![uniform(rng, vec![6], -2.0, 2.0), away_from_zero(rng, vec![6])],
        )?;
        run(
            "div_scalar_broadcast",
            &|t, vs| {
                let c = t.div(vs[0], vs[1])?;
                Ok(t.sum(c))
            },
            &mut |rng| vec![uniform(rng, vec![5], -2.0, 2.0), away_from_zero(rng, vec![1])],
        )?;
        run(
            "relu",
            &|t, vs| {
                let r = t.relu(vs[0]);
                let sq = t.mul(r, r)?;
                Ok(t.sum(sq))
            },
            &mut |rng| vec![away_from_zero(rng, vec![8])],
        )?;
        run(
            "sigmoid",
            &|t, vs| {
                let s = t.sigmoid(vs[0]);
                Ok(t.sum(s))
            },
            &mut |rng| vec![uniform(rng, vec![8], -3.0, 3.0)],
        )?;
        run(
            "exp",
            &|t, vs| {
                let e = t.exp(vs[0]);
                Ok(t.sum(e))
            },
            &mut |rng| vec![uniform(rng, vec![8], -2.0, 2.0)],
        )?;
        run(
            "log",
            &|t, vs| {
                let l = t.log(vs[0])?;
                Ok(t.sum(l))
            },
            &mut |rng| vec![uniform(rng, vec![8], 0.1, 3.0)],
        )?;
        run(
            "sum",
            &|t, vs| {
                let sq = t.mul(vs[0], vs[0])?;
                Ok(t.sum(sq))
            },
            &mut |rng| vec![uniform(rng, vec![7], -2.0, 2.0)],
        )?;
        run(
            "mean",
            &|t, vs| {
                let sq = t.mul(vs[0], vs[0])?;
                Ok(t.mean(sq))
            },
            &mut |rng| vec![uniform(rng, vec![7], -2.0, 2.0)],
        )?;
        run(
            "softmax",
            &|t, vs| {
                let s = t.softmax(vs[0])?;
                let sq = t.mul(s, s)?;
                Ok(t.sum(sq))
            },
            &mut |rng| vec![uniform(rng, vec![5], -3.0, 3.0)],
        )?;
        run(
            "l2_norm",
            &|t, vs| Ok(t.l2_norm(vs[0])),
            &mut |rng| vec![away_from_zero(rng, vec![6])],
        )?;
        run(
            "cross_entropy",
            &|t, vs| {
                let s = t.softmax(vs[0])?;
                t.cross_entropy(s, 1)
            },
            &mut |rng| vec![uniform(rng, vec![4], -3.0, 3.0)],
        )?;
        run(
            "bias_add_chw",
            &|t, vs| {
                let c = t.bias_add_chw(vs[0], vs[1])?;
                let sq = t.mul(c, c)?;
                Ok(t.sum(sq))
            },
            &mut |rng| vec![uniform(rng, vec![2, 3, 3], -2.0, 2.0), uniform(rng, vec![2], -2.0, 2.0)],
        )?;
        run(
            "reshape",
            &|t, vs| {
                let r = t.reshape(vs[0], vec![2, 3])?;
                let sq = t.mul(r, r)?;
                Ok(t.sum(sq))
            },
            &mut |rng| vec![uniform(rng, vec![6], -2.0, 2.0)],
        )?;
        run(
            "concat",
            &|t, vs| {
                let c = t.concat(vs[0], vs[1])?;
                let s = t.softmax(c)?;
                t.cross_entropy(s, 3)
            },
            &mut |rng| vec![uniform(rng, vec![3], -2.0, 2.0), uniform(rng, vec![2], -2.0, 2.0)],
        )?;
        Ok(reports)
    }
}

// ---------------------------------------------------------------------------
