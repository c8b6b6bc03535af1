//! Reverse-mode tape.
//!
//! A [`Graph`] is an append-only list of nodes. Every forward op pushes one
//! node holding its output value and, when any input requires a gradient,
//! enough saved state to run its backward rule. Node ids are assigned in
//! creation order, so the list is already topologically sorted and
//! [`Graph::backward`] is a single reverse sweep.

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Epsilon added to variances in group norm and weight standardization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SpatialMean(Var),
    Reshape(Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    SoftmaxRows(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Tensor, log_probs: Vec<f64> },
    Conv2d { x: Var, w: Var, geom: ConvGeom, cols: Vec<f64> },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    WeightStandardize { w: Var, what: Vec<f64>, inv_std: Vec<f64> },
    GatherCols { x: Var, idx: Vec<usize>, k: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    Concat(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Attributes for the by-name op dispatcher [`Graph::apply`].
#[derive(Debug, Clone, Default)]
pub struct Attrs {
    pub scale: Option<f64>,
    pub stride: Option<usize>,
    pub pad: Option<usize>,
    pub groups: Option<usize>,
    pub shape: Option<Vec<usize>>,
    pub indices: Option<Vec<usize>>,
    pub k: Option<usize>,
    pub targets: Option<Tensor>,
}

/// Names accepted by [`Graph::apply`].
pub const OP_NAMES: &[&str] = &[
    "matmul",
    "transpose",
    "add",
    "mul",
    "scale",
    "add_bias",
    "relu",
    "tanh",
    "exp",
    "log",
    "sum",
    "mean",
    "spatial_mean",
    "reshape",
    "l2_norm",
    "softmax",
    "softmax_cross_entropy",
    "conv2d",
    "group_norm",
    "weight_standardize",
    "gather",
    "select_rows",
    "concat",
];

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NumericOverflow { op })
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Trainable leaf; [`Graph::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, &value)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Saved state is only needed when backward will visit this node.
        let op = if requires_grad { op } else { strip(op) };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected 2-D, got {s:?}")));
        }
        let data = kernels::transpose(self.value(a).data(), s[0], s[1]);
        let value = Tensor::new(vec![s[1], s[0]], data)?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("scale", value, Op::Scale(a, c), &[a])
    }

    /// Adds `b[C]` along axis 1 of `x[N, C, ...]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::shape("add_bias", format!("{sx:?} + {sb:?}")));
        }
        let (n, c) = (sx[0], sx[1]);
        let inner: usize = sx[2..].iter().product();
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * inner;
                for v in &mut data[off..off + inner] {
                    *v += bias[ch];
                }
            }
        }
        let value = Tensor::new(sx.to_vec(), data)?;
        self.push("add_bias", value, Op::AddBias(x, b), &[x, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(name, value, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Global average pool `[N, C, H, W] -> [N, C]`.
    pub fn spatial_mean(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("spatial_mean", format!("expected 4-D, got {s:?}")));
        }
        let hw = s[2] * s[3];
        let data = self
            .value(a)
            .data()
            .chunks(hw)
            .map(|c| c.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(vec![s[0], s[1]], data)?;
        self.push("spatial_mean", value, Op::SpatialMean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// Divides every row of `x[N, D]` by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("l2_norm", format!("expected 2-D, got {s:?}")));
        }
        let t = self.value(x);
        let mut norms = Vec::with_capacity(s[0]);
        let mut data = Vec::with_capacity(t.len());
        for i in 0..s[0] {
            let row = t.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateEmbedding(format!("row {i} has zero norm")));
            }
            norms.push(norm);
            data.extend(row.iter().map(|v| v / norm));
        }
        let value = Tensor::new(s, data)?;
        self.push("l2_norm", value, Op::L2Normalize { x, norms }, &[x])
    }

    /// Softmax along the last axis of a 2-D tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(Error::shape("softmax", format!("expected nonempty 2-D, got {s:?}")));
        }
        let t = self.value(x);
        let mut data = vec![0.0; t.len()];
        for i in 0..s[0] {
            let out = &mut data[i * s[1]..(i + 1) * s[1]];
            kernels::log_softmax_row(t.row(i), out);
            out.iter_mut().for_each(|v| *v = v.exp());
        }
        let value = Tensor::new(s, data)?;
        self.push("softmax", value, Op::SoftmaxRows(x), &[x])
    }

    /// Mean over rows of `-Σ_c t[i,c] · log softmax(logits)[i,c]`.
    ///
    /// `targets` has the logits' shape; hard labels are one-hot rows.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 || targets.shape() != s.as_slice() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {s:?}, targets {:?}", targets.shape()),
            ));
        }
        let t = self.value(logits);
        let mut log_probs = vec![0.0; t.len()];
        for i in 0..s[0] {
            kernels::log_softmax_row(t.row(i), &mut log_probs[i * s[1]..(i + 1) * s[1]]);
        }
        let total: f64 = log_probs.iter().zip(targets.data()).map(|(lp, tv)| -lp * tv).sum();
        let value = Tensor::scalar(total / s[0] as f64);
        self.push(
            "softmax_cross_entropy",
            value,
            Op::SoftmaxCrossEntropy { logits, targets, log_probs },
            &[logits],
        )
    }

    /// Same as [`Graph::softmax_cross_entropy`] with integer class targets.
    pub fn cross_entropy_labels(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || labels.len() != s[0] || labels.iter().any(|&l| l >= s[1]) {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        self.softmax_cross_entropy(logits, one_hot(labels, s[1]))
    }

    /// 2-D convolution, no bias. `x[N,Ci,H,W]`, `w[Co,Ci,kh,kw]`.
    ///
    /// Output side is `floor((in + 2·pad − k)/stride) + 1`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be >= 1"));
        }
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::shape("conv2d", format!("input {sx:?}, weight {sw:?}")));
        }
        let (n, c_in, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (c_out, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded input {sx:?}")));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            h_out: (h + 2 * pad - kh) / stride + 1,
            w_out: (wd + 2 * pad - kw) / stride + 1,
        };
        let (rows, ncol) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; n * rows * ncol];
        let mut out = vec![0.0; n * c_out * ncol];
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        for i in 0..n {
            let col = &mut cols[i * rows * ncol..(i + 1) * rows * ncol];
            kernels::im2col(&xd[i * c_in * h * wd..(i + 1) * c_in * h * wd], &geom, col);
            kernels::gemm_acc(wdat, col, &mut out[i * c_out * ncol..(i + 1) * c_out * ncol], c_out, rows, ncol);
        }
        let value = Tensor::new(vec![n, c_out, geom.h_out, geom.w_out], out)?;
        self.push("conv2d", value, Op::Conv2d { x, w, geom, cols }, &[x, w])
    }

    /// Group normalization over `x[N, C, ...]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || groups == 0 || s[1] % groups != 0 {
            return Err(Error::shape("group_norm", format!("input {s:?} with {groups} groups")));
        }
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "group_norm",
                format!("affine {:?}/{:?} for {c} channels", self.shape(gamma), self.shape(beta)),
            ));
        }
        let inner: usize = s[2..].iter().product();
        let per_group = c / groups * inner;
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = Vec::with_capacity(s[0] * groups);
        let mut out = vec![0.0; xd.len()];
        for (blk, chunk) in xd.chunks(per_group).enumerate() {
            let mean = shifted_mean(chunk);
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per_group as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std.push(is);
            let base = blk * per_group;
            let g = blk % groups;
            for (j, v) in chunk.iter().enumerate() {
                let ch = g * (c / groups) + j / inner;
                let xh = (v - mean) * is;
                xhat[base + j] = xh;
                out[base + j] = gd[ch] * xh + bd[ch];
            }
        }
        let value = Tensor::new(s, out)?;
        self.push(
            "group_norm",
            value,
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std },
            &[x, gamma, beta],
        )
    }

    /// Standardizes each output channel (axis 0) of a weight tensor to zero
    /// mean and unit variance.
    pub fn weight_standardize(&mut self, w: Var) -> Result<Var> {
        let s = self.shape(w).to_vec();
        if s.len() < 2 || s[0] == 0 {
            return Err(Error::shape("weight_standardize", format!("expected >= 2-D, got {s:?}")));
        }
        let fan: usize = s[1..].iter().product();
        let wd = self.value(w).data();
        let mut what = vec![0.0; wd.len()];
        let mut inv_std = Vec::with_capacity(s[0]);
        for (o, chunk) in wd.chunks(fan).enumerate() {
            let mean = shifted_mean(chunk);
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / fan as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in chunk.iter().enumerate() {
                what[o * fan + j] = (v - mean) * is;
            }
        }
        let value = Tensor::new(s, what.clone())?;
        self.push("weight_standardize", value, Op::WeightStandardize { w, what, inv_std }, &[w])
    }

    /// `out[i, j] = x[i, idx[i*k + j]]` for `x[N, M]`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || idx.len() != s[0] * k || idx.iter().any(|&j| j >= s[1]) {
            return Err(Error::shape("gather", format!("input {s:?}, {} indices, k={k}", idx.len())));
        }
        let t = self.value(x);
        let data = idx.iter().enumerate().map(|(p, &j)| t.data()[(p / k.max(1)) * s[1] + j]).collect();
        let value = Tensor::new(vec![s[0], k], data)?;
        self.push("gather", value, Op::GatherCols { x, idx, k }, &[x])
    }

    /// Rows of `x[N, D]` in the given order (repeats allowed).
    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || rows.iter().any(|&r| r >= s[0]) {
            return Err(Error::shape("select_rows", format!("input {s:?}, rows {rows:?}")));
        }
        let t = self.value(x);
        let data = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
        let value = Tensor::new(vec![rows.len(), s[1]], data)?;
        self.push("select_rows", value, Op::SelectRows { x, rows }, &[x])
    }

    /// Concatenation along axis 0.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::shape("concat", format!("{s:?} vs trailing {tail:?}")));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        self.push("concat", value, Op::Concat(parts.to_vec()), parts)
    }

    /// By-name dispatcher over the op set in [`OP_NAMES`].
    pub fn apply(&mut self, name: &str, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} takes {n} inputs, got {}", inputs.len())))
            }
        };
        let need = |v: Option<usize>, what: &str| -> Result<usize> {
            v.ok_or_else(|| Error::invalid(format!("{name} requires attr `{what}`")))
        };
        match name {
            "matmul" => { arity(2)?; self.matmul(inputs[0], inputs[1]) }
            "transpose" => { arity(1)?; self.transpose(inputs[0]) }
            "add" => { arity(2)?; self.add(inputs[0], inputs[1]) }
            "mul" => { arity(2)?; self.mul(inputs[0], inputs[1]) }
            "scale" => {
                arity(1)?;
                let c = attrs.scale.ok_or_else(|| Error::invalid("scale requires attr `scale`"))?;
                self.scale(inputs[0], c)
            }
            "add_bias" => { arity(2)?; self.add_bias(inputs[0], inputs[1]) }
            "relu" => { arity(1)?; self.relu(inputs[0]) }
            "tanh" => { arity(1)?; self.tanh(inputs[0]) }
            "exp" => { arity(1)?; self.exp(inputs[0]) }
            "log" => { arity(1)?; self.log(inputs[0]) }
            "sum" => { arity(1)?; self.sum(inputs[0]) }
            "mean" => { arity(1)?; self.mean(inputs[0]) }
            "spatial_mean" => { arity(1)?; self.spatial_mean(inputs[0]) }
            "reshape" => {
                arity(1)?;
                let shape = attrs.shape.clone().ok_or_else(|| Error::invalid("reshape requires attr `shape`"))?;
                self.reshape(inputs[0], &shape)
            }
            "l2_norm" => { arity(1)?; self.l2_normalize(inputs[0]) }
            "softmax" => { arity(1)?; self.softmax(inputs[0]) }
            "softmax_cross_entropy" => {
                arity(1)?;
                let t = attrs.targets.clone().ok_or_else(|| Error::invalid("softmax_cross_entropy requires attr `targets`"))?;
                self.softmax_cross_entropy(inputs[0], t)
            }
            "conv2d" => {
                arity(2)?;
                self.conv2d(inputs[0], inputs[1], attrs.stride.unwrap_or(1), attrs.pad.unwrap_or(0))
            }
            "group_norm" => {
                arity(3)?;
                let g = need(attrs.groups, "groups")?;
                self.group_norm(inputs[0], inputs[1], inputs[2], g)
            }
            "weight_standardize" => { arity(1)?; self.weight_standardize(inputs[0]) }
            "gather" => {
                arity(1)?;
                let idx = attrs.indices.clone().ok_or_else(|| Error::invalid("gather requires attr `indices`"))?;
                self.gather(inputs[0], idx, need(attrs.k, "k")?)
            }
            "select_rows" => {
                arity(1)?;
                let rows = attrs.indices.clone().ok_or_else(|| Error::invalid("select_rows requires attr `indices`"))?;
                self.select_rows(inputs[0], rows)
            }
            "concat" => self.concat(inputs),
            other => Err(Error::invalid(format!("unknown op `{other}`"))),
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[id].take() else { continue };
            self.backprop_node(node, &gout, &mut grads)?;
            grads[id] = Some(gout);
        }

        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .map(|(i, n)| {
                let g = grads
                    .get(i)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                (Var(i), g)
            })
            .collect();
        Ok(Gradients { leaves })
    }

    fn backprop_node(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let g = gout.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(*a) {
                    let bt = kernels::transpose(self.value(*b).data(), k, n);
                    let mut da = vec![0.0; m * k];
                    kernels::gemm_acc(g, &bt, &mut da, m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let at = kernels::transpose(self.value(*a).data(), m, k);
                    let mut db = vec![0.0; k * n];
                    kernels::gemm_acc(&at, g, &mut db, k, m, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                self.accumulate(grads, *a, kernels::transpose(g, s[1], s[0]));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                self.accumulate(grads, *b, g.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.iter().map(|v| v * c).collect()),
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.to_vec());
                let s = self.shape(*x);
                let (c, inner) = (s[1], s[2..].iter().product::<usize>());
                let mut db = vec![0.0; c];
                for (blk, chunk) in g.chunks(inner).enumerate() {
                    db[blk % c] += chunk.iter().sum::<f64>();
                }
                self.accumulate(grads, *b, db);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, g.iter().zip(x).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect());
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect());
            }
            Op::Exp(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, g.iter().zip(y).map(|(gv, yv)| gv * yv).collect());
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, g.iter().zip(x).map(|(gv, xv)| gv / xv).collect());
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::SpatialMean(a) => {
                let s = self.shape(*a);
                let hw = s[2] * s[3];
                let d = g.iter().flat_map(|gv| std::iter::repeat(gv / hw as f64).take(hw)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::L2Normalize { x, norms } => {
                let y = &node.value;
                let cols = y.shape()[1];
                let mut d = vec![0.0; y.len()];
                for (i, norm) in norms.iter().enumerate() {
                    let yr = y.row(i);
                    let gr = &g[i * cols..(i + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        d[i * cols + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let cols = y.shape()[1];
                let mut d = vec![0.0; y.len()];
                for i in 0..y.shape()[0] {
                    let yr = y.row(i);
                    let gr = &g[i * cols..(i + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        d[i * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::SoftmaxCrossEntropy { logits, targets, log_probs } => {
                let s = self.shape(*logits);
                let (n, c) = (s[0], s[1]);
                let scale = g[0] / n as f64;
                let t = targets.data();
                let mut d = vec![0.0; n * c];
                for i in 0..n {
                    let tr = &t[i * c..(i + 1) * c];
                    let mass: f64 = tr.iter().sum();
                    for j in 0..c {
                        d[i * c + j] = scale * (log_probs[i * c + j].exp() * mass - tr[j]);
                    }
                }
                self.accumulate(grads, *logits, d);
            }
            Op::Conv2d { x, w, geom, cols } => {
                let n = self.shape(*x)[0];
                let c_out = self.shape(*w)[0];
                let (rows, ncol) = (geom.col_rows(), geom.col_cols());
                let wdat = self.value(*w).data();
                if self.requires_grad(*w) {
                    let mut dw = vec![0.0; c_out * rows];
                    for i in 0..n {
                        let col = &cols[i * rows * ncol..(i + 1) * rows * ncol];
                        let colt = kernels::transpose(col, rows, ncol);
                        kernels::gemm_acc(&g[i * c_out * ncol..(i + 1) * c_out * ncol], &colt, &mut dw, c_out, ncol, rows);
                    }
                    self.accumulate(grads, *w, dw);
                }
                if self.requires_grad(*x) {
                    let wt = kernels::transpose(wdat, c_out, rows);
                    let img = geom.c_in * geom.h * geom.w;
                    let mut dx = vec![0.0; n * img];
                    let mut dcol = vec![0.0; rows * ncol];
                    for i in 0..n {
                        dcol.iter_mut().for_each(|v| *v = 0.0);
                        kernels::gemm_acc(&wt, &g[i * c_out * ncol..(i + 1) * c_out * ncol], &mut dcol, rows, c_out, ncol);
                        kernels::col2im(&dcol, geom, &mut dx[i * img..(i + 1) * img]);
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std } => {
                let s = self.shape(*x);
                let c = s[1];
                let inner: usize = s[2..].iter().product();
                let cpg = c / groups;
                let per_group = cpg * inner;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; xhat.len()];
                for (blk, is) in inv_std.iter().enumerate() {
                    let base = blk * per_group;
                    let grp = blk % groups;
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    let mut dxhat = vec![0.0; per_group];
                    for j in 0..per_group {
                        let ch = grp * cpg + j / inner;
                        let gv = g[base + j];
                        dgamma[ch] += gv * xhat[base + j];
                        dbeta[ch] += gv;
                        let dh = gv * gam[ch];
                        dxhat[j] = dh;
                        sum_d += dh;
                        sum_dx += dh * xhat[base + j];
                    }
                    let m = per_group as f64;
                    for j in 0..per_group {
                        dx[base + j] = is / m * (m * dxhat[j] - sum_d - xhat[base + j] * sum_dx);
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::WeightStandardize { w, what, inv_std } => {
                let fan = what.len() / inv_std.len();
                let m = fan as f64;
                let mut dw = vec![0.0; what.len()];
                for (o, is) in inv_std.iter().enumerate() {
                    let r = o * fan..(o + 1) * fan;
                    let gr = &g[r.clone()];
                    let wh = &what[r.clone()];
                    let sum_d: f64 = gr.iter().sum();
                    let sum_dx: f64 = gr.iter().zip(wh).map(|(a, b)| a * b).sum();
                    for j in 0..fan {
                        dw[o * fan + j] = is / m * (m * gr[j] - sum_d - wh[j] * sum_dx);
                    }
                }
                self.accumulate(grads, *w, dw);
            }
            Op::GatherCols { x, idx, k } => {
                let cols = self.shape(*x)[1];
                let mut d = vec![0.0; self.value(*x).len()];
                for (p, &j) in idx.iter().enumerate() {
                    d[(p / k) * cols + j] += g[p];
                }
                self.accumulate(grads, *x, d);
            }
            Op::SelectRows { x, rows } => {
                let cols = self.shape(*x)[1];
                let mut d = vec![0.0; self.value(*x).len()];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..cols {
                        d[r * cols + j] += g[i * cols + j];
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, g[off..off + n].to_vec());
                    off += n;
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, d: Vec<f64>) {
        if !self.requires_grad(v) {
            return;
        }
        let shape = self.shape(v).to_vec();
        match &mut grads[v.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(&d) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(Tensor::new(shape, d).expect("gradient shape")),
        }
    }
}

/// Mean computed about the first element; exact for constant input.
fn shifted_mean(v: &[f64]) -> f64 {
    let origin = v[0];
    origin + v.iter().map(|x| x - origin).sum::<f64>() / v.len() as f64
}

/// Drop backward-only state from ops that will never be differentiated.
fn strip(op: Op) -> Op {
    match op {
        Op::Conv2d { x, w, geom, .. } => Op::Conv2d { x, w, geom, cols: Vec::new() },
        Op::GroupNorm { x, gamma, beta, groups, .. } => {
            Op::GroupNorm { x, gamma, beta, groups, xhat: Vec::new(), inv_std: Vec::new() }
        }
        Op::WeightStandardize { w, .. } => Op::WeightStandardize { w, what: Vec::new(), inv_std: Vec::new() },
        Op::SoftmaxCrossEntropy { logits, targets, .. } => {
            Op::SoftmaxCrossEntropy { logits, targets, log_probs: Vec::new() }
        }
        other => other,
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l] = 1.0;
    }
    t
}

/// Gradients of a scalar with respect to every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<(Var, Tensor)>,
}

impl Gradients {
    /// Gradient for a leaf; `None` if `v` is not a trainable leaf.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves
            .binary_search_by_key(&v, |(id, _)| *id)
            .ok()
            .map(|i| &self.leaves[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.leaves.iter().map(|(v, t)| (*v, t))
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
