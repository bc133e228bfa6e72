//! Dense f64 tensors, plain forward ops, and a record/replay tape for
//! reverse-mode gradients.
//!
//! The tape is a flat arena of nodes. Recording an op stores the operand ids
//! plus whatever context the backward pass needs (pooling argmaxes, batch
//! statistics, constant targets). `backward` walks the arena once in reverse,
//! freeing intermediate gradient buffers as soon as they have been consumed,
//! and returns gradients for every leaf that was created with
//! `requires_grad = true` (exact zeros for leaves the loss never touched).

mod kernels;

pub(crate) use kernels::logsumexp_row;

use std::fmt;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    DataLength { shape: Vec<usize>, expected: usize, got: usize },
    ZeroDim { shape: Vec<usize> },
    Shape { op: &'static str, detail: String },
    NonFinite { op: &'static str },
    NonScalarLoss { shape: Vec<usize> },
    UnknownValue { id: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DataLength { shape, expected, got } => {
                write!(f, "shape {shape:?} needs {expected} values, got {got}")
            }
            TensorError::ZeroDim { shape } => write!(f, "shape {shape:?} has a zero dimension"),
            TensorError::Shape { op, detail } => write!(f, "{op}: {detail}"),
            TensorError::NonFinite { op } => write!(f, "{op}: non-finite input"),
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward needs a scalar loss, got shape {shape:?}")
            }
            TensorError::UnknownValue { id } => write!(f, "value id {id} is not on this tape"),
        }
    }
}

impl std::error::Error for TensorError {}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim { shape });
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength { shape, expected, got: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::Shape { op, detail: format!("expected 4-d input, got {:?}", self.shape) }),
        }
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(TensorError::Shape { op, detail: format!("expected 2-d input, got {:?}", self.shape) }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Blend freshly computed batch statistics into running statistics.
pub fn update_running_stats(running_mean: &mut [f64], running_var: &mut [f64], stats: &BatchStats) {
    for (r, b) in running_mean.iter_mut().zip(&stats.mean) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
    }
    for (r, b) in running_var.iter_mut().zip(&stats.var) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
    }
}

enum Op {
    Leaf,
    Relu { x: ValueId },
    Sigmoid { x: ValueId },
    Tanh { x: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Scale { x: ValueId, factor: f64 },
    Matmul { a: ValueId, b: ValueId },
    Linear { x: ValueId, w: ValueId, b: ValueId },
    Conv2d { x: ValueId, kernel: ValueId, bias: ValueId },
    MaxPool2d { x: ValueId, argmax: Vec<u32> },
    BatchNormTrain { x: ValueId, gamma: ValueId, beta: ValueId, mean: Vec<f64>, var: Vec<f64> },
    BatchNormEval { x: ValueId, gamma: ValueId, beta: ValueId, mean: Vec<f64>, var: Vec<f64> },
    ChannelsToSeq { x: ValueId },
    TimeStep { x: ValueId, t: usize },
    ColSlice { x: ValueId, start: usize },
    RowSlice { x: ValueId, start: usize },
    SoftmaxRows { x: ValueId },
    CrossEntropyRows { logits: ValueId, labels: Vec<usize> },
    SoftCrossEntropyRows { logits: ValueId, targets: Tensor },
    MaeRows { probs: ValueId, targets: Tensor },
    WeightedSum { x: ValueId, weights: Vec<f64> },
    Sum { x: ValueId },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> ValueId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> ValueId {
        self.nodes.push(Node { value, op, needs_grad });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn check(&self, id: ValueId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownValue { id: id.0 })
        }
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x)?;
        let v = self.value(x);
        let out = Tensor::from_raw(v.shape.clone(), v.data.iter().map(|&a| a.max(0.0)).collect());
        Ok(self.push(out, Op::Relu { x }, self.needs(x)))
    }

    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x)?;
        let v = self.value(x);
        let out =
            Tensor::from_raw(v.shape.clone(), v.data.iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect());
        Ok(self.push(out, Op::Sigmoid { x }, self.needs(x)))
    }

    pub fn tanh(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x)?;
        let v = self.value(x);
        let out = Tensor::from_raw(v.shape.clone(), v.data.iter().map(|&a| a.tanh()).collect());
        Ok(self.push(out, Op::Tanh { x }, self.needs(x)))
    }

    fn binary_same_shape(&mut self, op: &'static str, a: ValueId, b: ValueId) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.value(a).shape != self.value(b).shape {
            return Err(TensorError::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.value(a).shape, self.value(b).shape),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape("add", a, b)?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x + y).collect();
        let out = Tensor::from_raw(self.value(a).shape.clone(), data);
        Ok(self.push(out, Op::Add { a, b }, self.needs(a) || self.needs(b)))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape("sub", a, b)?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x - y).collect();
        let out = Tensor::from_raw(self.value(a).shape.clone(), data);
        Ok(self.push(out, Op::Sub { a, b }, self.needs(a) || self.needs(b)))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape("mul", a, b)?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x * y).collect();
        let out = Tensor::from_raw(self.value(a).shape.clone(), data);
        Ok(self.push(out, Op::Mul { a, b }, self.needs(a) || self.needs(b)))
    }

    pub fn scale(&mut self, x: ValueId, factor: f64) -> Result<ValueId> {
        self.check(x)?;
        let v = self.value(x);
        let out = Tensor::from_raw(v.shape.clone(), v.data.iter().map(|&a| a * factor).collect());
        Ok(self.push(out, Op::Scale { x, factor }, self.needs(x)))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check(a)?;
        self.check(b)?;
        let (r, k) = self.value(a).dims2("matmul")?;
        let (k2, c) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::Shape { op: "matmul", detail: format!("inner dims {k} vs {k2}") });
        }
        let data = kernels::matmul(&self.value(a).data, r, k, &self.value(b).data, c);
        let out = Tensor::from_raw(vec![r, c], data);
        Ok(self.push(out, Op::Matmul { a, b }, self.needs(a) || self.needs(b)))
    }

    /// y = x w^T + b for x: n x d, w: m x d, b: m.
    pub fn linear(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let (n, d) = self.value(x).dims2("linear")?;
        let (m, d2) = self.value(w).dims2("linear")?;
        if d != d2 || self.value(b).shape != vec![m] {
            return Err(TensorError::Shape {
                op: "linear",
                detail: format!(
                    "x {:?}, w {:?}, b {:?}",
                    self.value(x).shape,
                    self.value(w).shape,
                    self.value(b).shape
                ),
            });
        }
        let data = kernels::linear_forward(&self.value(x).data, n, d, &self.value(w).data, m, &self.value(b).data);
        let out = Tensor::from_raw(vec![n, m], data);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Linear { x, w, b }, needs))
    }

    /// Same-padding convolution; x: n x c_in x h x w, kernel: c_out x c_in x kh x kw (odd kh, kw).
    pub fn conv2d(&mut self, x: ValueId, kernel: ValueId, bias: ValueId) -> Result<ValueId> {
        self.check(x)?;
        self.check(kernel)?;
        self.check(bias)?;
        let (n, cin, h, w) = self.value(x).dims4("conv2d")?;
        let (cout, kcin, kh, kw) = self.value(kernel).dims4("conv2d")?;
        if kcin != cin {
            return Err(TensorError::Shape {
                op: "conv2d",
                detail: format!("input has {cin} channels, kernel expects {kcin}"),
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::Shape { op: "conv2d", detail: format!("kernel dims must be odd, got {kh}x{kw}") });
        }
        if self.value(bias).shape != vec![cout] {
            return Err(TensorError::Shape {
                op: "conv2d",
                detail: format!("bias shape {:?}, expected [{cout}]", self.value(bias).shape),
            });
        }
        let data = kernels::conv2d_forward(
            &self.value(x).data,
            n,
            cin,
            h,
            w,
            &self.value(kernel).data,
            cout,
            kh,
            kw,
            &self.value(bias).data,
        );
        let out = Tensor::from_raw(vec![n, cout, h, w], data);
        let needs = self.needs(x) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(out, Op::Conv2d { x, kernel, bias }, needs))
    }

    /// Non-overlapping max pooling; trailing rows/cols that do not fill a
    /// window are dropped.
    pub fn maxpool2d(&mut self, x: ValueId, ph: usize, pw: usize) -> Result<ValueId> {
        self.check(x)?;
        let (n, c, h, w) = self.value(x).dims4("maxpool2d")?;
        if ph == 0 || pw == 0 || ph > h || pw > w {
            return Err(TensorError::Shape {
                op: "maxpool2d",
                detail: format!("pool {ph}x{pw} on input {h}x{w}"),
            });
        }
        let (data, argmax) = kernels::maxpool2d_forward(&self.value(x).data, n, c, h, w, ph, pw);
        let out = Tensor::from_raw(vec![n, c, h / ph, w / pw], data);
        Ok(self.push(out, Op::MaxPool2d { x, argmax }, self.needs(x)))
    }

    /// Train-mode batch norm: normalizes with per-channel batch statistics and
    /// returns them so the caller can fold them into running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
    ) -> Result<(ValueId, BatchStats)> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (n, c, h, w) = self.value(x).dims4("batchnorm")?;
        self.check_bn_params(c, gamma, beta)?;
        if n * h * w < 2 {
            return Err(TensorError::Shape {
                op: "batchnorm",
                detail: format!("train mode needs at least 2 values per channel, got {}", n * h * w),
            });
        }
        let (mean, var) = kernels::channel_stats(&self.value(x).data, n, c, h * w);
        let data = kernels::batchnorm_apply(
            &self.value(x).data,
            n,
            c,
            h * w,
            &mean,
            &var,
            &self.value(gamma).data,
            &self.value(beta).data,
            BN_EPS,
        );
        let out = Tensor::from_raw(vec![n, c, h, w], data);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let stats = BatchStats { mean: mean.clone(), var: var.clone() };
        let id = self.push(out, Op::BatchNormTrain { x, gamma, beta, mean, var }, needs);
        Ok((id, stats))
    }

    /// Eval-mode batch norm: normalizes with the supplied running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<ValueId> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (n, c, h, w) = self.value(x).dims4("batchnorm")?;
        self.check_bn_params(c, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::Shape {
                op: "batchnorm",
                detail: format!("running stats have {} / {} entries for {c} channels", running_mean.len(), running_var.len()),
            });
        }
        let data = kernels::batchnorm_apply(
            &self.value(x).data,
            n,
            c,
            h * w,
            running_mean,
            running_var,
            &self.value(gamma).data,
            &self.value(beta).data,
            BN_EPS,
        );
        let out = Tensor::from_raw(vec![n, c, h, w], data);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let op = Op::BatchNormEval {
            x,
            gamma,
            beta,
            mean: running_mean.to_vec(),
            var: running_var.to_vec(),
        };
        Ok(self.push(out, op, needs))
    }

    fn check_bn_params(&self, c: usize, gamma: ValueId, beta: ValueId) -> Result<()> {
        if self.value(gamma).shape != vec![c] || self.value(beta).shape != vec![c] {
            return Err(TensorError::Shape {
                op: "batchnorm",
                detail: format!(
                    "gamma {:?} / beta {:?} for {c} channels",
                    self.value(gamma).shape,
                    self.value(beta).shape
                ),
            });
        }
        Ok(())
    }

    /// Reorder n x c x f x t into a sequence layout n x t x (c*f).
    pub fn channels_to_seq(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x)?;
        let (n, c, f, t) = self.value(x).dims4("channels_to_seq")?;
        let src = &self.value(x).data;
        let mut data = vec![0.0; src.len()];
        for ni in 0..n {
            for ci in 0..c {
                for fi in 0..f {
                    let row = ((ni * c + ci) * f + fi) * t;
                    let feat = ci * f + fi;
                    for ti in 0..t {
                        data[(ni * t + ti) * (c * f) + feat] = src[row + ti];
                    }
                }
            }
        }
        let out = Tensor::from_raw(vec![n, t, c * f], data);
        Ok(self.push(out, Op::ChannelsToSeq { x }, self.needs(x)))
    }

    /// Select time step t from n x T x d, yielding n x d.
    pub fn time_step(&mut self, x: ValueId, t: usize) -> Result<ValueId> {
        self.check(x)?;
        let (n, steps, d) = match self.value(x).shape[..] {
            [n, s, d] => (n, s, d),
            _ => {
                return Err(TensorError::Shape {
                    op: "time_step",
                    detail: format!("expected 3-d input, got {:?}", self.value(x).shape),
                })
            }
        };
        if t >= steps {
            return Err(TensorError::Shape { op: "time_step", detail: format!("step {t} of {steps}") });
        }
        let src = &self.value(x).data;
        let mut data = vec![0.0; n * d];
        for ni in 0..n {
            data[ni * d..(ni + 1) * d].copy_from_slice(&src[(ni * steps + t) * d..(ni * steps + t + 1) * d]);
        }
        let out = Tensor::from_raw(vec![n, d], data);
        Ok(self.push(out, Op::TimeStep { x, t }, self.needs(x)))
    }

    /// Columns [start, start+len) of an n x m matrix.
    pub fn col_slice(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        self.check(x)?;
        let (n, m) = self.value(x).dims2("col_slice")?;
        if len == 0 || start + len > m {
            return Err(TensorError::Shape {
                op: "col_slice",
                detail: format!("cols [{start}, {}) of {m}", start + len),
            });
        }
        let src = &self.value(x).data;
        let mut data = vec![0.0; n * len];
        for ni in 0..n {
            data[ni * len..(ni + 1) * len].copy_from_slice(&src[ni * m + start..ni * m + start + len]);
        }
        let out = Tensor::from_raw(vec![n, len], data);
        Ok(self.push(out, Op::ColSlice { x, start }, self.needs(x)))
    }

    /// Rows [start, start+len) of an n x m matrix.
    pub fn row_slice(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        self.check(x)?;
        let (n, m) = self.value(x).dims2("row_slice")?;
        if len == 0 || start + len > n {
            return Err(TensorError::Shape {
                op: "row_slice",
                detail: format!("rows [{start}, {}) of {n}", start + len),
            });
        }
        let data = self.value(x).data[start * m..(start + len) * m].to_vec();
        let out = Tensor::from_raw(vec![len, m], data);
        Ok(self.push(out, Op::RowSlice { x, start }, self.needs(x)))
    }

    /// Row-wise softmax of an n x k matrix.
    pub fn softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x)?;
        let (n, k) = self.value(x).dims2("softmax")?;
        let src = &self.value(x).data;
        if src.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let mut data = vec![0.0; n * k];
        for ni in 0..n {
            kernels::softmax_row(&src[ni * k..(ni + 1) * k], &mut data[ni * k..(ni + 1) * k]);
        }
        let out = Tensor::from_raw(vec![n, k], data);
        Ok(self.push(out, Op::SoftmaxRows { x }, self.needs(x)))
    }

    /// Per-row cross-entropy of logits against integer labels.
    pub fn cross_entropy_rows(&mut self, logits: ValueId, labels: Vec<usize>) -> Result<ValueId> {
        self.check(logits)?;
        let (n, k) = self.value(logits).dims2("cross_entropy")?;
        if labels.len() != n {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                detail: format!("{} labels for {n} rows", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::Shape { op: "cross_entropy", detail: format!("label {bad} out of range {k}") });
        }
        let src = &self.value(logits).data;
        let mut data = vec![0.0; n];
        for ni in 0..n {
            let row = &src[ni * k..(ni + 1) * k];
            data[ni] = kernels::logsumexp_row(row) - row[labels[ni]];
        }
        let out = Tensor::from_raw(vec![n], data);
        Ok(self.push(out, Op::CrossEntropyRows { logits, labels }, self.needs(logits)))
    }

    /// Per-row cross-entropy of logits against constant soft targets.
    pub fn soft_cross_entropy_rows(&mut self, logits: ValueId, targets: Tensor) -> Result<ValueId> {
        self.check(logits)?;
        let (n, k) = self.value(logits).dims2("soft_cross_entropy")?;
        if targets.shape != vec![n, k] {
            return Err(TensorError::Shape {
                op: "soft_cross_entropy",
                detail: format!("targets {:?} for logits [{n}, {k}]", targets.shape),
            });
        }
        let src = &self.value(logits).data;
        let mut data = vec![0.0; n];
        for ni in 0..n {
            let row = &src[ni * k..(ni + 1) * k];
            let trow = &targets.data[ni * k..(ni + 1) * k];
            let lse = kernels::logsumexp_row(row);
            let tsum: f64 = trow.iter().sum();
            let dot: f64 = row.iter().zip(trow).map(|(z, q)| z * q).sum();
            data[ni] = tsum * lse - dot;
        }
        let out = Tensor::from_raw(vec![n], data);
        Ok(self.push(out, Op::SoftCrossEntropyRows { logits, targets }, self.needs(logits)))
    }

    /// Per-row mean absolute error of probabilities against constant targets.
    pub fn mae_rows(&mut self, probs: ValueId, targets: Tensor) -> Result<ValueId> {
        self.check(probs)?;
        let (n, k) = self.value(probs).dims2("mae")?;
        if targets.shape != vec![n, k] {
            return Err(TensorError::Shape {
                op: "mae",
                detail: format!("targets {:?} for probs [{n}, {k}]", targets.shape),
            });
        }
        let src = &self.value(probs).data;
        let mut data = vec![0.0; n];
        for ni in 0..n {
            let row = &src[ni * k..(ni + 1) * k];
            let trow = &targets.data[ni * k..(ni + 1) * k];
            data[ni] = row.iter().zip(trow).map(|(p, q)| (p - q).abs()).sum::<f64>() / k as f64;
        }
        let out = Tensor::from_raw(vec![n], data);
        Ok(self.push(out, Op::MaeRows { probs, targets }, self.needs(probs)))
    }

    /// Weighted sum of a vector down to a scalar.
    pub fn weighted_sum(&mut self, x: ValueId, weights: Vec<f64>) -> Result<ValueId> {
        self.check(x)?;
        let n = match self.value(x).shape[..] {
            [n] => n,
            _ => {
                return Err(TensorError::Shape {
                    op: "weighted_sum",
                    detail: format!("expected 1-d input, got {:?}", self.value(x).shape),
                })
            }
        };
        if weights.len() != n {
            return Err(TensorError::Shape {
                op: "weighted_sum",
                detail: format!("{} weights for {n} values", weights.len()),
            });
        }
        let total: f64 = self.value(x).data.iter().zip(&weights).map(|(v, w)| v * w).sum();
        let out = Tensor::scalar(total);
        Ok(self.push(out, Op::WeightedSum { x, weights }, self.needs(x)))
    }

    /// Sum of all elements down to a scalar.
    pub fn sum(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x)?;
        let total: f64 = self.value(x).data.iter().sum();
        let out = Tensor::scalar(total);
        Ok(self.push(out, Op::Sum { x }, self.needs(x)))
    }

    /// Reverse pass from a scalar loss. Returns gradients for every leaf
    /// created with `requires_grad = true`; leaves the loss does not reach get
    /// exact zeros.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.value(loss).shape.clone() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        let mut out: Vec<Option<Tensor>> = Vec::new();
        out.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    out[i] = Some(Tensor::from_raw(self.nodes[i].value.shape.clone(), g));
                }
                Op::Relu { x } => {
                    if self.needs(*x) {
                        let xv = &self.value(*x).data;
                        let dx = g.iter().zip(xv).map(|(gv, &a)| if a > 0.0 { *gv } else { 0.0 }).collect();
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Sigmoid { x } => {
                    if self.needs(*x) {
                        let y = &self.nodes[i].value.data;
                        let dx = g.iter().zip(y).map(|(gv, &s)| gv * s * (1.0 - s)).collect();
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Tanh { x } => {
                    if self.needs(*x) {
                        let y = &self.nodes[i].value.data;
                        let dx = g.iter().zip(y).map(|(gv, &s)| gv * (1.0 - s * s)).collect();
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                }
                Op::Sub { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], g.iter().map(|v| -v).collect());
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(*a) {
                        let bv = &self.value(*b).data;
                        accumulate(&mut grads[a.0], g.iter().zip(bv).map(|(gv, x)| gv * x).collect());
                    }
                    if self.needs(*b) {
                        let av = &self.value(*a).data;
                        accumulate(&mut grads[b.0], g.iter().zip(av).map(|(gv, x)| gv * x).collect());
                    }
                }
                Op::Scale { x, factor } => {
                    if self.needs(*x) {
                        accumulate(&mut grads[x.0], g.iter().map(|v| v * factor).collect());
                    }
                }
                Op::Matmul { a, b } => {
                    let (r, k) = (self.value(*a).shape[0], self.value(*a).shape[1]);
                    let c = self.value(*b).shape[1];
                    if self.needs(*a) {
                        // da = g @ b^T
                        let bv = &self.value(*b).data;
                        let mut da = vec![0.0; r * k];
                        for ri in 0..r {
                            for ki in 0..k {
                                let brow = &bv[ki * c..(ki + 1) * c];
                                let grow = &g[ri * c..(ri + 1) * c];
                                da[ri * k + ki] = grow.iter().zip(brow).map(|(gv, bvv)| gv * bvv).sum();
                            }
                        }
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        // db = a^T @ g
                        let av = &self.value(*a).data;
                        let mut db = vec![0.0; k * c];
                        for ri in 0..r {
                            for ki in 0..k {
                                let avv = av[ri * k + ki];
                                let grow = &g[ri * c..(ri + 1) * c];
                                let drow = &mut db[ki * c..(ki + 1) * c];
                                for (d, gv) in drow.iter_mut().zip(grow) {
                                    *d += avv * gv;
                                }
                            }
                        }
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (n, d) = (self.value(*x).shape[0], self.value(*x).shape[1]);
                    let m = self.value(*w).shape[0];
                    if self.needs(*x) {
                        // dx = g @ w
                        let wv = &self.value(*w).data;
                        let mut dx = vec![0.0; n * d];
                        for ni in 0..n {
                            for mi in 0..m {
                                let gv = g[ni * m + mi];
                                let wrow = &wv[mi * d..(mi + 1) * d];
                                let drow = &mut dx[ni * d..(ni + 1) * d];
                                for (dv, wvv) in drow.iter_mut().zip(wrow) {
                                    *dv += gv * wvv;
                                }
                            }
                        }
                        accumulate(&mut grads[x.0], dx);
                    }
                    if self.needs(*w) {
                        // dw = g^T @ x
                        let xv = &self.value(*x).data;
                        let mut dw = vec![0.0; m * d];
                        for ni in 0..n {
                            for mi in 0..m {
                                let gv = g[ni * m + mi];
                                let xrow = &xv[ni * d..(ni + 1) * d];
                                let drow = &mut dw[mi * d..(mi + 1) * d];
                                for (dv, xvv) in drow.iter_mut().zip(xrow) {
                                    *dv += gv * xvv;
                                }
                            }
                        }
                        accumulate(&mut grads[w.0], dw);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0.0; m];
                        for ni in 0..n {
                            for (dv, gv) in db.iter_mut().zip(&g[ni * m..(ni + 1) * m]) {
                                *dv += gv;
                            }
                        }
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Conv2d { x, kernel, bias } => {
                    let (n, cin, h, w) = self.value(*x).dims4("conv2d")?;
                    let (cout, _, kh, kw) = self.value(*kernel).dims4("conv2d")?;
                    let (dx, dk, db) = kernels::conv2d_backward(
                        &self.value(*x).data,
                        n,
                        cin,
                        h,
                        w,
                        &self.value(*kernel).data,
                        cout,
                        kh,
                        kw,
                        &g,
                        self.needs(*x),
                    );
                    if self.needs(*x) {
                        accumulate(&mut grads[x.0], dx);
                    }
                    if self.needs(*kernel) {
                        accumulate(&mut grads[kernel.0], dk);
                    }
                    if self.needs(*bias) {
                        accumulate(&mut grads[bias.0], db);
                    }
                }
                Op::MaxPool2d { x, argmax } => {
                    if self.needs(*x) {
                        let mut dx = vec![0.0; self.value(*x).numel()];
                        for (gv, &idx) in g.iter().zip(argmax) {
                            dx[idx as usize] += gv;
                        }
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::BatchNormTrain { x, gamma, beta, mean, var } => {
                    let (n, c, h, w) = self.value(*x).dims4("batchnorm")?;
                    let (dx, dgamma, dbeta) = batchnorm_train_backward(
                        &self.value(*x).data,
                        n,
                        c,
                        h * w,
                        mean,
                        var,
                        &self.value(*gamma).data,
                        &g,
                        self.needs(*x),
                    );
                    if self.needs(*x) {
                        accumulate(&mut grads[x.0], dx);
                    }
                    if self.needs(*gamma) {
                        accumulate(&mut grads[gamma.0], dgamma);
                    }
                    if self.needs(*beta) {
                        accumulate(&mut grads[beta.0], dbeta);
                    }
                }
                Op::BatchNormEval { x, gamma, beta, mean, var } => {
                    let (n, c, h, w) = self.value(*x).dims4("batchnorm")?;
                    let hw = h * w;
                    let gv = &self.value(*gamma).data;
                    let xv = &self.value(*x).data;
                    if self.needs(*x) {
                        let mut dx = vec![0.0; xv.len()];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * hw;
                                let scale = gv[ci] / (var[ci] + BN_EPS).sqrt();
                                for (d, gg) in dx[base..base + hw].iter_mut().zip(&g[base..base + hw]) {
                                    *d = gg * scale;
                                }
                            }
                        }
                        accumulate(&mut grads[x.0], dx);
                    }
                    if self.needs(*gamma) {
                        let mut dgamma = vec![0.0; c];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * hw;
                                let inv = 1.0 / (var[ci] + BN_EPS).sqrt();
                                dgamma[ci] += g[base..base + hw]
                                    .iter()
                                    .zip(&xv[base..base + hw])
                                    .map(|(gg, xx)| gg * (xx - mean[ci]) * inv)
                                    .sum::<f64>();
                            }
                        }
                        accumulate(&mut grads[gamma.0], dgamma);
                    }
                    if self.needs(*beta) {
                        let mut dbeta = vec![0.0; c];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * hw;
                                dbeta[ci] += g[base..base + hw].iter().sum::<f64>();
                            }
                        }
                        accumulate(&mut grads[beta.0], dbeta);
                    }
                }
                Op::ChannelsToSeq { x } => {
                    if self.needs(*x) {
                        let (n, c, f, t) = self.value(*x).dims4("channels_to_seq")?;
                        let mut dx = vec![0.0; n * c * f * t];
                        for ni in 0..n {
                            for ci in 0..c {
                                for fi in 0..f {
                                    let row = ((ni * c + ci) * f + fi) * t;
                                    let feat = ci * f + fi;
                                    for ti in 0..t {
                                        dx[row + ti] = g[(ni * t + ti) * (c * f) + feat];
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::TimeStep { x, t } => {
                    if self.needs(*x) {
                        let (n, steps, d) = match self.value(*x).shape[..] {
                            [n, s, d] => (n, s, d),
                            _ => unreachable!(),
                        };
                        let mut dx = vec![0.0; n * steps * d];
                        for ni in 0..n {
                            dx[(ni * steps + t) * d..(ni * steps + t + 1) * d]
                                .copy_from_slice(&g[ni * d..(ni + 1) * d]);
                        }
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::ColSlice { x, start } => {
                    if self.needs(*x) {
                        let (n, m) = self.value(*x).dims2("col_slice")?;
                        let len = self.nodes[i].value.shape[1];
                        let mut dx = vec![0.0; n * m];
                        for ni in 0..n {
                            dx[ni * m + start..ni * m + start + len].copy_from_slice(&g[ni * len..(ni + 1) * len]);
                        }
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::RowSlice { x, start } => {
                    if self.needs(*x) {
                        let (n, m) = self.value(*x).dims2("row_slice")?;
                        let len = self.nodes[i].value.shape[0];
                        let mut dx = vec![0.0; n * m];
                        dx[start * m..(start + len) * m].copy_from_slice(&g);
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::SoftmaxRows { x } => {
                    if self.needs(*x) {
                        let (n, k) = self.nodes[i].value.dims2("softmax")?;
                        let s = &self.nodes[i].value.data;
                        let mut dx = vec![0.0; n * k];
                        for ni in 0..n {
                            let srow = &s[ni * k..(ni + 1) * k];
                            let grow = &g[ni * k..(ni + 1) * k];
                            let dot: f64 = srow.iter().zip(grow).map(|(sv, gv)| sv * gv).sum();
                            for ((d, sv), gv) in dx[ni * k..(ni + 1) * k].iter_mut().zip(srow).zip(grow) {
                                *d = sv * (gv - dot);
                            }
                        }
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::CrossEntropyRows { logits, labels } => {
                    if self.needs(*logits) {
                        let (n, k) = self.value(*logits).dims2("cross_entropy")?;
                        let zv = &self.value(*logits).data;
                        let mut dx = vec![0.0; n * k];
                        let mut srow = vec![0.0; k];
                        for ni in 0..n {
                            kernels::softmax_row(&zv[ni * k..(ni + 1) * k], &mut srow);
                            let gn = g[ni];
                            for (d, sv) in dx[ni * k..(ni + 1) * k].iter_mut().zip(&srow) {
                                *d = gn * sv;
                            }
                            dx[ni * k + labels[ni]] -= gn;
                        }
                        accumulate(&mut grads[logits.0], dx);
                    }
                }
                Op::SoftCrossEntropyRows { logits, targets } => {
                    if self.needs(*logits) {
                        let (n, k) = self.value(*logits).dims2("soft_cross_entropy")?;
                        let zv = &self.value(*logits).data;
                        let mut dx = vec![0.0; n * k];
                        let mut srow = vec![0.0; k];
                        for ni in 0..n {
                            kernels::softmax_row(&zv[ni * k..(ni + 1) * k], &mut srow);
                            let trow = &targets.data[ni * k..(ni + 1) * k];
                            let tsum: f64 = trow.iter().sum();
                            let gn = g[ni];
                            for ((d, sv), qv) in dx[ni * k..(ni + 1) * k].iter_mut().zip(&srow).zip(trow) {
                                *d = gn * (sv * tsum - qv);
                            }
                        }
                        accumulate(&mut grads[logits.0], dx);
                    }
                }
                Op::MaeRows { probs, targets } => {
                    if self.needs(*probs) {
                        let (n, k) = self.value(*probs).dims2("mae")?;
                        let pv = &self.value(*probs).data;
                        let mut dx = vec![0.0; n * k];
                        for ni in 0..n {
                            let gn = g[ni] / k as f64;
                            let prow = &pv[ni * k..(ni + 1) * k];
                            let trow = &targets.data[ni * k..(ni + 1) * k];
                            for ((d, p), q) in dx[ni * k..(ni + 1) * k].iter_mut().zip(prow).zip(trow) {
                                *d = gn * (p - q).signum_or_zero();
                            }
                        }
                        accumulate(&mut grads[probs.0], dx);
                    }
                }
                Op::WeightedSum { x, weights } => {
                    if self.needs(*x) {
                        let g0 = g[0];
                        accumulate(&mut grads[x.0], weights.iter().map(|w| w * g0).collect());
                    }
                }
                Op::Sum { x } => {
                    if self.needs(*x) {
                        let g0 = g[0];
                        accumulate(&mut grads[x.0], vec![g0; self.value(*x).numel()]);
                    }
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad && out[i].is_none() {
                out[i] = Some(Tensor::zeros(node.value.shape.clone()));
            }
        }
        Ok(Gradients { slots: out })
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(&contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

fn batchnorm_train_backward(
    x: &[f64],
    n: usize,
    c: usize,
    hw: usize,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    g: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut gsum = vec![0.0; c];
    let mut gxsum = vec![0.0; c];
    for ci in 0..c {
        let inv = 1.0 / (var[ci] + BN_EPS).sqrt();
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for (gg, xx) in g[base..base + hw].iter().zip(&x[base..base + hw]) {
                let xhat = (xx - mean[ci]) * inv;
                gsum[ci] += gg;
                gxsum[ci] += gg * xhat;
            }
        }
        dgamma[ci] = gxsum[ci];
        dbeta[ci] = gsum[ci];
    }
    let mut dx = Vec::new();
    if need_dx {
        dx = vec![0.0; x.len()];
        for ci in 0..c {
            let inv = 1.0 / (var[ci] + BN_EPS).sqrt();
            let scale = gamma[ci] * inv;
            let gmean = gsum[ci] / m;
            let gxmean = gxsum[ci] / m;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for (d, (gg, xx)) in dx[base..base + hw]
                    .iter_mut()
                    .zip(g[base..base + hw].iter().zip(&x[base..base + hw]))
                {
                    let xhat = (xx - mean[ci]) * inv;
                    *d = scale * (gg - gmean - xhat * gxmean);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor> {
        self.slots.get_mut(id.0).and_then(|s| s.take())
    }
}

/// Numerically stable softmax of a probability-logit vector.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(TensorError::Shape { op: "softmax", detail: "empty input".into() });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let mut out = vec![0.0; z.len()];
    kernels::softmax_row(z, &mut out);
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_raw(x.shape.clone(), x.data.iter().map(|&a| a.max(0.0)).collect())
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    Tensor::from_raw(x.shape.clone(), x.data.iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect())
}

pub fn tanh(x: &Tensor) -> Tensor {
    Tensor::from_raw(x.shape.clone(), x.data.iter().map(|&a| a.tanh()).collect())
}

/// Same-padding convolution on a single c_in x h x w input.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (cin, h, w) = match x.shape[..] {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(TensorError::Shape { op: "conv2d", detail: format!("expected 3-d input, got {:?}", x.shape) })
        }
    };
    let xid = tape.leaf(Tensor::from_raw(vec![1, cin, h, w], x.data.clone()), false);
    let kid = tape.leaf(kernel.clone(), false);
    let bid = tape.leaf(bias.clone(), false);
    let out = tape.conv2d(xid, kid, bid)?;
    let v = tape.value(out);
    Ok(Tensor::from_raw(v.shape[1..].to_vec(), v.data.clone()))
}

/// Non-overlapping max pooling on a single c x h x w input.
pub fn maxpool2d(x: &Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (c, h, w) = match x.shape[..] {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(TensorError::Shape {
                op: "maxpool2d",
                detail: format!("expected 3-d input, got {:?}", x.shape),
            })
        }
    };
    let xid = tape.leaf(Tensor::from_raw(vec![1, c, h, w], x.data.clone()), false);
    let out = tape.maxpool2d(xid, ph, pw)?;
    let v = tape.value(out);
    Ok(Tensor::from_raw(v.shape[1..].to_vec(), v.data.clone()))
}

pub enum BnMode {
    Train,
    Eval,
}

/// Batch norm on a single-item batch view n x c x h x w. In train mode the
/// returned statistics are the running statistics after a momentum update.
pub fn batchnorm2d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
    mode: BnMode,
) -> Result<(Tensor, Option<(Vec<f64>, Vec<f64>)>)> {
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone(), false);
    let gid = tape.leaf(gamma.clone(), false);
    let bid = tape.leaf(beta.clone(), false);
    match mode {
        BnMode::Train => {
            let (out, stats) = tape.batchnorm_train(xid, gid, bid)?;
            let mut rm = running_mean.to_vec();
            let mut rv = running_var.to_vec();
            update_running_stats(&mut rm, &mut rv, &stats);
            Ok((tape.value(out).clone(), Some((rm, rv))))
        }
        BnMode::Eval => {
            let out = tape.batchnorm_eval(xid, gid, bid, running_mean, running_var)?;
            Ok((tape.value(out).clone(), None))
        }
    }
}

/// y = x w^T + b for x: n x d.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone(), false);
    let wid = tape.leaf(w.clone(), false);
    let bid = tape.leaf(b.clone(), false);
    let out = tape.linear(xid, wid, bid)?;
    Ok(tape.value(out).clone())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let aid = tape.leaf(a.clone(), false);
    let bid = tape.leaf(b.clone(), false);
    let out = tape.matmul(aid, bid)?;
    Ok(tape.value(out).clone())
}

/// Single-layer LSTM over one sequence, returning the final hidden state.
///
/// x: t x d, w_ih: 4h x d, w_hh: 4h x h, biases: 4h. Gate order in the packed
/// weight rows is input, forget, cell, output. Initial hidden and cell states
/// are zero. This is a direct scalar-loop implementation; the trainable path
/// composes the same recurrence out of tape ops and is checked against this
/// one.
pub fn lstm_forward(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, b_ih: &Tensor, b_hh: &Tensor) -> Result<Tensor> {
    let (t, d) = x.dims2("lstm")?;
    let (four_h, d2) = w_ih.dims2("lstm")?;
    if four_h % 4 != 0 {
        return Err(TensorError::Shape { op: "lstm", detail: format!("w_ih rows {four_h} not divisible by 4") });
    }
    let h = four_h / 4;
    if d2 != d || w_hh.shape != vec![4 * h, h] || b_ih.shape != vec![4 * h] || b_hh.shape != vec![4 * h] {
        return Err(TensorError::Shape {
            op: "lstm",
            detail: format!(
                "x {:?}, w_ih {:?}, w_hh {:?}, b_ih {:?}, b_hh {:?}",
                x.shape, w_ih.shape, w_hh.shape, b_ih.shape, b_hh.shape
            ),
        });
    }
    let mut hid = vec![0.0; h];
    let mut cell = vec![0.0; h];
    for ti in 0..t {
        let xt = &x.data[ti * d..(ti + 1) * d];
        let mut z = vec![0.0; 4 * h];
        for (zi, zv) in z.iter_mut().enumerate() {
            let wrow = &w_ih.data[zi * d..(zi + 1) * d];
            let urow = &w_hh.data[zi * h..(zi + 1) * h];
            let mut acc = b_ih.data[zi] + b_hh.data[zi];
            for (xv, wv) in xt.iter().zip(wrow) {
                acc += xv * wv;
            }
            for (hv, uv) in hid.iter().zip(urow) {
                acc += hv * uv;
            }
            *zv = acc;
        }
        for hi in 0..h {
            let ig = 1.0 / (1.0 + (-z[hi]).exp());
            let fg = 1.0 / (1.0 + (-z[h + hi]).exp());
            let gg = z[2 * h + hi].tanh();
            let og = 1.0 / (1.0 + (-z[3 * h + hi]).exp());
            cell[hi] = fg * cell[hi] + ig * gg;
            hid[hi] = og * cell[hi].tanh();
        }
    }
    Ok(Tensor::from_raw(vec![h], hid))
}
