use super::kernels::{max_pool2, ConvGeom};
use super::{gemm, split_axis, Real, Tensor, Transpose, BN_EPS, BN_MOMENTUM, LOG_EPS};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm normalization source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and produce updated running stats.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

/// Per-channel running mean and variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T: Real> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> BnStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

/// A recorded primitive. Saved forward state lives alongside the inputs.
#[derive(Debug)]
pub(crate) enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `b`'s shape is a suffix of `a`'s; `b` repeats over the leading axes.
    AddBroadcast(Var, Var),
    /// `b`'s shape is a prefix of `a`'s; `b` repeats over the trailing axes.
    MulBroadcast(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    SumAxis { x: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, shared_rhs: bool },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Softmax { x: Var, axis: usize, tau: T },
    SqDist { q: Var, p: Var },
    Concat { xs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Pick { x: Var, labels: Vec<usize> },
}

#[derive(Debug)]
pub(crate) struct Node<T: Real> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Tape of executed primitives. Nodes are appended in execution order, so
/// the tape is already topologically sorted.
#[derive(Debug)]
pub struct Graph<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) grads: Vec<Option<Vec<T>>>,
    pub(crate) consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Real>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into `v` by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let data = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v), data.clone()).expect("gradient shape"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `a + b` with `b` repeated over `a`'s leading axes (bias add).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim(format!(
                "add_broadcast: {sb:?} is not a suffix of {sa:?}"
            )));
        }
        let bd = self.value(b).data();
        let inner = bd.len();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(inner) {
            for (o, &v) in chunk.iter_mut().zip(bd) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddBroadcast(a, b), &[a, b]))
    }

    /// `a * b` with `b` repeated over `a`'s trailing axes (per-channel gate).
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[..sb.len()] != *sb {
            return Err(Error::dim(format!(
                "mul_broadcast: {sb:?} is not a prefix of {sa:?}"
            )));
        }
        let inner: usize = sa[sb.len()..].iter().product();
        let bd = self.value(b).data();
        let mut out = self.value(a).clone();
        for (chunk, &s) in out.data_mut().chunks_mut(inner).zip(bd) {
            for o in chunk {
                *o *= s;
            }
        }
        Ok(self.push(out, Op::MulBroadcast(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        self.push(out, Op::Exp(x), &[x])
    }

    /// `ln(x + ε)` with ε = [`LOG_EPS`].
    pub fn log(&mut self, x: Var) -> Var {
        let eps = T::of(LOG_EPS);
        let out = self.value(x).map(|v| (v + eps).ln());
        self.push(out, Op::Log(x), &[x])
    }

    /// Sum over one axis, removing it. A rank-1 input reduces to shape `[1]`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("sum_axis: axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let row = &src[(o * n + i) * inner..(o * n + i + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::SumAxis { x, axis }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::of(v.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Collapse everything to one axis.
    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.reshape(x, &[n]).expect("size-preserving")
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(Error::dim(format!("transpose needs rank >= 2, got {shape:?}")));
        }
        let (rows, cols) = (shape[r - 2], shape[r - 1]);
        let out = transpose_data(self.value(x).data(), rows, cols);
        let mut out_shape = shape;
        out_shape.swap(r - 2, r - 1);
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    /// Matrix product. Accepts `m×k · k×n`, batched `B×m×k · B×k×n`, or a
    /// batched lhs against a shared `k×n` rhs.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || {
            Error::dim(format!("matmul: cannot multiply {sa:?} by {sb:?}"))
        };
        let (batch, m, k, n, shared_rhs) = match (sa.len(), sb.len()) {
            (2, 2) => (1, sa[0], sa[1], sb[1], false),
            (3, 3) if sa[0] == sb[0] => (sa[0], sa[1], sa[2], sb[2], false),
            (3, 2) => (1, sa[0] * sa[1], sa[2], sb[1], true),
            _ => return Err(mismatch()),
        };
        let kb = if sb.len() == 3 { sb[1] } else { sb[0] };
        if k != kb {
            return Err(mismatch());
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                Transpose::No,
                Transpose::No,
                m,
                n,
                k,
                T::one(),
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                T::zero(),
                &mut data[i * m * n..(i + 1) * m * n],
            );
        }
        let out_shape = match (sa.len(), sb.len()) {
            (2, 2) => vec![m, n],
            (3, 3) => vec![batch, m, n],
            _ => vec![sa[0], sa[1], n],
        };
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::MatMul { a, b, batch, m, k, n, shared_rhs }, &[a, b]))
    }

    /// `x · wᵀ + b` over the last axis of `x`, with `w` stored `out×in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let wt = self.transpose(w)?;
        let y = self.matmul(x, wt)?;
        self.add_broadcast(y, b)
    }

    /// 3×3 cross-correlation, stride 1, zero padding 1.
    ///
    /// `x` is `C_in×H×W` or `B×C_in×H×W`; `w` is `C_out×C_in×3×3`; `b` is `C_out`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        let (batch, c_in, height, width) = match sx.len() {
            3 => (1, sx[0], sx[1], sx[2]),
            4 => (sx[0], sx[1], sx[2], sx[3]),
            _ => return Err(Error::dim(format!("conv2d: input must be rank 3 or 4, got {sx:?}"))),
        };
        if sw.len() != 4 || sw[2] != 3 || sw[3] != 3 {
            return Err(Error::dim(format!("conv2d: kernels must be C_out×C_in×3×3, got {sw:?}")));
        }
        if sw[1] != c_in {
            return Err(Error::dim(format!(
                "conv2d: input {sx:?} has {c_in} channels but kernels {sw:?} expect {}",
                sw[1]
            )));
        }
        if sb != [sw[0]] {
            return Err(Error::dim(format!("conv2d: bias {sb:?} does not match kernels {sw:?}")));
        }
        let geom = ConvGeom {
            batch,
            c_in,
            c_out: sw[0],
            height,
            width,
        };
        let data = geom.forward(self.value(x).data(), self.value(w).data(), self.value(b).data());
        let out_shape = if sx.len() == 3 {
            vec![sw[0], height, width]
        } else {
            vec![batch, sw[0], height, width]
        };
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
    }

    /// 2×2 window, stride 2, no padding; a trailing odd row/column is dropped.
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let r = sx.len();
        if r < 2 || sx[r - 2] < 2 || sx[r - 1] < 2 {
            return Err(Error::dim(format!("max_pool2d: spatial dims of {sx:?} must be >= 2")));
        }
        let (h, w) = (sx[r - 2], sx[r - 1]);
        let planes: usize = sx[..r - 2].iter().product();
        let (data, argmax) = max_pool2(self.value(x).data(), planes, h, w);
        let mut out_shape = sx;
        out_shape[r - 2] = h / 2;
        out_shape[r - 1] = w / 2;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Per-channel batch normalization of a `B×C×H×W` input.
    ///
    /// In [`BnMode::Train`] the batch statistics normalize the input and the
    /// returned stats are the momentum-updated running estimates (unbiased
    /// variance). In [`BnMode::Eval`] `running` normalizes and `None` is returned.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &BnStats<T>,
        mode: BnMode,
    ) -> Result<(Var, Option<BnStats<T>>)> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(Error::dim(format!("batch_norm2d: input must be B×C×H×W, got {sx:?}")));
        }
        let (batch, channels, hw) = (sx[0], sx[1], sx[2] * sx[3]);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [channels] {
                return Err(Error::dim(format!(
                    "batch_norm2d: {name} {:?} does not match {channels} channels",
                    self.shape(v)
                )));
            }
        }
        if running.mean.shape() != [channels] || running.var.shape() != [channels] {
            return Err(Error::dim("batch_norm2d: running stats do not match channels"));
        }
        let eps = T::of(BN_EPS);
        let count = batch * hw;
        let xd = self.value(x).data();
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                for c in 0..channels {
                    let mut s = T::zero();
                    for b in 0..batch {
                        let base = (b * channels + c) * hw;
                        s += xd[base..base + hw].iter().copied().sum::<T>();
                    }
                    let mu = s / T::of(count as f64);
                    let mut sq = T::zero();
                    for b in 0..batch {
                        let base = (b * channels + c) * hw;
                        for &v in &xd[base..base + hw] {
                            sq += (v - mu) * (v - mu);
                        }
                    }
                    mean[c] = mu;
                    var[c] = sq / T::of(count as f64);
                }
                (mean, var)
            }
            BnMode::Eval => (running.mean.data().to_vec(), running.var.data().to_vec()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * hw;
                for i in base..base + hw {
                    let h = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let updated = (mode == BnMode::Train).then(|| {
            let m = T::of(BN_MOMENTUM);
            let keep = T::one() - m;
            let unbias = if count > 1 {
                T::of(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            let mut new = running.clone();
            for c in 0..channels {
                new.mean.data_mut()[c] = keep * running.mean.data()[c] + m * mean[c];
                new.var.data_mut()[c] = keep * running.var.data()[c] + m * var[c] * unbias;
            }
            new
        });
        let out = Tensor::new(&sx, out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train: mode == BnMode::Train,
        };
        Ok((self.push(out, op, &[x, gamma, beta]), updated))
    }

    /// Temperature softmax along `axis`: `exp(x/τ − max x/τ) / Σ exp(·)`.
    pub fn softmax(&mut self, x: Var, axis: usize, tau: f64) -> Result<Var> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Parameter(format!("softmax temperature must be > 0, got {tau}")));
        }
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax: axis {axis} out of range for {shape:?}")));
        }
        let tau = T::of(tau);
        let mut out = self.value(x).clone();
        softmax_in_place(out.data_mut(), &shape, axis, tau);
        Ok(self.push(out, Op::Softmax { x, axis, tau }, &[x]))
    }

    /// Squared Euclidean distances between rows: `q` is `M×D`, `p` is `K×D`, result `M×K`.
    pub fn sq_dist(&mut self, q: Var, p: Var) -> Result<Var> {
        let (sq, sp) = (self.shape(q).to_vec(), self.shape(p).to_vec());
        if sq.len() != 2 || sp.len() != 2 || sq[1] != sp[1] {
            return Err(Error::dim(format!("sq_dist: query {sq:?} and prototypes {sp:?} disagree")));
        }
        let (m, k, d) = (sq[0], sp[0], sq[1]);
        let (qd, pd) = (self.value(q).data(), self.value(p).data());
        let mut data = vec![T::zero(); m * k];
        for i in 0..m {
            for j in 0..k {
                let mut s = T::zero();
                for (a, b) in qd[i * d..(i + 1) * d].iter().zip(&pd[j * d..(j + 1) * d]) {
                    let diff = *a - *b;
                    s += diff * diff;
                }
                data[i * k + j] = s;
            }
        }
        let out = Tensor::new(&[m, k], data)?;
        Ok(self.push(out, Op::SqDist { q, p }, &[q, p]))
    }

    /// Join along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::dim("concat of zero inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim(format!("concat: axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat: {s:?} incompatible with {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    /// Sub-range `[start, start + len)` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(format!(
                "narrow: [{start}, {}) out of range on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Row-wise selection `out[i] = x[i, labels[i]]` from an `M×K` input.
    pub fn pick(&mut self, x: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::dim(format!(
                "pick: {} labels for input {shape:?}",
                labels.len()
            )));
        }
        let k = shape[1];
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Contract(format!("label {bad} out of range for {k} classes")));
        }
        let src = self.value(x).data();
        let data = labels.iter().enumerate().map(|(i, &l)| src[i * k + l]).collect();
        let out = Tensor::new(&[labels.len()], data)?;
        Ok(self.push(out, Op::Pick { x, labels: labels.to_vec() }, &[x]))
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// Transpose the trailing `rows×cols` matrices of a row-major buffer.
pub(crate) fn transpose_data<T: Real>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    let mat = rows * cols;
    for (s, d) in src.chunks(mat).zip(out.chunks_mut(mat)) {
        for r in 0..rows {
            for c in 0..cols {
                d[c * rows + r] = s[r * cols + c];
            }
        }
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(data: &mut [T], shape: &[usize], axis: usize, tau: T) {
    let (outer, n, inner) = split_axis(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..n {
                max = max.max(data[idx(j)]);
            }
            let mut total = T::zero();
            for j in 0..n {
                let e = ((data[idx(j)] - max) / tau).exp();
                data[idx(j)] = e;
                total += e;
            }
            for j in 0..n {
                data[idx(j)] /= total;
            }
        }
    }
}
