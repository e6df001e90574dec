use std::sync::Arc;

use super::ops::{self, ConvGeom, RelScoreGrads, RelScoreLayout};
use super::{shape_err, DropoutKey, Real, Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Sigmoid(Var),
    Dropout(Var, Vec<F>),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Conv2d {
        x: Var,
        k: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPoolFreq {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Permute {
        x: Var,
        map: Vec<usize>,
    },
    Reshape(Var),
    MeanRows(Var),
    Sum(Var),
    RelScores {
        q: Var,
        k: Var,
        p: Var,
        u: Var,
        v: Var,
        layout: Box<RelScoreLayout>,
    },
    BceLogits {
        x: Var,
        target: Vec<F>,
        weight: Option<Vec<F>>,
    },
}

struct Node<F> {
    value: Arc<Tensor<F>>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Records operations in execution order so gradients can be swept in reverse.
pub struct Tape<F: Real = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(
        &mut self,
        value: Tensor<F>,
        op: Op<F>,
        op_name: &'static str,
        parents: &[Var],
    ) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let needs_grad = parents.iter().any(|&p| self.needs(p));
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A trainable leaf; gradients are accumulated for it.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, false)
    }

    /// A constant leaf sharing storage with the caller.
    pub fn constant_shared(&mut self, t: Arc<Tensor<F>>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, mut t: Tensor<F>, needs_grad: bool) -> Var {
        t.grad = None;
        self.nodes.push(Node {
            value: Arc::new(t),
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(shape_err(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.mat_dims(a, "matmul")?;
        let (k2, n) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![F::zero(); m * n];
        ops::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        self.push(t, Op::MatMul(a, b), "matmul", &[a, b])
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| *x + *y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Add(a, b), "add", &[a, b])
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, n) = self.mat_dims(a, "add_row")?;
        if self.value(b).len() != n {
            return Err(shape_err(
                "add_row",
                format!("row of {n} vs bias {:?}", self.shape(b)),
            ));
        }
        let bias = self.data(b);
        let mut data = self.data(a).to_vec();
        for i in 0..m {
            for (o, bv) in data[i * n..(i + 1) * n].iter_mut().zip(bias) {
                *o = *o + *bv;
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        self.push(t, Op::AddRow(a, b), "add_row", &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| *x * *y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Mul(a, b), "mul", &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: F) -> Result<Var, TensorError> {
        let data = self.data(a).iter().map(|x| *x * s).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Scale(a, s), "scale", &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let data = self
            .data(a)
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Relu(a), "relu", &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let data = self.data(a).iter().map(|&x| ops::sigmoid(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Sigmoid(a), "sigmoid", &[a])
    }

    /// Inverted dropout. Returns `a` unchanged when `train` is false or `rate == 0`.
    pub fn dropout(
        &mut self,
        a: Var,
        rate: f64,
        key: DropoutKey,
        train: bool,
    ) -> Result<Var, TensorError> {
        if !train || rate <= 0.0 {
            return Ok(a);
        }
        if rate >= 1.0 {
            return Err(TensorError::Contract(format!(
                "dropout rate {rate} must be < 1"
            )));
        }
        let keep = F::lit(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.value(a).len())
            .map(|i| {
                if key.uniform(i as u64) < rate {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = self
            .data(a)
            .iter()
            .zip(&mask)
            .map(|(x, m)| *x * *m)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Dropout(a, mask), "dropout", &[a])
    }

    /// Row-wise softmax, stabilized by subtracting each row's max.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.mat_dims(a, "softmax_rows")?;
        let x = self.data(a);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let o = &mut out[i * n..(i + 1) * n];
            let mut s = F::zero();
            for (oj, &xj) in o.iter_mut().zip(row) {
                *oj = (xj - mx).exp();
                s = s + *oj;
            }
            for oj in o.iter_mut() {
                *oj = *oj / s;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push(t, Op::SoftmaxRows(a), "softmax_rows", &[a])
    }

    /// Per-row normalization to zero mean / unit variance (ε = 1e-5), then affine.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (m, d) = self.mat_dims(x, "layernorm")?;
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(shape_err(
                "layernorm",
                format!("width {d} vs affine params"),
            ));
        }
        let eps = F::lit(1e-5);
        let dn = F::lit(d as f64);
        let xs = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let mut xhat = vec![F::zero(); m * d];
        let mut rstd = vec![F::zero(); m];
        let mut out = vec![F::zero(); m * d];
        for i in 0..m {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<F>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
            let r = F::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(vec![m, d], out)?;
        self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            "layernorm",
            &[x, gain, bias],
        )
    }

    /// 2D convolution over `[C_in, T, F]` with kernels `[C_out, C_in, kt, kf]`.
    /// Time is padded on the left only (causal); frequency is zero-padded
    /// symmetrically so both output lengths equal the input lengths.
    pub fn conv2d(&mut self, x: Var, k: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let [c_in, t, f] = *self.shape(x) else {
            return Err(shape_err(
                "conv2d",
                format!("input {:?} is not [C,T,F]", self.shape(x)),
            ));
        };
        let [c_out, c_in2, kt, kf] = *self.shape(k) else {
            return Err(shape_err(
                "conv2d",
                format!("kernel {:?} is not 4D", self.shape(k)),
            ));
        };
        if c_in != c_in2 {
            return Err(shape_err(
                "conv2d",
                format!("input channels {c_in} vs kernel {c_in2}"),
            ));
        }
        if kt % 2 == 0 || kf % 2 == 0 {
            return Err(shape_err(
                "conv2d",
                format!("kernel dims must be odd, got {kt}x{kf}"),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).len() != c_out {
                return Err(shape_err("conv2d", "bias length != output channels"));
            }
        }
        let geom = ConvGeom {
            c_in,
            c_out,
            t,
            f,
            kt,
            kf,
        };
        let out = ops::conv2d_forward(self.data(x), self.data(k), bias.map(|b| self.data(b)), geom);
        let value = Tensor::new(vec![c_out, t, f], out)?;
        let mut parents = vec![x, k];
        parents.extend(bias);
        self.push(value, Op::Conv2d { x, k, bias, geom }, "conv2d", &parents)
    }

    /// Max over non-overlapping windows of width `p` along the last axis of `[C, T, F]`.
    pub fn maxpool_freq(&mut self, x: Var, p: usize) -> Result<Var, TensorError> {
        let [c, t, f] = *self.shape(x) else {
            return Err(shape_err("maxpool_freq", "input is not [C,T,F]"));
        };
        if p == 0 || f % p != 0 {
            return Err(shape_err(
                "maxpool_freq",
                format!("{f} bins not divisible by {p}"),
            ));
        }
        let fo = f / p;
        let xs = self.data(x);
        let mut out = Vec::with_capacity(c * t * fo);
        let mut argmax = Vec::with_capacity(c * t * fo);
        for base in (0..c * t).map(|r| r * f) {
            for w in 0..fo {
                let start = base + w * p;
                let mut best = start;
                for i in start + 1..start + p {
                    if xs[i] > xs[best] {
                        best = i;
                    }
                }
                out.push(xs[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(vec![c, t, fo], out)?;
        self.push(value, Op::MaxPoolFreq { x, argmax }, "maxpool_freq", &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != base[i])
            {
                return Err(shape_err(
                    "concat",
                    format!("{base:?} vs {s:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.data(p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            "concat",
            parts,
        )
    }

    /// Selects `range` along `axis`.
    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        range: std::ops::Range<usize>,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || range.start >= range.end || range.end > shape[axis] {
            return Err(shape_err(
                "slice",
                format!("{range:?} on axis {axis} of {shape:?}"),
            ));
        }
        if range.start == 0 && range.end == shape[axis] {
            return Ok(x);
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data(x);
        let len = range.end - range.start;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * shape[axis] + range.start) * inner;
            out.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        self.push(
            value,
            Op::Slice {
                x,
                axis,
                start: range.start,
            },
            "slice",
            &[x],
        )
    }

    pub fn slice_rows(
        &mut self,
        x: Var,
        range: std::ops::Range<usize>,
    ) -> Result<Var, TensorError> {
        self.slice(x, 0, range)
    }

    pub fn slice_cols(
        &mut self,
        x: Var,
        range: std::ops::Range<usize>,
    ) -> Result<Var, TensorError> {
        self.slice(x, 1, range)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(shape_err(
                "permute",
                format!("{axes:?} is not a permutation of {shape:?}"),
            ));
        }
        let map = ops::permute_index(&shape, axes);
        let src = self.data(x);
        let out = map.iter().map(|&i| src[i]).collect();
        let new_shape = axes.iter().map(|&a| shape[a]).collect();
        let value = Tensor::new(new_shape, out)?;
        self.push(value, Op::Permute { x, map }, "permute", &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        self.mat_dims(x, "transpose")?;
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = Tensor::new(shape.to_vec(), self.data(x).to_vec())
            .map_err(|_| shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x))))?;
        self.push(value, Op::Reshape(x), "reshape", &[x])
    }

    /// Column means of an `[m, n]` matrix, as a `[1, n]` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (m, n) = self.mat_dims(x, "mean_rows")?;
        let xs = self.data(x);
        let mut out = vec![F::zero(); n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&xs[i * n..(i + 1) * n]) {
                *o = *o + *v;
            }
        }
        let mf = F::lit(m as f64);
        for o in &mut out {
            *o = *o / mf;
        }
        let value = Tensor::new(vec![1, n], out)?;
        self.push(value, Op::MeanRows(x), "mean_rows", &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum", &[x])
    }

    /// Relative-position attention scores for one head; see [`ops::rel_scores_forward`].
    pub fn rel_scores(
        &mut self,
        q: Var,
        k: Var,
        p: Var,
        u: Var,
        v: Var,
        layout: RelScoreLayout,
    ) -> Result<Var, TensorError> {
        let (lq, d) = self.mat_dims(q, "rel_scores")?;
        let (lk, dk) = self.mat_dims(k, "rel_scores")?;
        let (np, dp) = self.mat_dims(p, "rel_scores")?;
        if d != dk || d != dp || self.value(u).len() != d || self.value(v).len() != d {
            return Err(shape_err("rel_scores", "operand widths disagree"));
        }
        if layout.n_queries != lq
            || layout.n_keys != lk
            || layout.delta_index.len() != lq * lk
            || layout.head_offset + layout.head_dim > d
        {
            return Err(shape_err("rel_scores", "layout does not match operands"));
        }
        if layout.delta_index.iter().any(|&r| r as usize >= np) {
            return Err(shape_err(
                "rel_scores",
                "relative offset outside the position table",
            ));
        }
        let out = ops::rel_scores_forward(
            self.data(q),
            self.data(k),
            self.data(p),
            self.data(u),
            self.data(v),
            d,
            &layout,
        );
        let value = Tensor::new(vec![lq, lk], out)?;
        self.push(
            value,
            Op::RelScores {
                q,
                k,
                p,
                u,
                v,
                layout: Box::new(layout),
            },
            "rel_scores",
            &[q, k, p, u, v],
        )
    }

    /// Mean binary cross-entropy of `sigmoid(x)` against `target`, optionally
    /// weighting each element. Computed from logits for stability.
    pub fn bce_with_logits(
        &mut self,
        x: Var,
        target: &[F],
        weight: Option<&[F]>,
    ) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if target.len() != n || weight.is_some_and(|w| w.len() != n) {
            return Err(shape_err(
                "bce_with_logits",
                "target/weight length mismatch",
            ));
        }
        let xs = self.data(x);
        let mut s = F::zero();
        for i in 0..n {
            let z = xs[i];
            let l = z.max(F::zero()) - z * target[i] + (F::one() + (-z.abs()).exp()).ln();
            s = s + weight.map_or(l, |w| l * w[i]);
        }
        let value = Tensor::scalar(s / F::lit(n as f64));
        self.push(
            value,
            Op::BceLogits {
                x,
                target: target.to_vec(),
                weight: weight.map(|w| w.to_vec()),
            },
            "bce_with_logits",
            &[x],
        )
    }

    /// Reverse sweep from a scalar `loss`. Returns every node's gradient and
    /// clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<F>, TensorError> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::Contract("loss is not on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.nodes.clear();
        Ok(Grads { grads })
    }

    fn backward_node(&self, idx: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    let da = acc_slot(grads, *a, m * k);
                    ops::matmul_grad_a(g, self.data(*b), da, m, k, n);
                }
                if self.needs(*b) {
                    let db = acc_slot(grads, *b, k * n);
                    ops::matmul_grad_b(self.data(*a), g, db, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if self.needs(p) {
                        add_into(acc_slot(grads, p, g.len()), g);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.needs(*a) {
                    add_into(acc_slot(grads, *a, g.len()), g);
                }
                if self.needs(*b) {
                    let n = self.value(*b).len();
                    let db = acc_slot(grads, *b, n);
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let da = acc_slot(grads, *a, g.len());
                    for ((d, gi), bv) in da.iter_mut().zip(g).zip(self.data(*b)) {
                        *d = *d + *gi * *bv;
                    }
                }
                if self.needs(*b) {
                    let db = acc_slot(grads, *b, g.len());
                    for ((d, gi), av) in db.iter_mut().zip(g).zip(self.data(*a)) {
                        *d = *d + *gi * *av;
                    }
                }
            }
            Op::Scale(a, s) => {
                let da = acc_slot(grads, *a, g.len());
                for (d, gi) in da.iter_mut().zip(g) {
                    *d = *d + *gi * *s;
                }
            }
            Op::Relu(a) => {
                let da = acc_slot(grads, *a, g.len());
                for ((d, gi), x) in da.iter_mut().zip(g).zip(self.data(*a)) {
                    if *x > F::zero() {
                        *d = *d + *gi;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let da = acc_slot(grads, *a, g.len());
                for ((d, gi), yi) in da.iter_mut().zip(g).zip(y) {
                    *d = *d + *gi * *yi * (F::one() - *yi);
                }
            }
            Op::Dropout(a, mask) => {
                let da = acc_slot(grads, *a, g.len());
                for ((d, gi), m) in da.iter_mut().zip(g).zip(mask) {
                    *d = *d + *gi * *m;
                }
            }
            Op::SoftmaxRows(a) => {
                let n = node.value.shape()[1];
                let y = node.value.data();
                let da = acc_slot(grads, *a, g.len());
                for ((drow, grow), yrow) in da.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let dot: F = grow.iter().zip(yrow).map(|(a, b)| *a * *b).sum();
                    for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = *d + *yi * (*gi - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.shape(*x)[1];
                let gv = self.data(*gain);
                if self.needs(*gain) {
                    let dg = acc_slot(grads, *gain, d);
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] = dg[j] + grow[j] * hrow[j];
                        }
                    }
                }
                if self.needs(*bias) {
                    let db = acc_slot(grads, *bias, d);
                    for grow in g.chunks(d) {
                        add_into(db, grow);
                    }
                }
                if self.needs(*x) {
                    let dn = F::lit(d as f64);
                    let dx = acc_slot(grads, *x, g.len());
                    let mut dh = vec![F::zero(); d];
                    for (i, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = grow[j] * gv[j];
                        }
                        let m1 = dh.iter().copied().sum::<F>() / dn;
                        let m2 = dh.iter().zip(hrow).map(|(a, b)| *a * *b).sum::<F>() / dn;
                        for j in 0..d {
                            dx[i * d + j] = dx[i * d + j] + rstd[i] * (dh[j] - m1 - hrow[j] * m2);
                        }
                    }
                }
            }
            Op::Conv2d { x, k, bias, geom } => {
                let (nx, nk) = (self.value(*x).len(), self.value(*k).len());
                let mut dx = self.needs(*x).then(|| vec![F::zero(); nx]);
                let mut dk = self.needs(*k).then(|| vec![F::zero(); nk]);
                let mut db = bias
                    .filter(|b| self.needs(*b))
                    .map(|_| vec![F::zero(); geom.c_out]);
                ops::conv2d_backward(
                    self.data(*x),
                    self.data(*k),
                    g,
                    *geom,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    add_into(acc_slot(grads, *x, nx), &dx);
                }
                if let Some(dk) = dk {
                    add_into(acc_slot(grads, *k, nk), &dk);
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    add_into(acc_slot(grads, *b, geom.c_out), &db);
                }
            }
            Op::MaxPoolFreq { x, argmax } => {
                let n = self.value(*x).len();
                let dx = acc_slot(grads, *x, n);
                for (gi, &src) in g.iter().zip(argmax) {
                    dx[src] = dx[src] + *gi;
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    if self.needs(p) {
                        let n = self.value(p).len();
                        let dp = acc_slot(grads, p, n);
                        for o in 0..outer {
                            add_into(
                                &mut dp[o * chunk..(o + 1) * chunk],
                                &g[o * row + offset..o * row + offset + chunk],
                            );
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Slice { x, axis, start } => {
                let src_shape = self.shape(*x).to_vec();
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[axis + 1..].iter().product();
                let len = node.value.shape()[*axis];
                let n = self.value(*x).len();
                let dx = acc_slot(grads, *x, n);
                for o in 0..outer {
                    let s = (o * src_shape[*axis] + start) * inner;
                    add_into(
                        &mut dx[s..s + len * inner],
                        &g[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }
            Op::Permute { x, map } => {
                let n = self.value(*x).len();
                let dx = acc_slot(grads, *x, n);
                for (gi, &src) in g.iter().zip(map) {
                    dx[src] = dx[src] + *gi;
                }
            }
            Op::Reshape(x) => {
                add_into(acc_slot(grads, *x, g.len()), g);
            }
            Op::MeanRows(x) => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let inv = F::one() / F::lit(m as f64);
                let dx = acc_slot(grads, *x, m * n);
                for row in dx.chunks_mut(n) {
                    for (d, gi) in row.iter_mut().zip(g) {
                        *d = *d + *gi * inv;
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let dx = acc_slot(grads, *x, n);
                for d in dx.iter_mut() {
                    *d = *d + g[0];
                }
            }
            Op::RelScores {
                q,
                k,
                p,
                u,
                v,
                layout,
            } => {
                let d = self.shape(*q)[1];
                let take = |grads: &mut [Option<Vec<F>>], var: Var| -> Option<Vec<F>> {
                    self.needs(var).then(|| {
                        grads[var.0]
                            .take()
                            .unwrap_or_else(|| vec![F::zero(); self.value(var).len()])
                    })
                };
                let mut dq = take(grads, *q);
                let mut dk = take(grads, *k);
                let mut dp = take(grads, *p);
                let mut du = take(grads, *u);
                let mut dv = take(grads, *v);
                ops::rel_scores_backward(
                    self.data(*q),
                    self.data(*k),
                    self.data(*p),
                    self.data(*u),
                    self.data(*v),
                    d,
                    layout,
                    g,
                    RelScoreGrads {
                        dq: dq.as_deref_mut(),
                        dk: dk.as_deref_mut(),
                        dp: dp.as_deref_mut(),
                        du: du.as_deref_mut(),
                        dv: dv.as_deref_mut(),
                    },
                );
                for (var, gr) in [(*q, dq), (*k, dk), (*p, dp), (*u, du), (*v, dv)] {
                    if let Some(gr) = gr {
                        // The same var may appear twice (e.g. u == v); merge.
                        match grads[var.0].as_mut() {
                            Some(existing) => add_into(existing, &gr),
                            None => grads[var.0] = Some(gr),
                        }
                    }
                }
            }
            Op::BceLogits { x, target, weight } => {
                let n = target.len();
                let inv = F::one() / F::lit(n as f64);
                let xs = self.data(*x);
                let dx = acc_slot(grads, *x, n);
                for i in 0..n {
                    let w = weight.as_ref().map_or(F::one(), |w| w[i]);
                    dx[i] = dx[i] + g[0] * (ops::sigmoid(xs[i]) - target[i]) * w * inv;
                }
            }
        }
    }
}

fn acc_slot<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, n: usize) -> &mut [F] {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); n])
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}
