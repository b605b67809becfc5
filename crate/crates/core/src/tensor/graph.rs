use super::kernels::{self, add_assign, col_sum_acc, matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::Tensor;
use crate::error::{Error, Result};

/// Negative-side slope of [`Graph::leaky_relu`] when called through the model.
pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Affine { x: usize, w: usize, b: usize },
    Relu { x: usize },
    LeakyRelu { x: usize, slope: f64 },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Exp { x: usize },
    LogSoftmax { x: usize, axis: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, factor: f64 },
    MulCol { x: usize, col: usize },
    Sum { x: usize },
    Mean { x: usize },
    SumAxis { x: usize, axis: usize },
    FrobSq { x: usize },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    LstmCell { x: usize, h: usize, c: usize, w_ih: usize, w_hh: usize, b: usize, gates: Vec<f64>, tanh_c: Vec<f64> },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Reshape { x: usize },
    Transpose { x: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    Pick { x: usize, idx: Vec<usize> },
    BceWithLogits { logits: usize, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a differentiable computation.
///
/// Every operation validates shapes, evaluates eagerly, rejects non-finite
/// results and appends one node. [`Graph::backward`] visits nodes in reverse
/// append order, so each node is processed exactly once.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    kink_inputs: Vec<f64>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Splits a shape around `axis` into (outer, len, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Inputs seen by piecewise-linear activations, in evaluation order.
    pub fn kink_inputs(&self) -> &[f64] {
        &self.kink_inputs
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::dim(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("inner dimensions {k} and {k2}")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    /// `x W + b` with `x: n x in`, `W: in x out`, `b: 1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, i) = self.dims2("affine", x)?;
        let (i2, o) = self.dims2("affine", w)?;
        if i != i2 {
            return Err(Error::dim("affine", format!("input width {i} vs weight rows {i2}")));
        }
        if self.value(b).len() != o {
            return Err(Error::dim("affine", format!("bias length {} vs {o}", self.value(b).len())));
        }
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, n, i, o);
        self.push("affine", Tensor::from_parts(vec![n, o], out), Op::Affine { x: x.0, w: w.0, b: b.0 }, &[x.0, w.0, b.0])
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(name, value, op, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.kink_inputs.extend_from_slice(self.nodes[x.0].value.data());
        self.unary("relu", x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu { x: x.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.kink_inputs.extend_from_slice(self.nodes[x.0].value.data());
        self.unary("leaky_relu", x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu { x: x.0, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, kernels::sigmoid, Op::Sigmoid { x: x.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh { x: x.0 })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp { x: x.0 })
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("log_softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..len).map(|k| (src[at(k)] - max).exp()).sum::<f64>().ln();
                for k in 0..len {
                    out[at(k)] = src[at(k)] - lse;
                }
            }
        }
        self.push("log_softmax", Tensor::from_parts(shape, out), Op::LogSoftmax { x: x.0, axis }, &[x.0])
    }

    /// Softmax along `axis`, composed as `exp(log_softmax)`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let l = self.log_softmax(x, axis)?;
        self.exp(l)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        self.push(name, value, op, &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * factor, Op::Scale { x: x.0, factor })
    }

    /// Scales each row of `x: n x d` by the matching entry of `col: n x 1`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (n, d) = self.dims2("mul_col", x)?;
        if self.shape(col) != [n, 1] {
            return Err(Error::dim("mul_col", format!("column shape {:?} for {n} rows", self.shape(col))));
        }
        let xs = self.value(x).data();
        let cs = self.value(col).data();
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            out.extend(xs[r * d..(r + 1) * d].iter().map(|v| v * cs[r]));
        }
        self.push("mul_col", Tensor::from_parts(vec![n, d], out), Op::MulCol { x: x.0, col: col.0 }, &[x.0, col.0])
    }

    pub fn reduce_sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("reduce_sum", Tensor::scalar(s), Op::Sum { x: x.0 }, &[x.0])
    }

    pub fn reduce_mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = t.sum() / t.len() as f64;
        self.push("reduce_mean", Tensor::scalar(m), Op::Mean { x: x.0 }, &[x.0])
    }

    /// Sum along `axis`, keeping the reduced dimension with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("sum_axis", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = o * len * inner + k * inner;
                add_assign(&mut out[o * inner..(o + 1) * inner], &src[base..base + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        self.push("sum_axis", Tensor::from_parts(out_shape, out), Op::SumAxis { x: x.0, axis }, &[x.0])
    }

    pub fn frobenius_norm_squared(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push("frobenius_norm_squared", Tensor::scalar(s), Op::FrobSq { x: x.0 }, &[x.0])
    }

    /// Batch normalization over rows of `x: n x d`.
    ///
    /// Training mode normalizes with the (biased) batch statistics and updates
    /// `running` with momentum [`BN_MOMENTUM`] using the unbiased variance.
    /// Inference mode normalizes with `running`.
    pub fn batchnorm_1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        training: bool,
    ) -> Result<Var> {
        let (n, d) = self.dims2("batchnorm_1d", x)?;
        if self.value(gamma).len() != d || self.value(beta).len() != d || running.mean.len() != d {
            return Err(Error::dim("batchnorm_1d", format!("feature count {d} vs affine/running stats")));
        }
        if training && n < 2 {
            return Err(Error::dim("batchnorm_1d", "training mode needs a batch of at least 2"));
        }
        let xs = self.value(x).data();
        let (mean, var) = if training {
            let mut mean = vec![0.0; d];
            col_sum_acc(xs, &mut mean, n, d);
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for r in 0..n {
                for j in 0..d {
                    let c = xs[r * d + j] - mean[j];
                    var[j] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for j in 0..d {
                let h = (xs[r * d + j] - mean[j]) * inv_std[j];
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        if training {
            let unbias = n as f64 / (n as f64 - 1.0);
            for j in 0..d {
                running.mean[j] = (1.0 - BN_MOMENTUM) * running.mean[j] + BN_MOMENTUM * mean[j];
                running.var[j] = (1.0 - BN_MOMENTUM) * running.var[j] + BN_MOMENTUM * var[j] * unbias;
            }
        }
        let op = Op::BatchNorm {
            x: x.0,
            gamma: gamma.0,
            beta: beta.0,
            xhat,
            inv_std,
            batch_stats: training,
        };
        self.push("batchnorm_1d", Tensor::from_parts(vec![n, d], out), op, &[x.0, gamma.0, beta.0])
    }

    /// One LSTM step. Gate order in the packed weights is input, forget, cell, output.
    ///
    /// `x: n x I`, `h, c: n x H`, `w_ih: I x 4H`, `w_hh: H x 4H`, `b: 1 x 4H`.
    /// Returns `(h', c')`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<(Var, Var)> {
        let (n, i) = self.dims2("lstm_cell", x)?;
        let (n2, hd) = self.dims2("lstm_cell", h)?;
        let g4 = 4 * hd;
        if n2 != n
            || self.shape(c) != [n, hd]
            || self.shape(w_ih) != [i, g4]
            || self.shape(w_hh) != [hd, g4]
            || self.value(b).len() != g4
        {
            return Err(Error::dim("lstm_cell", "inconsistent gate/state shapes"));
        }
        let mut gates = Vec::with_capacity(n * g4);
        for _ in 0..n {
            gates.extend_from_slice(self.value(b).data());
        }
        matmul_acc(self.value(x).data(), self.value(w_ih).data(), &mut gates, n, i, g4);
        matmul_acc(self.value(h).data(), self.value(w_hh).data(), &mut gates, n, hd, g4);
        let cs = self.value(c).data();
        let mut out = vec![0.0; n * 2 * hd];
        let mut tanh_c = vec![0.0; n * hd];
        for r in 0..n {
            let gr = &mut gates[r * g4..(r + 1) * g4];
            for j in 0..hd {
                gr[j] = kernels::sigmoid(gr[j]);
                gr[hd + j] = kernels::sigmoid(gr[hd + j]);
                gr[2 * hd + j] = gr[2 * hd + j].tanh();
                gr[3 * hd + j] = kernels::sigmoid(gr[3 * hd + j]);
                let c_new = gr[hd + j] * cs[r * hd + j] + gr[j] * gr[2 * hd + j];
                let tc = c_new.tanh();
                tanh_c[r * hd + j] = tc;
                out[r * 2 * hd + j] = gr[3 * hd + j] * tc;
                out[r * 2 * hd + hd + j] = c_new;
            }
        }
        let op = Op::LstmCell {
            x: x.0,
            h: h.0,
            c: c.0,
            w_ih: w_ih.0,
            w_hh: w_hh.0,
            b: b.0,
            gates,
            tanh_c,
        };
        let packed = self.push("lstm_cell", Tensor::from_parts(vec![n, 2 * hd], out), op, &[x.0, h.0, c.0, w_ih.0, w_hh.0, b.0])?;
        let h_new = self.slice(packed, 1, 0, hd)?;
        let c_new = self.slice(packed, 1, hd, hd)?;
        Ok((h_new, c_new))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", format!("shape {s:?} incompatible with {base:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis];
                let src = self.value(*p).data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push("concat", Tensor::from_parts(shape, out), Op::Concat { parts: ids.clone(), axis }, &ids)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim("slice", format!("range {start}+{len} on axis {axis} of {shape:?}")));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = o * full * inner + start * inner;
            out.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push("slice", Tensor::from_parts(out_shape, out), Op::Slice { x: x.0, axis, start }, &[x.0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self
            .value(x)
            .reshaped(shape)
            .map_err(|_| Error::dim("reshape", format!("{:?} -> {shape:?}", self.shape(x))))?;
        self.push("reshape", value, Op::Reshape { x: x.0 }, &[x.0])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2("transpose", x)?;
        let out = kernels::transpose(self.value(x).data(), m, n);
        self.push("transpose", Tensor::from_parts(vec![n, m], out), Op::Transpose { x: x.0 }, &[x.0])
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, _) = self.dims2("gather_rows", x)?;
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(Error::dim("gather_rows", format!("indices out of range for {n} rows")));
        }
        let value = self.value(x).select_rows(idx);
        self.push("gather_rows", value, Op::GatherRows { x: x.0, idx: idx.to_vec() }, &[x.0])
    }

    /// Selects column `idx[r]` from each row `r`, giving `n x 1`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2("pick", x)?;
        if idx.len() != n || idx.iter().any(|&i| i >= c) {
            return Err(Error::dim("pick", format!("{} indices for {n} x {c}", idx.len())));
        }
        let v = self.value(x);
        let out = idx.iter().enumerate().map(|(r, &k)| v.at(r, k)).collect();
        self.push("pick", Tensor::from_parts(vec![n, 1], out), Op::Pick { x: x.0, idx: idx.to_vec() }, &[x.0])
    }

    /// Elementwise logistic loss `softplus(z) - t z` for targets `t` in {0, 1}.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let v = self.value(logits);
        if v.len() != targets.len() {
            return Err(Error::dim("bce_with_logits", format!("{} targets for {} logits", targets.len(), v.len())));
        }
        let out = v
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| kernels::softplus(z) - t * z)
            .collect();
        let value = Tensor::from_parts(v.shape().to_vec(), out);
        self.push("bce_with_logits", value, Op::BceWithLogits { logits: logits.0, targets: targets.to_vec() }, &[logits.0])
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    ///
    /// Every leaf created with `requires_grad` receives a gradient; leaves the
    /// loss does not depend on receive zeros.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;

        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> Option<&'a mut Vec<f64>> {
            if !nodes[i].requires_grad {
                return None;
            }
            let len = nodes[i].value.len();
            Some(grads[i].get_or_insert_with(|| vec![0.0; len]))
        }

        for idx in (0..n).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let out = &node.value;
            let val = |i: usize| nodes[i].value.data();
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul { a, b } => {
                    let (m, k) = nodes[*a].value.as_2d();
                    let nn = out.cols();
                    if let Some(da) = acc(&mut grads, nodes, *a) {
                        matmul_nt_acc(&g, val(*b), da, m, nn, k);
                    }
                    if let Some(db) = acc(&mut grads, nodes, *b) {
                        matmul_tn_acc(val(*a), &g, db, m, k, nn);
                    }
                }
                Op::Affine { x, w, b } => {
                    let (m, k) = nodes[*x].value.as_2d();
                    let nn = out.cols();
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        matmul_nt_acc(&g, val(*w), dx, m, nn, k);
                    }
                    if let Some(dw) = acc(&mut grads, nodes, *w) {
                        matmul_tn_acc(val(*x), &g, dw, m, k, nn);
                    }
                    if let Some(db) = acc(&mut grads, nodes, *b) {
                        col_sum_acc(&g, db, m, nn);
                    }
                }
                Op::Relu { x } => {
                    let xs = val(*x);
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for ((d, &gv), &xv) in dx.iter_mut().zip(&g).zip(xs) {
                            if xv > 0.0 {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xs = val(*x);
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for ((d, &gv), &xv) in dx.iter_mut().zip(&g).zip(xs) {
                            *d += if xv > 0.0 { gv } else { slope * gv };
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for ((d, &gv), &y) in dx.iter_mut().zip(&g).zip(out.data()) {
                            *d += gv * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh { x } => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for ((d, &gv), &y) in dx.iter_mut().zip(&g).zip(out.data()) {
                            *d += gv * (1.0 - y * y);
                        }
                    }
                }
                Op::Exp { x } => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for ((d, &gv), &y) in dx.iter_mut().zip(&g).zip(out.data()) {
                            *d += gv * y;
                        }
                    }
                }
                Op::LogSoftmax { x, axis } => {
                    let (outer, len, inner) = axis_split(out.shape(), *axis);
                    let ys = out.data();
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |k: usize| o * len * inner + k * inner + i;
                                let gsum: f64 = (0..len).map(|k| g[at(k)]).sum();
                                for k in 0..len {
                                    dx[at(k)] += g[at(k)] - ys[at(k)].exp() * gsum;
                                }
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    if let Some(da) = acc(&mut grads, nodes, *a) {
                        add_assign(da, &g);
                    }
                    if let Some(db) = acc(&mut grads, nodes, *b) {
                        add_assign(db, &g);
                    }
                }
                Op::Sub { a, b } => {
                    if let Some(da) = acc(&mut grads, nodes, *a) {
                        add_assign(da, &g);
                    }
                    if let Some(db) = acc(&mut grads, nodes, *b) {
                        for (d, gv) in db.iter_mut().zip(&g) {
                            *d -= gv;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if let Some(da) = acc(&mut grads, nodes, *a) {
                        for ((d, gv), bv) in da.iter_mut().zip(&g).zip(val(*b)) {
                            *d += gv * bv;
                        }
                    }
                    if let Some(db) = acc(&mut grads, nodes, *b) {
                        for ((d, gv), av) in db.iter_mut().zip(&g).zip(val(*a)) {
                            *d += gv * av;
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for (d, gv) in dx.iter_mut().zip(&g) {
                            *d += gv * factor;
                        }
                    }
                }
                Op::MulCol { x, col } => {
                    let (rows, d) = out.as_2d();
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        let cs = val(*col);
                        for r in 0..rows {
                            for j in 0..d {
                                dx[r * d + j] += g[r * d + j] * cs[r];
                            }
                        }
                    }
                    if let Some(dc) = acc(&mut grads, nodes, *col) {
                        let xs = val(*x);
                        for r in 0..rows {
                            dc[r] += kernels::dot(&g[r * d..(r + 1) * d], &xs[r * d..(r + 1) * d]);
                        }
                    }
                }
                Op::Sum { x } => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        dx.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::Mean { x } => {
                    let scale = g[0] / nodes[*x].value.len() as f64;
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        dx.iter_mut().for_each(|d| *d += scale);
                    }
                }
                Op::SumAxis { x, axis } => {
                    let (outer, len, inner) = axis_split(nodes[*x].value.shape(), *axis);
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for o in 0..outer {
                            for k in 0..len {
                                let base = o * len * inner + k * inner;
                                add_assign(&mut dx[base..base + inner], &g[o * inner..(o + 1) * inner]);
                            }
                        }
                    }
                }
                Op::FrobSq { x } => {
                    let xs = val(*x);
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for (d, &xv) in dx.iter_mut().zip(xs) {
                            *d += 2.0 * xv * g[0];
                        }
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                    let (rows, d) = out.as_2d();
                    let gam = val(*gamma);
                    if let Some(dg) = acc(&mut grads, nodes, *gamma) {
                        for r in 0..rows {
                            for j in 0..d {
                                dg[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                    }
                    if let Some(db) = acc(&mut grads, nodes, *beta) {
                        col_sum_acc(&g, db, rows, d);
                    }
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        if *batch_stats {
                            let nf = rows as f64;
                            let mut sum_dh = vec![0.0; d];
                            let mut sum_dh_h = vec![0.0; d];
                            for r in 0..rows {
                                for j in 0..d {
                                    let dh = g[r * d + j] * gam[j];
                                    sum_dh[j] += dh;
                                    sum_dh_h[j] += dh * xhat[r * d + j];
                                }
                            }
                            for r in 0..rows {
                                for j in 0..d {
                                    let dh = g[r * d + j] * gam[j];
                                    dx[r * d + j] += inv_std[j] / nf
                                        * (nf * dh - sum_dh[j] - xhat[r * d + j] * sum_dh_h[j]);
                                }
                            }
                        } else {
                            for r in 0..rows {
                                for j in 0..d {
                                    dx[r * d + j] += g[r * d + j] * gam[j] * inv_std[j];
                                }
                            }
                        }
                    }
                }
                Op::LstmCell { x, h, c, w_ih, w_hh, b, gates, tanh_c } => {
                    let (rows, hd) = nodes[*h].value.as_2d();
                    let in_dim = nodes[*x].value.cols();
                    let g4 = 4 * hd;
                    let cs = val(*c);
                    let mut dgates = vec![0.0; rows * g4];
                    let mut dc_prev = vec![0.0; rows * hd];
                    for r in 0..rows {
                        let gr = &gates[r * g4..(r + 1) * g4];
                        for j in 0..hd {
                            let (ig, fg, cg, og) = (gr[j], gr[hd + j], gr[2 * hd + j], gr[3 * hd + j]);
                            let tc = tanh_c[r * hd + j];
                            let dh = g[r * 2 * hd + j];
                            let dc = g[r * 2 * hd + hd + j] + dh * og * (1.0 - tc * tc);
                            let dr = &mut dgates[r * g4..(r + 1) * g4];
                            dr[j] = dc * cg * ig * (1.0 - ig);
                            dr[hd + j] = dc * cs[r * hd + j] * fg * (1.0 - fg);
                            dr[2 * hd + j] = dc * ig * (1.0 - cg * cg);
                            dr[3 * hd + j] = dh * tc * og * (1.0 - og);
                            dc_prev[r * hd + j] = dc * fg;
                        }
                    }
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        matmul_nt_acc(&dgates, val(*w_ih), dx, rows, g4, in_dim);
                    }
                    if let Some(dh) = acc(&mut grads, nodes, *h) {
                        matmul_nt_acc(&dgates, val(*w_hh), dh, rows, g4, hd);
                    }
                    if let Some(dc) = acc(&mut grads, nodes, *c) {
                        add_assign(dc, &dc_prev);
                    }
                    if let Some(dw) = acc(&mut grads, nodes, *w_ih) {
                        matmul_tn_acc(val(*x), &dgates, dw, rows, in_dim, g4);
                    }
                    if let Some(dw) = acc(&mut grads, nodes, *w_hh) {
                        matmul_tn_acc(val(*h), &dgates, dw, rows, hd, g4);
                    }
                    if let Some(db) = acc(&mut grads, nodes, *b) {
                        col_sum_acc(&dgates, db, rows, g4);
                    }
                }
                Op::Concat { parts, axis } => {
                    let (outer, total, inner) = axis_split(out.shape(), *axis);
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.shape()[*axis];
                        if let Some(dp) = acc(&mut grads, nodes, p) {
                            for o in 0..outer {
                                let src = o * total * inner + offset * inner;
                                add_assign(&mut dp[o * len * inner..(o + 1) * len * inner], &g[src..src + len * inner]);
                            }
                        }
                        offset += len;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let (outer, full, inner) = axis_split(nodes[*x].value.shape(), *axis);
                    let len = out.shape()[*axis];
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for o in 0..outer {
                            let dst = o * full * inner + start * inner;
                            add_assign(&mut dx[dst..dst + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                        }
                    }
                }
                Op::Reshape { x } => {
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        add_assign(dx, &g);
                    }
                }
                Op::Transpose { x } => {
                    let (m, nn) = out.as_2d();
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        add_assign(dx, &kernels::transpose(&g, m, nn));
                    }
                }
                Op::GatherRows { x, idx } => {
                    let d = out.cols();
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for (r, &src) in idx.iter().enumerate() {
                            add_assign(&mut dx[src * d..(src + 1) * d], &g[r * d..(r + 1) * d]);
                        }
                    }
                }
                Op::Pick { x, idx } => {
                    let c = nodes[*x].value.cols();
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for (r, &k) in idx.iter().enumerate() {
                            dx[r * c + k] += g[r];
                        }
                    }
                }
                Op::BceWithLogits { logits, targets } => {
                    let zs = val(*logits);
                    if let Some(dz) = acc(&mut grads, nodes, *logits) {
                        for ((d, (&gv, &z)), &t) in dz.iter_mut().zip(g.iter().zip(zs)).zip(targets) {
                            *d += gv * (kernels::sigmoid(z) - t);
                        }
                    }
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.requires_grad => Some(Tensor::from_parts(
                    node.value.shape().to_vec(),
                    g.unwrap_or_else(|| vec![0.0; node.value.len()]),
                )),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_hand_example() {
        let mut g = Graph::new();
        let a = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = g.constant(m(&[&[1.0], &[1.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
        assert_eq!(g.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn relu_and_log_softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[-1.0, 0.0, 2.0]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

        let z = g.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let l = g.log_softmax(z, 0).unwrap();
        for v in g.value(l).data() {
            assert!((v + 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_names_operation() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Dimension { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("unexpected {other:?}"),
        }
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, c), Err(Error::Dimension { op: "add", .. })));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[1000.0]));
        assert!(matches!(g.exp(x), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.reduce_sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0]));
        let c = g.constant(Tensor::scalar(5.0));
        let loss = g.reduce_sum(c).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn batchnorm_requires_two_rows_in_training() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2]));
        let gamma = g.constant(Tensor::full(&[1, 2], 1.0));
        let beta = g.constant(Tensor::zeros(&[1, 2]));
        let mut rs = RunningStats::new(2);
        assert!(g.batchnorm_1d(x, gamma, beta, &mut rs, true).is_err());
        assert!(g.batchnorm_1d(x, gamma, beta, &mut rs, false).is_ok());
    }

    #[test]
    fn batchnorm_updates_running_stats_with_momentum() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::column(&[1.0, 3.0]));
        let gamma = g.constant(Tensor::row(&[1.0]));
        let beta = g.constant(Tensor::row(&[0.0]));
        let mut rs = RunningStats::new(1);
        g.batchnorm_1d(x, gamma, beta, &mut rs, true).unwrap();
        // batch mean 2, unbiased variance 2
        assert!((rs.mean[0] - 0.2).abs() < 1e-15);
        assert!((rs.var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }
}
