//! Computation record and reverse pass.
//!
//! Nodes are appended in evaluation order, which is a topological order, so
//! the reverse pass simply walks the record backwards.

use std::sync::Arc;

use super::params::{Gradients, ParamId, ParameterStore};
use super::Tensor;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Handle to a node in a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    /// Constant sparse matrix times a dense node.
    SpMm(Arc<CsrMatrix>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    /// Same-shape elementwise map; one stored partial per input and element.
    Elementwise(Vec<(usize, Vec<f64>)>),
    Concat {
        parts: Vec<usize>,
        outer: usize,
        inner: usize,
        sizes: Vec<usize>,
    },
    Slice {
        input: usize,
        outer: usize,
        inner: usize,
        axis_len: usize,
        start: usize,
        len: usize,
    },
    Reshape(usize),
    SumAll(usize),
    SumAxis {
        input: usize,
        outer: usize,
        axis_len: usize,
        inner: usize,
        scale: f64,
    },
    LayerNorm {
        input: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        width: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    num_params: usize,
}

fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue { op: op.to_string() })
    }
}

/// `(outer, axis_len, inner)` split of `shape` around `axis`.
fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub const LOG_FLOOR: f64 = 1e-12;

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            num_params: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn checked(&mut self, name: &str, value: Tensor, op: Op) -> Result<Var> {
        check_finite(name, value.data())?;
        Ok(self.push(value, op))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        self.num_params = self.num_params.max(store.len());
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2("matmul", a)?;
        let (k2, m) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{n}x{k} times {k2}x{m}")));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let xv = x[i * k + p];
                if xv == 0.0 {
                    continue;
                }
                for (o, yv) in row.iter_mut().zip(&y[p * m..(p + 1) * m]) {
                    *o += xv * yv;
                }
            }
        }
        self.checked("matmul", Tensor::matrix(n, m, out)?, Op::MatMul(a.0, b.0))
    }

    /// `S · x` for a constant sparse `S`; the adjoint is `Sᵀ g`.
    pub fn spmm(&mut self, s: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let (n, w) = self.dims2("spmm", x)?;
        if s.cols() != n {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} times {n}x{w}", s.rows(), s.cols()),
            ));
        }
        let out = s.mul_dense(self.value(x).data(), w);
        self.checked(
            "spmm",
            Tensor::matrix(s.rows(), w, out)?,
            Op::SpMm(Arc::clone(s), x.0),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.checked("add", Tensor::new(shape, data)?, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        self.checked("sub", Tensor::new(shape, data)?, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a).data().to_vec(), self.value(b).data().to_vec());
        let data = zip_map(&x, &y, |p, q| p * q);
        self.elementwise("mul", a, data, vec![(a, y), (b, x)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let data = zip_map(x, y, |p, q| p / q);
        let da = y.iter().map(|q| 1.0 / q).collect();
        let db = zip_map(x, y, |p, q| -p / (q * q));
        self.elementwise("div", a, data, vec![(a, da), (b, db)])
    }

    /// Broadcast a length-`w` vector (or `1×w` matrix) over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, w) = self.dims2("add_row", a)?;
        if self.value(row).len() != w {
            return Err(Error::shape(
                "add_row",
                format!("row of {} for width {w}", self.value(row).len()),
            ));
        }
        let r = self.value(row).data();
        let x = self.value(a).data();
        let data = (0..n * w).map(|k| x[k] + r[k % w]).collect();
        self.checked(
            "add_row",
            Tensor::matrix(n, w, data)?,
            Op::AddRow(a.0, row.0),
        )
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, w) = self.dims2("mul_row", a)?;
        if self.value(row).len() != w {
            return Err(Error::shape(
                "mul_row",
                format!("row of {} for width {w}", self.value(row).len()),
            ));
        }
        let r = self.value(row).data();
        let x = self.value(a).data();
        let data = (0..n * w).map(|k| x[k] * r[k % w]).collect();
        self.checked(
            "mul_row",
            Tensor::matrix(n, w, data)?,
            Op::MulRow(a.0, row.0),
        )
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * k).collect();
        let shape = self.shape(a).to_vec();
        self.checked("scale", Tensor::new(shape, data)?, Op::Scale(a.0, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, "add_scalar", |x| (x + k, 1.0))
    }

    /// Elementwise node from precomputed values and partials. `like` supplies
    /// the output shape; every partial has one entry per output element.
    pub fn elementwise(
        &mut self,
        name: &str,
        like: Var,
        values: Vec<f64>,
        partials: Vec<(Var, Vec<f64>)>,
    ) -> Result<Var> {
        let shape = self.shape(like).to_vec();
        for (v, p) in &partials {
            if self.value(*v).len() != values.len() || p.len() != values.len() {
                return Err(Error::Format(format!(
                    "elementwise op {name}: size mismatch"
                )));
            }
        }
        check_finite(name, &values)?;
        let inputs = partials.into_iter().map(|(v, p)| (v.0, p)).collect();
        Ok(self.push(Tensor::new(shape, values)?, Op::Elementwise(inputs)))
    }

    /// Unary map; `f` returns `(value, derivative)`.
    pub fn map(&mut self, a: Var, name: &str, f: impl Fn(f64) -> (f64, f64)) -> Result<Var> {
        let (values, partial): (Vec<f64>, Vec<f64>) =
            self.value(a).data().iter().map(|x| f(*x)).unzip();
        self.elementwise(name, a, values, vec![(a, partial)])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, "sigmoid", |x| {
            let s = sigmoid(x);
            (s, s * (1.0 - s))
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, "tanh", |x| {
            let t = x.tanh();
            (t, 1.0 - t * t)
        })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, "relu", |x| if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) })
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map(a, "softplus", |x| (softplus(x), sigmoid(x)))
    }

    /// `ln(max(x, 1e-12))`.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(a, "log", |x| {
            if x > LOG_FLOOR {
                (x.ln(), 1.0 / x)
            } else {
                (LOG_FLOOR.ln(), 0.0)
            }
        })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, "exp", |x| {
            let e = x.exp();
            (e, e)
        })
    }

    /// `√max(x, 1e-12)`.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.map(a, "sqrt", |x| {
            if x > LOG_FLOOR {
                let s = x.sqrt();
                (s, 0.5 / s)
            } else {
                (LOG_FLOOR.sqrt(), 0.0)
            }
        })
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, "square", |x| (x * x, 2.0 * x))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map(a, "clamp", |x| {
            if x < lo {
                (lo, 0.0)
            } else if x > hi {
                (hi, 0.0)
            } else {
                (x, 1.0)
            }
        })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "nothing to concatenate"))?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = split_axis("concat", &base, axis)?;
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} vs {base:?} on axis {axis}"),
                ));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, size) in parts.iter().zip(&sizes) {
                let src = self.value(*p).data();
                data.extend_from_slice(&src[o * size * inner..(o + 1) * size * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let op = Op::Concat {
            parts: parts.iter().map(|p| p.0).collect(),
            outer,
            inner,
            sizes,
        };
        Ok(self.push(Tensor::new(shape, data)?, op))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, axis_len, inner) = split_axis("slice", &shape, axis)?;
        if start + len > axis_len {
            return Err(Error::shape(
                "slice",
                format!("{start}+{len} exceeds {axis_len}"),
            ));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let op = Op::Slice {
            input: a.0,
            outer,
            inner,
            axis_len,
            start,
            len,
        };
        Ok(self.push(Tensor::new(out_shape, data)?, op))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).with_shape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a.0)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.checked("sum", Tensor::scalar(s), Op::SumAll(a.0))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("sum_axis", a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("mean_axis", a, axis, true)
    }

    fn reduce_axis(&mut self, name: &'static str, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, axis_len, inner) = split_axis(name, &shape, axis)?;
        let scale = if mean {
            if axis_len == 0 {
                return Err(Error::shape(name, "mean over an empty axis"));
            }
            1.0 / axis_len as f64
        } else {
            1.0
        };
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..axis_len {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * axis_len + k) * inner + i];
                }
            }
        }
        data.iter_mut().for_each(|v| *v *= scale);
        let mut out_shape = shape;
        out_shape.remove(axis);
        let op = Op::SumAxis {
            input: a.0,
            outer,
            axis_len,
            inner,
            scale,
        };
        self.checked(name, Tensor::new(out_shape, data)?, op)
    }

    /// Normalizes each row over the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if width == 0 {
            return Err(Error::shape("layer_norm", "zero width"));
        }
        let src = self.value(a).data();
        let rows = src.len() / width;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let x = &src[r * width..(r + 1) * width];
            let mean = x.iter().sum::<f64>() / width as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for k in 0..width {
                xhat[r * width + k] = (x[k] - mean) * is;
            }
        }
        check_finite("layer_norm", &xhat)?;
        let value = Tensor::new(shape, xhat.clone())?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: a.0,
                xhat,
                inv_std,
                width,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`, returning parameter gradients.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        let mut out = Gradients(vec![None; self.num_params]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |target: usize, contrib: &dyn Fn(&mut [f64])| {
                let slot =
                    adj[target].get_or_insert_with(|| vec![0.0; self.nodes[target].value.len()]);
                contrib(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let slot = out.0[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
                    slot.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
                }
                Op::MatMul(a, b) => {
                    let (n, k) = self.nodes[*a].value.dims2().unwrap();
                    let m = node.value.shape()[1];
                    let x = self.nodes[*a].value.data();
                    let y = self.nodes[*b].value.data();
                    // dA = G Yᵀ
                    send(*a, &|s| {
                        for i in 0..n {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..m {
                                    acc += g[i * m + j] * y[p * m + j];
                                }
                                s[i * k + p] += acc;
                            }
                        }
                    });
                    // dB = Xᵀ G
                    send(*b, &|s| {
                        for i in 0..n {
                            for p in 0..k {
                                let xv = x[i * k + p];
                                if xv == 0.0 {
                                    continue;
                                }
                                for j in 0..m {
                                    s[p * m + j] += xv * g[i * m + j];
                                }
                            }
                        }
                    });
                }
                Op::SpMm(mat, x) => {
                    let w = node.value.shape()[1];
                    let back = mat.tr_mul_dense(&g, w);
                    send(*x, &|s| s.iter_mut().zip(&back).for_each(|(a, b)| *a += b));
                }
                Op::Add(a, b) => {
                    send(*a, &|s| s.iter_mut().zip(&g).for_each(|(a, b)| *a += b));
                    send(*b, &|s| s.iter_mut().zip(&g).for_each(|(a, b)| *a += b));
                }
                Op::Sub(a, b) => {
                    send(*a, &|s| s.iter_mut().zip(&g).for_each(|(a, b)| *a += b));
                    send(*b, &|s| s.iter_mut().zip(&g).for_each(|(a, b)| *a -= b));
                }
                Op::AddRow(a, row) => {
                    let w = self.nodes[*row].value.len();
                    send(*a, &|s| s.iter_mut().zip(&g).for_each(|(a, b)| *a += b));
                    send(*row, &|s| {
                        for (k, v) in g.iter().enumerate() {
                            s[k % w] += v;
                        }
                    });
                }
                Op::MulRow(a, row) => {
                    let r = self.nodes[*row].value.data();
                    let x = self.nodes[*a].value.data();
                    let w = r.len();
                    send(*a, &|s| {
                        for (k, v) in g.iter().enumerate() {
                            s[k] += v * r[k % w];
                        }
                    });
                    send(*row, &|s| {
                        for (k, v) in g.iter().enumerate() {
                            s[k % w] += v * x[k];
                        }
                    });
                }
                Op::Scale(a, k) => {
                    send(*a, &|s| s.iter_mut().zip(&g).for_each(|(a, b)| *a += k * b));
                }
                Op::Elementwise(inputs) => {
                    for (input, partial) in inputs {
                        send(*input, &|s| {
                            for ((a, b), p) in s.iter_mut().zip(&g).zip(partial) {
                                *a += b * p;
                            }
                        });
                    }
                }
                Op::Concat {
                    parts,
                    outer,
                    inner,
                    sizes,
                } => {
                    let total: usize = sizes.iter().sum();
                    let mut offset = 0;
                    for (p, size) in parts.iter().zip(sizes) {
                        send(*p, &|s| {
                            for o in 0..*outer {
                                let src = (o * total + offset) * inner;
                                let dst = o * size * inner;
                                for k in 0..size * inner {
                                    s[dst + k] += g[src + k];
                                }
                            }
                        });
                        offset += size;
                    }
                }
                Op::Slice {
                    input,
                    outer,
                    inner,
                    axis_len,
                    start,
                    len,
                } => {
                    send(*input, &|s| {
                        for o in 0..*outer {
                            let dst = (o * axis_len + start) * inner;
                            let src = o * len * inner;
                            for k in 0..len * inner {
                                s[dst + k] += g[src + k];
                            }
                        }
                    });
                }
                Op::Reshape(a) => {
                    send(*a, &|s| s.iter_mut().zip(&g).for_each(|(a, b)| *a += b));
                }
                Op::SumAll(a) => {
                    send(*a, &|s| s.iter_mut().for_each(|a| *a += g[0]));
                }
                Op::SumAxis {
                    input,
                    outer,
                    axis_len,
                    inner,
                    scale,
                } => {
                    send(*input, &|s| {
                        for o in 0..*outer {
                            for k in 0..*axis_len {
                                for i in 0..*inner {
                                    s[(o * axis_len + k) * inner + i] += scale * g[o * inner + i];
                                }
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    input,
                    xhat,
                    inv_std,
                    width,
                } => {
                    send(*input, &|s| {
                        let w = *width as f64;
                        for (r, is) in inv_std.iter().enumerate() {
                            let range = r * width..(r + 1) * width;
                            let gr = &g[range.clone()];
                            let xr = &xhat[range.clone()];
                            let mean_g = gr.iter().sum::<f64>() / w;
                            let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / w;
                            for k in 0..*width {
                                s[r * width + k] += is * (gr[k] - mean_g - xr[k] * mean_gx);
                            }
                        }
                    });
                }
            }
        }
        Ok(out)
    }

    /// Reverse pass accumulating into `store`; calling it twice doubles the
    /// stored gradients.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.accumulate(&grads);
        Ok(())
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
