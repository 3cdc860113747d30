//! Define-by-run computation graph.
//!
//! Every operation on a [`Graph`] evaluates eagerly and appends a node to the
//! tape. Node ids are assigned in execution order, so the tape is always in
//! topological order and the reverse pass is a single backwards sweep.

use std::cell::{Ref, RefCell};

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::special;
use crate::tensor::{numel, Params, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        out_channels: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    SumAll(Var),
    MeanAll(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Abs(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Erf(Var),
    Cumsum {
        x: Var,
        axis: usize,
    },
    ClampMin {
        x: Var,
        min: f64,
    },
    Select {
        mask: Vec<bool>,
        a: Var,
        b: Var,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Upsample2x(Var),
}

pub(crate) struct Node {
    pub value: Vec<f64>,
    pub shape: Vec<usize>,
    pub op: Op,
    pub requires_grad: bool,
}

/// A tape of recorded operations.
///
/// Graphs are single-threaded; independent graphs may be evaluated on
/// separate threads.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&self, tensor: &Tensor) -> Var {
        self.push(
            tensor.data().to_vec(),
            tensor.shape().to_vec(),
            Op::Leaf,
            true,
        )
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, tensor: &Tensor) -> Var {
        self.push(
            tensor.data().to_vec(),
            tensor.shape().to_vec(),
            Op::Leaf,
            false,
        )
    }

    pub fn constant_from(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(TensorError::contract(
                "constant",
                format!("shape {shape:?} does not hold {} values", data.len()),
            ));
        }
        Ok(self.push(data, shape, Op::Leaf, false))
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.push(vec![value], vec![], Op::Leaf, false)
    }

    /// Binds every parameter as a differentiable leaf, in parameter order.
    pub fn bind(&self, params: &Params) -> Vec<Var> {
        params.iter().map(|(_, _, t)| self.leaf(t)).collect()
    }

    /// Binds every parameter as a constant, for gradient-free evaluation.
    pub fn bind_frozen(&self, params: &Params) -> Vec<Var> {
        params.iter().map(|(_, _, t)| self.constant(t)).collect()
    }

    /// Copy of a node's values.
    pub fn value(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Borrowed view of a node's values.
    pub fn value_ref(&self, v: Var) -> Ref<'_, [f64]> {
        Ref::map(self.nodes.borrow(), |n| n[v.0].value.as_slice())
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        Tensor::new(nodes[v.0].shape.clone(), nodes[v.0].value.clone())
            .expect("node shape and value agree")
    }

    /// The single value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.0].value.len(), 1);
        nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Records a copy of `v` cut off from the gradient path.
    pub fn detach(&self, v: Var) -> Var {
        let (value, shape) = {
            let nodes = self.nodes.borrow();
            (nodes[v.0].value.clone(), nodes[v.0].shape.clone())
        };
        self.push(value, shape, Op::Leaf, false)
    }

    // ---- elementwise binary ----------------------------------------------

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (value, shape) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            let shape = kernels::broadcast_shape(&na.shape, &nb.shape)
                .ok_or_else(|| TensorError::shapes(name, &na.shape, &nb.shape))?;
            let mut out = vec![0.0; numel(&shape)];
            kernels::for_each_broadcast(&shape, &na.shape, &nb.shape, |o, ia, ib| {
                out[o] = f(na.value[ia], nb.value[ib]);
            });
            (out, shape)
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, shape, op, rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        if self.value_ref(b).iter().any(|&y| y == 0.0) {
            return Err(TensorError::domain("div", "division by zero"));
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (value, shape) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            (n.value.iter().map(|&v| f(v)).collect(), n.shape.clone())
        };
        let rg = self.rg(&[x]);
        self.push(value, shape, op, rg)
    }

    pub fn add_scalar(&self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn mul_scalar(&self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::MulScalar(x, s))
    }

    pub fn neg(&self, x: Var) -> Var {
        self.mul_scalar(x, -1.0)
    }

    pub fn square(&self, x: Var) -> Var {
        self.mul(x, x).expect("identical shapes")
    }

    // ---- elementwise unary -----------------------------------------------

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value_ref(x).iter().find(|&&v| !(v > 0.0)) {
            return Err(TensorError::domain(
                "log",
                format!("non-positive argument {bad}"),
            ));
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    pub fn sqrt(&self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value_ref(x).iter().find(|&&v| !(v >= 0.0)) {
            return Err(TensorError::domain(
                "sqrt",
                format!("negative argument {bad}"),
            ));
        }
        Ok(self.unary(x, f64::sqrt, Op::Sqrt(x)))
    }

    pub fn abs(&self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Exact GELU, `x * Φ(x)`.
    pub fn gelu(&self, x: Var) -> Var {
        self.unary(x, |v| v * special::normal_cdf(v), Op::Gelu(x))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn erf(&self, x: Var) -> Var {
        self.unary(x, special::erf, Op::Erf(x))
    }

    /// `max(x, min)`; the gradient passes where `x > min`.
    pub fn clamp_min(&self, x: Var, min: f64) -> Var {
        self.unary(x, |v| v.max(min), Op::ClampMin { x, min })
    }

    // ---- linear algebra --------------------------------------------------

    /// `[m,k] x [k,n]`, or batched `[B,m,k] x [B,k,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (value, shape, batch, m, k, n) = {
            let nodes = self.nodes.borrow();
            let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
            let (batch, m, k, k2, n) = match (sa.len(), sb.len()) {
                (2, 2) => (1, sa[0], sa[1], sb[0], sb[1]),
                (3, 3) if sa[0] == sb[0] => (sa[0], sa[1], sa[2], sb[1], sb[2]),
                _ => return Err(TensorError::shapes("matmul", sa, sb)),
            };
            if k != k2 {
                return Err(TensorError::shapes("matmul", sa, sb));
            }
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            let mut out = vec![0.0; batch * m * n];
            for t in 0..batch {
                kernels::gemm_nn(
                    &va[t * m * k..(t + 1) * m * k],
                    &vb[t * k * n..(t + 1) * k * n],
                    &mut out[t * m * n..(t + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            let shape = if sa.len() == 2 {
                vec![m, n]
            } else {
                vec![batch, m, n]
            };
            (out, shape, batch, m, k, n)
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            value,
            shape,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    /// Square-kernel convolution of a `[C,H,W]` map with `[O,C,k,k]` weights
    /// and optional `[O]` bias.
    pub fn conv2d(
        &self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (value, shape, geom, out_channels) = {
            let nodes = self.nodes.borrow();
            let si = &nodes[input.0].shape;
            let sw = &nodes[weight.0].shape;
            if si.len() != 3 || sw.len() != 4 || sw[1] != si[0] || sw[2] != sw[3] {
                return Err(TensorError::shapes("conv2d", si, sw));
            }
            if stride == 0 {
                return Err(TensorError::contract("conv2d", "stride must be positive"));
            }
            let (c, h, w) = (si[0], si[1], si[2]);
            let (o, k) = (sw[0], sw[2]);
            if h + 2 * padding < k || w + 2 * padding < k {
                return Err(TensorError::contract(
                    "conv2d",
                    format!("kernel {k} larger than padded input {h}x{w}"),
                ));
            }
            if let Some(b) = bias {
                let sb = &nodes[b.0].shape;
                if sb.as_slice() != [o] {
                    return Err(TensorError::shapes("conv2d bias", sb, &[o]));
                }
            }
            let geom = ConvGeom {
                channels: c,
                height: h,
                width: w,
                kernel: k,
                stride,
                padding,
                out_h: (h + 2 * padding - k) / stride + 1,
                out_w: (w + 2 * padding - k) / stride + 1,
            };
            let x = &nodes[input.0].value;
            let cols_owned;
            let cols: &[f64] = if geom.is_pointwise() {
                x
            } else {
                cols_owned = kernels::im2col(x, &geom);
                &cols_owned
            };
            let hw = geom.col_cols();
            let mut out = vec![0.0; o * hw];
            if let Some(b) = bias {
                let bv = &nodes[b.0].value;
                for (oc, row) in out.chunks_mut(hw).enumerate() {
                    row.fill(bv[oc]);
                }
            }
            kernels::gemm_nn(
                &nodes[weight.0].value,
                cols,
                &mut out,
                o,
                geom.col_rows(),
                hw,
            );
            (out, vec![o, geom.out_h, geom.out_w], geom, o)
        };
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            value,
            shape,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                out_channels,
            },
            rg,
        ))
    }

    // ---- shape manipulation ----------------------------------------------

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            if numel(&nodes[x.0].shape) != numel(shape) {
                return Err(TensorError::shapes("reshape", &nodes[x.0].shape, shape));
            }
            nodes[x.0].value.clone()
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, shape.to_vec(), Op::Reshape(x), rg))
    }

    /// Reorders axes; output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, x: Var, axes: &[usize]) -> Result<Var> {
        let (value, shape) = {
            let nodes = self.nodes.borrow();
            let s = &nodes[x.0].shape;
            let mut seen = vec![false; s.len()];
            if axes.len() != s.len()
                || axes
                    .iter()
                    .any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true))
            {
                return Err(TensorError::contract(
                    "permute",
                    format!("axes {axes:?} are not a permutation of rank {}", s.len()),
                ));
            }
            let map = kernels::permute_source_index(s, axes);
            let v = &nodes[x.0].value;
            (
                map.iter().map(|&i| v[i]).collect::<Vec<_>>(),
                axes.iter().map(|&a| s[a]).collect::<Vec<_>>(),
            )
        };
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            shape,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn concat(&self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(TensorError::contract("concat", "no inputs"));
        }
        let (value, shape) = {
            let nodes = self.nodes.borrow();
            let first = &nodes[inputs[0].0].shape;
            if axis >= first.len() {
                return Err(TensorError::contract(
                    "concat",
                    format!("axis {axis} out of range for shape {first:?}"),
                ));
            }
            let mut total = 0;
            for v in inputs {
                let s = &nodes[v.0].shape;
                let compatible = s.len() == first.len()
                    && s.iter()
                        .zip(first)
                        .enumerate()
                        .all(|(d, (a, b))| d == axis || a == b);
                if !compatible {
                    return Err(TensorError::shapes("concat", first, s));
                }
                total += s[axis];
            }
            let mut shape = first.clone();
            shape[axis] = total;
            let (outer, _, inner) = kernels::split_axis(&shape, axis);
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for v in inputs {
                    let n = &nodes[v.0];
                    let chunk = n.shape[axis] * inner;
                    out.extend_from_slice(&n.value[o * chunk..(o + 1) * chunk]);
                }
            }
            (out, shape)
        };
        let rg = self.rg(inputs);
        Ok(self.push(
            value,
            shape,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (value, shape) = {
            let nodes = self.nodes.borrow();
            let s = &nodes[x.0].shape;
            if axis >= s.len() || start >= end || end > s[axis] {
                return Err(TensorError::contract(
                    "slice",
                    format!("range {start}..{end} on axis {axis} invalid for shape {s:?}"),
                ));
            }
            let (outer, len, inner) = kernels::split_axis(s, axis);
            let v = &nodes[x.0].value;
            let mut out = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                let base = o * len * inner;
                out.extend_from_slice(&v[base + start * inner..base + end * inner]);
            }
            let mut shape = s.clone();
            shape[axis] = end - start;
            (out, shape)
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, shape, Op::Slice { x, axis, start }, rg))
    }

    // ---- reductions ------------------------------------------------------

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<Vec<usize>> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(TensorError::contract(
                op,
                format!("axis {axis} out of range for shape {s:?}"),
            ));
        }
        Ok(s)
    }

    fn reduce_axis(&self, x: Var, axis: usize, scale: f64, op: Op) -> Result<Var> {
        let s = self.check_axis("reduce", x, axis)?;
        let (outer, len, inner) = kernels::split_axis(&s, axis);
        let value = {
            let v = self.value_ref(x);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &v[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (d, &x) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += x;
                    }
                }
            }
            out.iter_mut().for_each(|d| *d *= scale);
            out
        };
        let mut shape = s;
        shape[axis] = 1;
        let rg = self.rg(&[x]);
        Ok(self.push(value, shape, op, rg))
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, 1.0, Op::SumAxis { x, axis })
    }

    /// Mean along `axis`, keeping it with extent 1.
    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let len = self.check_axis("mean", x, axis)?[axis];
        self.reduce_axis(x, axis, 1.0 / len as f64, Op::MeanAxis { x, axis })
    }

    pub fn sum(&self, x: Var) -> Var {
        let s: f64 = self.value_ref(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(vec![s], vec![], Op::SumAll(x), rg)
    }

    pub fn mean(&self, x: Var) -> Var {
        let (s, n) = {
            let v = self.value_ref(x);
            (v.iter().sum::<f64>(), v.len())
        };
        let rg = self.rg(&[x]);
        self.push(vec![s / n as f64], vec![], Op::MeanAll(x), rg)
    }

    /// Inclusive prefix sum along `axis`.
    pub fn cumsum(&self, x: Var, axis: usize) -> Result<Var> {
        let s = self.check_axis("cumsum", x, axis)?;
        let (outer, len, inner) = kernels::split_axis(&s, axis);
        let value = {
            let v = self.value_ref(x);
            let mut out = v.to_vec();
            for o in 0..outer {
                for l in 1..len {
                    for i in 0..inner {
                        let cur = (o * len + l) * inner + i;
                        out[cur] += out[cur - inner];
                    }
                }
            }
            out
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, s, Op::Cumsum { x, axis }, rg))
    }

    // ---- normalisation ---------------------------------------------------

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let s = self.check_axis("softmax", x, axis)?;
        let (outer, len, inner) = kernels::split_axis(&s, axis);
        let value = {
            let v = self.value_ref(x);
            let mut out = vec![0.0; v.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let max = (0..len).map(|l| v[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for l in 0..len {
                        let e = (v[at(l)] - max).exp();
                        out[at(l)] = e;
                        z += e;
                    }
                    for l in 0..len {
                        out[at(l)] /= z;
                    }
                }
            }
            out
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, s, Op::Softmax { x, axis }, rg))
    }

    /// Normalises each row of the last axis to zero mean and unit variance
    /// (no affine terms).
    pub fn layer_norm(&self, x: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x);
        let Some(&d) = s.last() else {
            return Err(TensorError::contract("layer_norm", "scalar input"));
        };
        let (value, inv_std) = {
            let v = self.value_ref(x);
            let rows = v.len() / d;
            let mut out = vec![0.0; v.len()];
            let mut inv_std = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = &v[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                for (o, x) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *o = (x - mean) * is;
                }
                inv_std.push(is);
            }
            (out, inv_std)
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, s, Op::LayerNorm { x, inv_std }, rg))
    }

    // ---- selection -------------------------------------------------------

    /// Elementwise `mask ? a : b`. The mask is a constant; each element's
    /// gradient flows only into the branch it selected.
    pub fn select(&self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let (value, shape) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            if na.shape != nb.shape || mask.len() != na.value.len() {
                return Err(TensorError::shapes("select", &na.shape, &nb.shape));
            }
            let out = mask
                .iter()
                .zip(na.value.iter().zip(&nb.value))
                .map(|(&m, (&x, &y))| if m { x } else { y })
                .collect();
            (out, na.shape.clone())
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            value,
            shape,
            Op::Select {
                mask: mask.to_vec(),
                a,
                b,
            },
            rg,
        ))
    }

    /// Picks flat elements of `x` by index into a 1-D result.
    pub fn gather(&self, x: Var, index: &[usize]) -> Result<Var> {
        let value = {
            let v = self.value_ref(x);
            if let Some(&bad) = index.iter().find(|&&i| i >= v.len()) {
                return Err(TensorError::contract(
                    "gather",
                    format!("index {bad} out of range for {} elements", v.len()),
                ));
            }
            index.iter().map(|&i| v[i]).collect::<Vec<_>>()
        };
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            vec![index.len()],
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Nearest-neighbour 2x upsampling of a `[C,H,W]` map.
    pub fn upsample2x(&self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(TensorError::contract(
                "upsample2x",
                format!("expected [C,H,W], got {s:?}"),
            ));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let value = {
            let v = self.value_ref(x);
            let mut out = vec![0.0; c * 4 * h * w];
            for ch in 0..c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        out[(ch * 2 * h + y) * 2 * w + xx] = v[(ch * h + y / 2) * w + xx / 2];
                    }
                }
            }
            out
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, vec![c, 2 * h, 2 * w], Op::Upsample2x(x), rg))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
