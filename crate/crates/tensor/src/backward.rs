use crate::error::{Result, TensorError};
use crate::graph::{Graph, Node, Op, Var};
use crate::kernels;
use crate::special;

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` is a differentiable
    /// ancestor of the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, or zeros of length `len` when `v` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn acc<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]))
}

impl Graph {
    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if root.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| nodes[v.0].value.as_slice();
    let shp = |v: Var| nodes[v.0].shape.as_slice();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let (sa, sb) = (shp(*a), shp(*b));
            if let Some(ga) = acc(grads, nodes, *a) {
                kernels::for_each_broadcast(&node.shape, sa, sb, |o, ia, _| ga[ia] += g[o]);
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                kernels::for_each_broadcast(&node.shape, sa, sb, |o, _, ib| {
                    gb[ib] += sign * g[o]
                });
            }
        }
        Op::Mul(a, b) => {
            let (sa, sb) = (shp(*a), shp(*b));
            let (va, vb) = (val(*a), val(*b));
            if let Some(ga) = acc(grads, nodes, *a) {
                kernels::for_each_broadcast(&node.shape, sa, sb, |o, ia, ib| {
                    ga[ia] += g[o] * vb[ib]
                });
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                kernels::for_each_broadcast(&node.shape, sa, sb, |o, ia, ib| {
                    gb[ib] += g[o] * va[ia]
                });
            }
        }
        Op::Div(a, b) => {
            let (sa, sb) = (shp(*a), shp(*b));
            let (va, vb) = (val(*a), val(*b));
            if let Some(ga) = acc(grads, nodes, *a) {
                kernels::for_each_broadcast(&node.shape, sa, sb, |o, ia, ib| {
                    ga[ia] += g[o] / vb[ib]
                });
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                kernels::for_each_broadcast(&node.shape, sa, sb, |o, ia, ib| {
                    gb[ib] -= g[o] * va[ia] / (vb[ib] * vb[ib])
                });
            }
        }
        Op::AddScalar(x) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
            }
        }
        Op::MulScalar(x, s) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &u)| *d += s * u);
            }
        }
        Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
        } => {
            let (m, k, n) = (*m, *k, *n);
            let (va, vb) = (val(*a), val(*b));
            if let Some(ga) = acc(grads, nodes, *a) {
                for t in 0..*batch {
                    kernels::gemm_nt(
                        &g[t * m * n..(t + 1) * m * n],
                        &vb[t * k * n..(t + 1) * k * n],
                        &mut ga[t * m * k..(t + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for t in 0..*batch {
                    kernels::gemm_tn(
                        &va[t * m * k..(t + 1) * m * k],
                        &g[t * m * n..(t + 1) * m * n],
                        &mut gb[t * k * n..(t + 1) * k * n],
                        k,
                        m,
                        n,
                    );
                }
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
            out_channels,
        } => {
            let hw = geom.col_cols();
            let rows = geom.col_rows();
            let o = *out_channels;
            if let Some(b) = bias {
                if let Some(gb) = acc(grads, nodes, *b) {
                    for (oc, row) in g.chunks(hw).enumerate() {
                        gb[oc] += row.iter().sum::<f64>();
                    }
                }
            }
            let x = val(*input);
            let need_w = nodes[weight.0].requires_grad;
            if need_w {
                let cols_owned;
                let cols: &[f64] = if geom.is_pointwise() {
                    x
                } else {
                    cols_owned = kernels::im2col(x, geom);
                    &cols_owned
                };
                let gw = acc(grads, nodes, *weight).expect("weight requires grad");
                kernels::gemm_nt(g, cols, gw, o, hw, rows);
            }
            if nodes[input.0].requires_grad {
                let w = val(*weight);
                if geom.is_pointwise() {
                    let gx = acc(grads, nodes, *input).expect("input requires grad");
                    kernels::gemm_tn(w, g, gx, rows, o, hw);
                } else {
                    let mut dcols = vec![0.0; rows * hw];
                    kernels::gemm_tn(w, g, &mut dcols, rows, o, hw);
                    let gx = acc(grads, nodes, *input).expect("input requires grad");
                    kernels::col2im_add(&dcols, geom, gx);
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
            }
        }
        Op::Permute { x, axes } => {
            if let Some(gx) = acc(grads, nodes, *x) {
                let map = kernels::permute_source_index(shp(*x), axes);
                for (o, &src) in map.iter().enumerate() {
                    gx[src] += g[o];
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = kernels::split_axis(&node.shape, *axis);
            let mut offset = 0;
            for o in 0..outer {
                for v in inputs {
                    let chunk = nodes[v.0].shape[*axis] * inner;
                    if let Some(gv) = acc(grads, nodes, *v) {
                        for (d, &s) in gv[o * chunk..(o + 1) * chunk]
                            .iter_mut()
                            .zip(&g[offset..offset + chunk])
                        {
                            *d += s;
                        }
                    }
                    offset += chunk;
                }
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, len, inner) = kernels::split_axis(shp(*x), *axis);
            let out_len = node.shape[*axis];
            if let Some(gx) = acc(grads, nodes, *x) {
                for o in 0..outer {
                    let dst = o * len * inner + start * inner;
                    let src = o * out_len * inner;
                    for i in 0..out_len * inner {
                        gx[dst + i] += g[src + i];
                    }
                }
            }
        }
        Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
            let (outer, len, inner) = kernels::split_axis(shp(*x), *axis);
            let scale = if matches!(node.op, Op::MeanAxis { .. }) {
                1.0 / len as f64
            } else {
                1.0
            };
            if let Some(gx) = acc(grads, nodes, *x) {
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            gx[(o * len + l) * inner + i] += scale * g[o * inner + i];
                        }
                    }
                }
            }
        }
        Op::SumAll(x) | Op::MeanAll(x) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                let scale = if matches!(node.op, Op::MeanAll(_)) {
                    1.0 / gx.len() as f64
                } else {
                    1.0
                };
                let s = g[0] * scale;
                gx.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::Exp(x) => unary(grads, nodes, *x, g, |_, y| y, &node.value),
        Op::Log(x) => unary(grads, nodes, *x, g, |x, _| 1.0 / x, &node.value),
        Op::Sqrt(x) => unary(grads, nodes, *x, g, |_, y| 0.5 / y, &node.value),
        Op::Abs(x) => unary(
            grads,
            nodes,
            *x,
            g,
            |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
            &node.value,
        ),
        Op::Relu(x) => unary(
            grads,
            nodes,
            *x,
            g,
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
            &node.value,
        ),
        Op::Gelu(x) => unary(
            grads,
            nodes,
            *x,
            g,
            |x, _| special::normal_cdf(x) + x * special::normal_pdf(x),
            &node.value,
        ),
        Op::Sigmoid(x) => unary(grads, nodes, *x, g, |_, y| y * (1.0 - y), &node.value),
        Op::Erf(x) => unary(
            grads,
            nodes,
            *x,
            g,
            |x, _| special::erf_derivative(x),
            &node.value,
        ),
        Op::ClampMin { x, min } => {
            let min = *min;
            unary(
                grads,
                nodes,
                *x,
                g,
                |x, _| if x > min { 1.0 } else { 0.0 },
                &node.value,
            )
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = kernels::split_axis(&node.shape, *axis);
            let y = &node.value;
            if let Some(gx) = acc(grads, nodes, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] += y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, inv_std } => {
            let d = *node.shape.last().expect("rank >= 1");
            let y = &node.value;
            if let Some(gx) = acc(grads, nodes, *x) {
                for (r, &is) in inv_std.iter().enumerate() {
                    let gy = &g[r * d..(r + 1) * d];
                    let yr = &y[r * d..(r + 1) * d];
                    let mean_g = gy.iter().sum::<f64>() / d as f64;
                    let mean_gy = gy.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] += is * (gy[j] - mean_g - yr[j] * mean_gy);
                    }
                }
            }
        }
        Op::Cumsum { x, axis } => {
            let (outer, len, inner) = kernels::split_axis(&node.shape, *axis);
            if let Some(gx) = acc(grads, nodes, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let mut run = 0.0;
                        for l in (0..len).rev() {
                            let at = (o * len + l) * inner + i;
                            run += g[at];
                            gx[at] += run;
                        }
                    }
                }
            }
        }
        Op::Select { mask, a, b } => {
            if let Some(ga) = acc(grads, nodes, *a) {
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        ga[i] += g[i];
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for (i, &m) in mask.iter().enumerate() {
                    if !m {
                        gb[i] += g[i];
                    }
                }
            }
        }
        Op::Gather { x, index } => {
            if let Some(gx) = acc(grads, nodes, *x) {
                for (o, &i) in index.iter().enumerate() {
                    gx[i] += g[o];
                }
            }
        }
        Op::Upsample2x(x) => {
            let s = shp(*x);
            let (c, h, w) = (s[0], s[1], s[2]);
            if let Some(gx) = acc(grads, nodes, *x) {
                for ch in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
            }
        }
    }
}

/// Elementwise chain rule with a local derivative `f(x, y)`.
fn unary(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    x: Var,
    g: &[f64],
    f: impl Fn(f64, f64) -> f64,
    y: &[f64],
) {
    let xv = nodes[x.0].value.as_slice();
    if let Some(gx) = acc(grads, nodes, x) {
        for i in 0..gx.len() {
            gx[i] += g[i] * f(xv[i], y[i]);
        }
    }
}
