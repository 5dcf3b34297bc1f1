//! Minimal reverse-mode autodiff over f32 `ndarray` tensors.
//!
//! A [`Graph`] is a per-forward-pass tape: every op appends a node holding
//! its value, and [`Graph::backward`] walks the tape in reverse, routing
//! parameter gradients into the shared [`ParamStore`]. Everything is
//! single-threaded and allocation-ordered, so runs are bit-reproducible.

mod ops;
mod params;

pub use ops::softplus_stable_f64 as softplus_f64;
pub use ops::PadMode;
pub use params::{Init, ParamId, ParamStore};

use ndarray::{ArrayD, Ix2, IxDyn};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f32),
    /// Matrix [r, c] plus a broadcast row vector [c].
    AddRow(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f32,
    },
    Reshape(NodeId),
    Transpose2(NodeId),
    NarrowCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<NodeId>),
    SumAll(NodeId),
    AddMany(Vec<NodeId>),
    MeanMany(Vec<NodeId>),
    L2Normalize(NodeId),
    Distance(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: PadMode,
    },
}

struct Node {
    value: ArrayD<f32>,
    op: Op,
}

/// Forward tape. Values are computed eagerly as nodes are appended.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: ArrayD<f32>, op: Op) -> NodeId {
        // Keep every node C-contiguous so reshapes stay O(1)-safe.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f32> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f32 {
        let v = &self.nodes[id].value;
        debug_assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        *v.first().expect("scalar node")
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    // ---- leaves ----

    pub fn constant(&mut self, value: ArrayD<f32>) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn scalar_const(&mut self, v: f32) -> NodeId {
        self.push(ArrayD::from_elem(IxDyn(&[]), v), Op::Const)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f32) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(ops::sigmoid_stable);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(ops::softplus_stable_f32);
        self.push(v, Op::Softplus(a))
    }

    // ---- matrix ops ----

    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> NodeId {
        let mv = as2(&self.nodes[m].value);
        let rv = &self.nodes[row].value;
        assert_eq!(rv.ndim(), 1, "add_row rhs must be 1-d");
        assert_eq!(mv.ncols(), rv.len(), "add_row width mismatch");
        let mut out = mv.to_owned();
        for mut r in out.rows_mut() {
            for (o, b) in r.iter_mut().zip(rv.iter()) {
                *o += *b;
            }
        }
        self.push(out.into_dyn(), Op::AddRow(m, row))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = as2(&self.nodes[a].value);
        let bv = as2(&self.nodes[b].value);
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dim mismatch");
        let out = av.dot(&bv);
        self.push(out.into_dyn(), Op::Matmul(a, b))
    }

    pub fn transpose2(&mut self, a: NodeId) -> NodeId {
        let v = as2(&self.nodes[a].value).t().to_owned();
        self.push(v.into_dyn(), Op::Transpose2(a))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let n: usize = shape.iter().product();
        assert_eq!(self.nodes[a].value.len(), n, "reshape element count");
        let v = self.nodes[a]
            .value
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("contiguous reshape");
        self.push(v, Op::Reshape(a))
    }

    pub fn narrow_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = as2(&self.nodes[x].value);
        assert!(start + len <= xv.ncols(), "narrow_cols out of range");
        let v = xv.slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(v.into_dyn(), Op::NarrowCols { x, start, len })
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty());
        let rows = as2(&self.nodes[parts[0]].value).nrows();
        let total: usize = parts
            .iter()
            .map(|&p| {
                let v = as2(&self.nodes[p].value);
                assert_eq!(v.nrows(), rows, "concat_cols row mismatch");
                v.ncols()
            })
            .sum();
        let mut out = ndarray::Array2::<f32>::zeros((rows, total));
        let mut at = 0;
        for &p in &parts {
            let v = as2(&self.nodes[p].value);
            out.slice_mut(ndarray::s![.., at..at + v.ncols()])
                .assign(&v);
            at += v.ncols();
        }
        self.push(out.into_dyn(), Op::ConcatCols(parts))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = ops::softmax_rows(&as2(&self.nodes[a].value).to_owned());
        self.push(v.into_dyn(), Op::SoftmaxRows(a))
    }

    pub fn layer_norm_rows(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f32) -> NodeId {
        let xv = as2(&self.nodes[x].value).to_owned();
        let g = &self.nodes[gamma].value;
        let b = &self.nodes[beta].value;
        assert_eq!(g.len(), xv.ncols(), "layer_norm gamma width");
        assert_eq!(b.len(), xv.ncols(), "layer_norm beta width");
        let v = ops::layer_norm_rows(&xv, g, b, eps);
        self.push(
            v.into_dyn(),
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                eps,
            },
        )
    }

    /// x [rows, in] * w [in, out] + b [out]
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let mm = self.matmul(x, w);
        self.add_row(mm, b)
    }

    // ---- reductions & vector ops ----

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        // f64 accumulation: scalar readouts feed finite-difference checks,
        // so a single final rounding matters.
        let s = self.nodes[a].value.iter().map(|v| *v as f64).sum::<f64>();
        self.push(ArrayD::from_elem(IxDyn(&[]), s as f32), Op::SumAll(a))
    }

    pub fn add_many(&mut self, parts: Vec<NodeId>) -> NodeId {
        let acc = self.accumulate_parts(&parts, 1.0);
        self.push(acc, Op::AddMany(parts))
    }

    pub fn mean_many(&mut self, parts: Vec<NodeId>) -> NodeId {
        let scale = 1.0 / parts.len() as f64;
        let acc = self.accumulate_parts(&parts, scale);
        self.push(acc, Op::MeanMany(parts))
    }

    fn accumulate_parts(&self, parts: &[NodeId], scale: f64) -> ArrayD<f32> {
        assert!(!parts.is_empty());
        let shape = self.shape(parts[0]).to_vec();
        // f64 accumulation, one rounding per element.
        let mut acc = vec![0.0f64; self.nodes[parts[0]].value.len()];
        for &p in parts {
            assert_eq!(self.shape(p), &shape[..], "reduction shape mismatch");
            for (slot, v) in acc.iter_mut().zip(self.nodes[p].value.iter()) {
                *slot += *v as f64;
            }
        }
        ArrayD::from_shape_vec(
            IxDyn(&shape),
            acc.into_iter().map(|v| (v * scale) as f32).collect(),
        )
        .expect("reduction shape")
    }

    /// L2-normalize a 1-d vector; safe for tiny norms via an epsilon floor.
    pub fn l2_normalize(&mut self, a: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.ndim(), 1, "l2_normalize wants 1-d");
        let v = &self.nodes[a].value;
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
        let out = v.mapv(|x| x / norm);
        self.push(out, Op::L2Normalize(a))
    }

    /// Euclidean distance of two equally sized 1-d vectors; scalar output.
    /// Gradient is defined as zero at coincident inputs.
    pub fn distance(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "distance shape mismatch");
        assert_eq!(self.nodes[a].value.ndim(), 1, "distance wants 1-d");
        let d = self.nodes[a]
            .value
            .iter()
            .zip(self.nodes[b].value.iter())
            .map(|(x, y)| {
                let t = *x as f64 - *y as f64;
                t * t
            })
            .sum::<f64>()
            .sqrt() as f32;
        self.push(ArrayD::from_elem(IxDyn(&[]), d), Op::Distance(a, b))
    }

    /// 2-d convolution: input [Cin, H, W], weight [Cout, Cin, k, k] (odd k),
    /// bias [Cout], "same" padding before the stride.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: PadMode,
    ) -> NodeId {
        let x = &self.nodes[input].value;
        let w = &self.nodes[weight].value;
        let b = &self.nodes[bias].value;
        let out = ops::conv2d_forward(x, w, b, stride, pad);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
        )
    }

    // ---- backward ----

    /// Reverse pass from a scalar loss node. Parameter gradients accumulate
    /// into `store`; call `store.zero_grads()` between steps.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) {
        let _ = self.run_backward(loss, Some(store));
    }

    /// Gradient of `loss` with respect to any node, for tests and checks.
    pub fn grad_of(&mut self, loss: NodeId, wrt: NodeId) -> ArrayD<f32> {
        let mut grads = self.run_backward(loss, None);
        grads[wrt]
            .take()
            .unwrap_or_else(|| ArrayD::zeros(self.nodes[wrt].value.raw_dim()))
    }

    fn run_backward(
        &self,
        loss: NodeId,
        mut store: Option<&mut ParamStore>,
    ) -> Vec<Option<ArrayD<f32>>> {
        assert_eq!(self.nodes[loss].value.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<ArrayD<f32>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(ArrayD::from_elem(self.nodes[loss].value.raw_dim(), 1.0));

        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let op = self.nodes[id].op.clone();
            match op {
                Op::Const => {}
                Op::Param(pid) => {
                    if let Some(store) = store.as_deref_mut() {
                        store.accumulate_grad(pid, &g);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g.mapv(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b].value;
                    let gb = &g * &self.nodes[a].value;
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads, a, g.mapv(|v| v * k));
                }
                Op::AddRow(m, row) => {
                    let g2 = as2(&g);
                    let col_sums = g2.sum_axis(ndarray::Axis(0));
                    accumulate(&mut grads, m, g.clone());
                    accumulate(&mut grads, row, col_sums.into_dyn());
                }
                Op::Matmul(a, b) => {
                    let g2 = as2(&g);
                    let av = as2(&self.nodes[a].value);
                    let bv = as2(&self.nodes[b].value);
                    let ga = g2.dot(&bv.t());
                    let gb = av.t().dot(&g2);
                    accumulate(&mut grads, a, ga.into_dyn());
                    accumulate(&mut grads, b, gb.into_dyn());
                }
                Op::Relu(a) => {
                    let mask = self.nodes[a]
                        .value
                        .mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, a, &g * &mask);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[id].value;
                    let dg = y.mapv(|s| s * (1.0 - s));
                    accumulate(&mut grads, a, &g * &dg);
                }
                Op::Softplus(a) => {
                    let dg = self.nodes[a].value.mapv(ops::sigmoid_stable);
                    accumulate(&mut grads, a, &g * &dg);
                }
                Op::SoftmaxRows(a) => {
                    let y = as2(&self.nodes[id].value);
                    let g2 = as2(&g);
                    let mut out = y.to_owned();
                    for (mut orow, (yrow, grow)) in out
                        .rows_mut()
                        .into_iter()
                        .zip(y.rows().into_iter().zip(g2.rows()))
                    {
                        let dot: f32 = yrow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                        for ((o, y), g) in orow.iter_mut().zip(yrow.iter()).zip(grow.iter()) {
                            *o = y * (g - dot);
                        }
                    }
                    accumulate(&mut grads, a, out.into_dyn());
                }
                Op::LayerNormRows {
                    x,
                    gamma,
                    beta,
                    eps,
                } => {
                    let (gx, gg, gb) = ops::layer_norm_rows_backward(
                        &as2(&self.nodes[x].value).to_owned(),
                        &self.nodes[gamma].value,
                        &as2(&g).to_owned(),
                        eps,
                    );
                    accumulate(&mut grads, x, gx.into_dyn());
                    accumulate(&mut grads, gamma, gg.into_dyn());
                    accumulate(&mut grads, beta, gb.into_dyn());
                }
                Op::Reshape(a) => {
                    let g = if g.is_standard_layout() {
                        g
                    } else {
                        g.as_standard_layout().into_owned()
                    };
                    let back = g
                        .into_shape_with_order(self.nodes[a].value.raw_dim())
                        .expect("reshape backward");
                    accumulate(&mut grads, a, back);
                }
                Op::Transpose2(a) => {
                    let back = as2(&g).t().to_owned();
                    accumulate(&mut grads, a, back.into_dyn());
                }
                Op::NarrowCols { x, start, len } => {
                    let xv = as2(&self.nodes[x].value);
                    let mut full = ndarray::Array2::<f32>::zeros((xv.nrows(), xv.ncols()));
                    full.slice_mut(ndarray::s![.., start..start + len])
                        .assign(&as2(&g));
                    accumulate(&mut grads, x, full.into_dyn());
                }
                Op::ConcatCols(parts) => {
                    let g2 = as2(&g);
                    let mut at = 0;
                    for &p in &parts {
                        let w = as2(&self.nodes[p].value).ncols();
                        let slice = g2.slice(ndarray::s![.., at..at + w]).to_owned();
                        accumulate(&mut grads, p, slice.into_dyn());
                        at += w;
                    }
                }
                Op::SumAll(a) => {
                    let gv = *g.first().expect("scalar grad");
                    let back = ArrayD::from_elem(self.nodes[a].value.raw_dim(), gv);
                    accumulate(&mut grads, a, back);
                }
                Op::AddMany(parts) => {
                    for &p in &parts {
                        accumulate(&mut grads, p, g.clone());
                    }
                }
                Op::MeanMany(parts) => {
                    let k = parts.len() as f32;
                    let gp = g.mapv(|v| v / k);
                    for &p in &parts {
                        accumulate(&mut grads, p, gp.clone());
                    }
                }
                Op::L2Normalize(a) => {
                    let x = &self.nodes[a].value;
                    let norm = x.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
                    let y = &self.nodes[id].value;
                    let dot: f32 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                    let back = ndarray::Zip::from(&g)
                        .and(y)
                        .map_collect(|gv, yv| (gv - yv * dot) / norm);
                    accumulate(&mut grads, a, back);
                }
                Op::Distance(a, b) => {
                    let d = *self.nodes[id].value.first().expect("scalar");
                    if d > 1e-12 {
                        let gv = *g.first().expect("scalar grad");
                        let scale = gv / d;
                        let diff = &self.nodes[a].value - &self.nodes[b].value;
                        accumulate(&mut grads, a, diff.mapv(|v| v * scale));
                        accumulate(&mut grads, b, diff.mapv(|v| -v * scale));
                    }
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let (gx, gw, gb) = ops::conv2d_backward(
                        &self.nodes[input].value,
                        &self.nodes[weight].value,
                        &g,
                        stride,
                        pad,
                    );
                    accumulate(&mut grads, input, gx);
                    accumulate(&mut grads, weight, gw);
                    accumulate(&mut grads, bias, gb);
                }
            }
        }
        grads
    }
}

fn as2(v: &ArrayD<f32>) -> ndarray::ArrayView2<'_, f32> {
    v.view().into_dimensionality::<Ix2>().expect("2-d value")
}

fn accumulate(grads: &mut [Option<ArrayD<f32>>], id: NodeId, g: ArrayD<f32>) {
    match &mut grads[id] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
