//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Operations
//! append a node and return a [`Var`] handle; [`Graph::backward`] walks the
//! tape in reverse and accumulates vector-Jacobian products. Nodes are
//! appended in topological order, so the reverse index order is a valid
//! reverse topological order.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::util;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Dropout(Var, Vec<f64>),
    SliceCols {
        x: Var,
        lo: usize,
        hi: usize,
    },
    SliceRows {
        x: Var,
        lo: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute3 {
        x: Var,
        perm: [usize; 3],
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    RepeatRows(Var),
    ReverseRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of one forward computation.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    mode: Mode,
    tracking: bool,
    rng: ChaCha8Rng,
}

/// Result of [`Graph::backward`]: gradients of every node that required one.
pub struct Gradients {
    params: BTreeMap<String, Tensor>,
    vars: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.vars.get(&v.0)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}

impl Graph {
    /// A graph that records a trace for [`Graph::backward`]. `seed` drives
    /// dropout masks in train mode.
    pub fn new(mode: Mode, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            mode,
            tracking: true,
            rng: util::rng(seed),
        }
    }

    /// Inference-only graph; `backward` fails with [`Error::NoTrace`].
    pub fn untracked(mode: Mode, seed: u64) -> Self {
        Graph {
            tracking: false,
            ..Graph::new(mode, seed)
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.tracking,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Untracked input (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter into the graph. Repeated calls with the same
    /// name return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Fails with [`Error::NonFinite`] if `v` holds NaN or infinity.
    pub fn check_finite(&self, v: Var, context: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    fn dims2(&self, v: Var, op: &str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .ok_or_else(|| Error::shape(op, format!("expected a matrix, got {:?}", self.shape(v))))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(a).last().unwrap_or(&0);
        if self.shape(bias) != [n] {
            return Err(Error::shape(
                "add_bias",
                format!("input {:?}, bias {:?}", self.shape(a), self.shape(bias)),
            ));
        }
        let bv = self.value(bias).data().to_vec();
        let va = self.value(a);
        let data = va
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(&bv).map(|(x, b)| x + b))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(t, Op::AddBias(a, bias), rg))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let va = self.value(a);
        let t = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().map(|&x| f(x)).collect(),
        )
        .expect("same length");
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    /// Inverted dropout: in train mode each element is zeroed with probability
    /// `p` and survivors are scaled by `1/(1-p)`. Identity in eval mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} not in [0,1)"
            )));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let va = self.value(a);
        let data = va.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Dropout(a, mask), rg))
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "slice_cols")?;
        if lo >= hi || hi > n {
            return Err(Error::shape(
                "slice_cols",
                format!("[{lo},{hi}) of {n} columns"),
            ));
        }
        let va = self.value(a).data();
        let mut data = Vec::with_capacity(m * (hi - lo));
        for i in 0..m {
            data.extend_from_slice(&va[i * n + lo..i * n + hi]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::matrix(m, hi - lo, data),
            Op::SliceCols { x: a, lo, hi },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, lo: usize, hi: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "slice_rows")?;
        if lo >= hi || hi > m {
            return Err(Error::shape(
                "slice_rows",
                format!("[{lo},{hi}) of {m} rows"),
            ));
        }
        let data = self.value(a).data()[lo * n..hi * n].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::matrix(hi - lo, n, data),
            Op::SliceRows { x: a, lo },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let m = self.dims2(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols")?;
            if pm != m {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {m} vs {pm}"),
                ));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::matrix(m, total, data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let n = self.dims2(parts[0], "concat_rows")?.1;
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_rows")?;
            if pn != n {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts {n} vs {pn}"),
                ));
            }
            rows += pm;
        }
        let mut data = Vec::with_capacity(rows * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::matrix(rows, n, data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Mean over the first axis of a matrix: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "mean_rows")?;
        let va = self.value(a).data();
        let mut out = vec![0.0; n];
        for row in va.chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(1, n, out), Op::MeanRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Axis permutation of a rank-3 tensor: output axis `k` is input axis `perm[k]`.
    pub fn permute3(&mut self, a: Var, perm: [usize; 3]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut sorted = perm;
        sorted.sort_unstable();
        if s.len() != 3 || sorted != [0, 1, 2] {
            return Err(Error::shape(
                "permute3",
                format!("shape {s:?}, perm {perm:?}"),
            ));
        }
        let out_shape = [s[perm[0]], s[perm[1]], s[perm[2]]];
        let in_strides = [s[1] * s[2], s[2], 1];
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(src.len());
        for i in 0..out_shape[0] {
            for j in 0..out_shape[1] {
                for k in 0..out_shape[2] {
                    let idx =
                        i * in_strides[perm[0]] + j * in_strides[perm[1]] + k * in_strides[perm[2]];
                    data.push(src[idx]);
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(out_shape.to_vec(), data)?,
            Op::Permute3 { x: a, perm },
            rg,
        ))
    }

    /// 2-D convolution. `x`: `[C_in, H, W]`, `w`: `[C_out, C_in, kH, kW]`,
    /// `b`: `[C_out]`; zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || xs[0] != ws[1] || self.shape(b) != [ws[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("input {xs:?}, weight {ws:?}, bias {:?}", self.shape(b)),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("conv2d", "zero stride"));
        }
        let g = ConvGeom::new(&xs, &ws, stride, pad).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!("input {xs:?} too small for kernel {ws:?}"),
            )
        })?;
        let out = conv2d_forward(
            &g,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::new(vec![g.co, g.oh, g.ow], out)?,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Row lookup into an embedding table `[V, D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape(
                "embedding",
                format!("id {bad} out of vocabulary {v}"),
            ));
        }
        if ids.is_empty() {
            return Err(Error::shape("embedding", "empty id sequence"));
        }
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::matrix(ids.len(), d, data),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// `[1, n] -> [m, n]` by repetition.
    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let (r, n) = self.dims2(a, "repeat_rows")?;
        if r != 1 || m == 0 {
            return Err(Error::shape("repeat_rows", format!("[{r},{n}] x {m}")));
        }
        let row = self.value(a).data().to_vec();
        let data = row.iter().copied().cycle().take(m * n).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(m, n, data), Op::RepeatRows(a), rg))
    }

    pub fn reverse_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "reverse_rows")?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * n);
        for i in (0..m).rev() {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(m, n, data), Op::ReverseRows(a), rg))
    }

    /// Propagates `upstream` (same shape as `output`) back through the tape.
    pub fn backward(&self, output: Var, upstream: &Tensor) -> Result<Gradients> {
        if !self.tracking {
            return Err(Error::NoTrace);
        }
        if upstream.shape() != self.shape(output) {
            return Err(Error::shape(
                "backward",
                format!(
                    "upstream {:?} vs output {:?}",
                    upstream.shape(),
                    self.shape(output)
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(upstream.data().to_vec());
        }
        let mut leaf_grads: HashMap<usize, Vec<f64>> = HashMap::new();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => {
                    leaf_grads.insert(i, g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = nodes[a.0].value.dims2().expect("matrix");
                    let n = nodes[b.0].value.dims2().expect("matrix").1;
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        // ga += g * b^T
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                ga[r * k + p] += dot(grow, brow);
                            }
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        // gb += a^T * g
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let a_rp = av[r * k + p];
                                if a_rp == 0.0 {
                                    continue;
                                }
                                let gbrow = &mut gb[p * n..(p + 1) * n];
                                for (o, x) in gbrow.iter_mut().zip(grow) {
                                    *o += a_rp * x;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        axpy(ga, &g, 1.0);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        axpy(gb, &g, 1.0);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        axpy(ga, &g, 1.0);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        axpy(gb, &g, -1.0);
                    }
                }
                Op::Mul(a, b) => {
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((o, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *o += gi * bi;
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for ((o, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                            *o += gi * ai;
                        }
                    }
                }
                Op::AddBias(a, b) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        axpy(ga, &g, 1.0);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        let n = gb.len();
                        for row in g.chunks(n) {
                            axpy(gb, row, 1.0);
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        axpy(ga, &g, *c);
                    }
                }
                Op::Relu(a) => {
                    let av = nodes[a.0].value.data();
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((o, gi), x) in ga.iter_mut().zip(&g).zip(av) {
                            if *x > 0.0 {
                                *o += gi;
                            }
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((o, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                            *o += gi * yi * (1.0 - yi);
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((o, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                            *o += gi * (1.0 - yi * yi);
                        }
                    }
                }
                Op::Dropout(a, mask) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((o, gi), mi) in ga.iter_mut().zip(&g).zip(mask) {
                            *o += gi * mi;
                        }
                    }
                }
                Op::SliceCols { x, lo, hi } => {
                    let n = nodes[x.0].value.dims2().expect("matrix").1;
                    let w = hi - lo;
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (r, grow) in g.chunks(w).enumerate() {
                            axpy(&mut gx[r * n + lo..r * n + hi], grow, 1.0);
                        }
                    }
                }
                Op::SliceRows { x, lo } => {
                    let n = nodes[x.0].value.dims2().expect("matrix").1;
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        axpy(&mut gx[lo * n..lo * n + g.len()], &g, 1.0);
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.dims2().expect("matrix").1;
                    let mut offset = 0;
                    for p in parts {
                        let w = nodes[p.0].value.dims2().expect("matrix").1;
                        if let Some(gp) = slot(&mut grads, nodes, *p) {
                            for (r, grow) in g.chunks(total).enumerate() {
                                axpy(&mut gp[r * w..(r + 1) * w], &grow[offset..offset + w], 1.0);
                            }
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(gp) = slot(&mut grads, nodes, *p) {
                            axpy(gp, &g[offset..offset + len], 1.0);
                        }
                        offset += len;
                    }
                }
                Op::MeanRows(a) => {
                    let (m, n) = nodes[a.0].value.dims2().expect("matrix");
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        let inv = 1.0 / m as f64;
                        for row in ga.chunks_mut(n) {
                            axpy(row, &g, inv);
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        ga.iter_mut().for_each(|o| *o += g[0]);
                    }
                }
                Op::Mean(a) => {
                    let n = nodes[a.0].value.len() as f64;
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        ga.iter_mut().for_each(|o| *o += g[0] / n);
                    }
                }
                Op::Reshape(a) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        axpy(ga, &g, 1.0);
                    }
                }
                Op::Permute3 { x, perm } => {
                    let s = nodes[x.0].value.shape();
                    let in_strides = [s[1] * s[2], s[2], 1];
                    let os = node.value.shape();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        let mut it = g.iter();
                        for i in 0..os[0] {
                            for j in 0..os[1] {
                                for k in 0..os[2] {
                                    let idx = i * in_strides[perm[0]]
                                        + j * in_strides[perm[1]]
                                        + k * in_strides[perm[2]];
                                    gx[idx] += it.next().expect("gradient length");
                                }
                            }
                        }
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let geom = ConvGeom::new(
                        nodes[x.0].value.shape(),
                        nodes[w.0].value.shape(),
                        *stride,
                        *pad,
                    )
                    .expect("validated in forward");
                    let xv = nodes[x.0].value.data();
                    let wv = nodes[w.0].value.data();
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        let plane = geom.oh * geom.ow;
                        for (o, chunk) in g.chunks(plane).enumerate() {
                            gb[o] += chunk.iter().sum::<f64>();
                        }
                    }
                    if let Some(gw) = slot(&mut grads, nodes, *w) {
                        conv2d_grad_weight(&geom, xv, &g, gw);
                    }
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        conv2d_grad_input(&geom, wv, &g, gx);
                    }
                }
                Op::Embedding { table, ids } => {
                    let d = nodes[table.0].value.dims2().expect("matrix").1;
                    if let Some(gt) = slot(&mut grads, nodes, *table) {
                        for (r, &id) in ids.iter().enumerate() {
                            axpy(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d], 1.0);
                        }
                    }
                }
                Op::RepeatRows(a) => {
                    let n = nodes[a.0].value.len();
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for row in g.chunks(n) {
                            axpy(ga, row, 1.0);
                        }
                    }
                }
                Op::ReverseRows(a) => {
                    let (m, n) = nodes[a.0].value.dims2().expect("matrix");
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for r in 0..m {
                            let src = &g[(m - 1 - r) * n..(m - r) * n];
                            axpy(&mut ga[r * n..(r + 1) * n], src, 1.0);
                        }
                    }
                }
            }
        }

        let mut params = BTreeMap::new();
        let mut vars = HashMap::new();
        let by_index: HashMap<usize, &str> =
            self.params.iter().map(|(k, v)| (v.0, k.as_str())).collect();
        for (i, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let data = leaf_grads
                .remove(&i)
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            let t = Tensor::new(node.value.shape().to_vec(), data)?;
            if let Some(name) = by_index.get(&i) {
                params.insert((*name).to_string(), t.clone());
            }
            vars.insert(i, t);
        }
        Ok(Gradients { params, vars })
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    if nodes[v.0].requires_grad {
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]))
    } else {
        None
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `[m,k] x [k,n]` row-major product.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            axpy(orow, &b[p * n..(p + 1) * n], aip);
        }
    }
    out
}

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: (usize, usize),
    pad: (usize, usize),
}

impl ConvGeom {
    fn new(
        xs: &[usize],
        ws: &[usize],
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Option<Self> {
        let (ci, h, w) = (xs[0], xs[1], xs[2]);
        let (co, kh, kw) = (ws[0], ws[2], ws[3]);
        if h + 2 * pad.0 < kh || w + 2 * pad.1 < kw {
            return None;
        }
        let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
        let ow = (w + 2 * pad.1 - kw) / stride.1 + 1;
        Some(ConvGeom {
            ci,
            h,
            w,
            co,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        })
    }

    /// Output index range along one axis for which `o*stride + k - pad` is in `[0, len)`.
    fn valid(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
        let lo = if k >= pad {
            0
        } else {
            (pad - k).div_ceil(stride)
        };
        // o*stride + k - pad <= len - 1
        let hi = if len + pad < k + 1 {
            0
        } else {
            ((len + pad - k - 1) / stride + 1).min(out_len)
        };
        (lo, hi.max(lo))
    }

    fn rows(&self, i: usize) -> (usize, usize) {
        Self::valid(self.oh, self.h, i, self.stride.0, self.pad.0)
    }

    fn cols(&self, j: usize) -> (usize, usize) {
        Self::valid(self.ow, self.w, j, self.stride.1, self.pad.1)
    }
}

fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.co * plane];
    for o in 0..g.co {
        out[o * plane..(o + 1) * plane].fill(b[o]);
        for c in 0..g.ci {
            for i in 0..g.kh {
                let (ylo, yhi) = g.rows(i);
                for j in 0..g.kw {
                    let wv = w[((o * g.ci + c) * g.kh + i) * g.kw + j];
                    if wv == 0.0 {
                        continue;
                    }
                    let (xlo, xhi) = g.cols(j);
                    for y in ylo..yhi {
                        let iy = y * g.stride.0 + i - g.pad.0;
                        let xrow = &x[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                        let orow = &mut out[o * plane + y * g.ow..o * plane + (y + 1) * g.ow];
                        if g.stride.1 == 1 {
                            let base = j as isize - g.pad.1 as isize;
                            let src = &xrow
                                [(xlo as isize + base) as usize..(xhi as isize + base) as usize];
                            axpy(&mut orow[xlo..xhi], src, wv);
                        } else {
                            for xo in xlo..xhi {
                                orow[xo] += wv * xrow[xo * g.stride.1 + j - g.pad.1];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_grad_weight(g: &ConvGeom, x: &[f64], gout: &[f64], gw: &mut [f64]) {
    let plane = g.oh * g.ow;
    for o in 0..g.co {
        for c in 0..g.ci {
            for i in 0..g.kh {
                let (ylo, yhi) = g.rows(i);
                for j in 0..g.kw {
                    let (xlo, xhi) = g.cols(j);
                    let mut acc = 0.0;
                    for y in ylo..yhi {
                        let iy = y * g.stride.0 + i - g.pad.0;
                        let xrow = &x[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                        let grow = &gout[o * plane + y * g.ow..o * plane + (y + 1) * g.ow];
                        for xo in xlo..xhi {
                            acc += grow[xo] * xrow[xo * g.stride.1 + j - g.pad.1];
                        }
                    }
                    gw[((o * g.ci + c) * g.kh + i) * g.kw + j] += acc;
                }
            }
        }
    }
}

fn conv2d_grad_input(g: &ConvGeom, w: &[f64], gout: &[f64], gx: &mut [f64]) {
    let plane = g.oh * g.ow;
    for o in 0..g.co {
        for c in 0..g.ci {
            for i in 0..g.kh {
                let (ylo, yhi) = g.rows(i);
                for j in 0..g.kw {
                    let wv = w[((o * g.ci + c) * g.kh + i) * g.kw + j];
                    if wv == 0.0 {
                        continue;
                    }
                    let (xlo, xhi) = g.cols(j);
                    for y in ylo..yhi {
                        let iy = y * g.stride.0 + i - g.pad.0;
                        let grow = &gout[o * plane + y * g.ow..o * plane + (y + 1) * g.ow];
                        let xrow = &mut gx[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                        for xo in xlo..xhi {
                            xrow[xo * g.stride.1 + j - g.pad.1] += wv * grow[xo];
                        }
                    }
                }
            }
        }
    }
}
