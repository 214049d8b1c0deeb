//! Dense tensors with a reverse-mode gradient tape.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Operations
//! append a node holding the output value and what backward needs; node order
//! is therefore a topological order, and [`Tape::backward`] walks it once in
//! reverse. Values are `f64` throughout.
//!
//! Shapes are rank 0 (scalars, `[]`), rank 1 (`[n]`) or rank 2 (`[rows, cols]`,
//! row-major). Every forward result is checked for NaN and infinity.

use std::fmt;

use crate::error::{Error, Result};
use crate::geom::DEGENERATE_NORM;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::usage(format!("tensor shape {shape:?} has a zero dimension")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::usage(format!(
                "tensor shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor of shape {shape:?} has non-finite values")));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(vec![], vec![v])
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        self
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::usage(format!("item() on tensor of shape {:?}", self.shape))),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::usage(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    ConcatCols(Var, Var),
    BroadcastRow(Var),
    MeanAll(Var),
    SumAll(Var),
    MaxPoolCols { input: Var, argmax: Vec<usize> },
    CosineRows(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    ProjectPlanes { points: Var, raw: Var, degenerate: Vec<bool> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Relu(_) => "relu",
            Op::ConcatCols(..) => "concat_cols",
            Op::BroadcastRow(_) => "broadcast_row",
            Op::MeanAll(_) => "mean_all",
            Op::SumAll(_) => "sum_all",
            Op::MaxPoolCols { .. } => "maxpool_cols",
            Op::CosineRows(..) => "cosine_sim_rows",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Abs(_) => "abs",
            Op::Square(_) => "square",
            Op::ProjectPlanes { .. } => "project_planes",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    /// True when some requires-grad leaf reaches this node.
    tracked: bool,
}

/// Records one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.nodes.iter().map(|n| (n.op.name(), &n.value.shape)))
            .finish()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::usage(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}

/// `out[m×k] += g[m×n] · bᵀ` where `b` is `k×n`.
fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            *o += dot(grow, brow);
        }
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Gradients are kept for it if it requires them.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let tracked = t.requires_grad;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn param(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?.with_requires_grad(true)))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Count of rows passed through unchanged by each projection, in tape order.
    pub fn degenerate_projections(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match &n.op {
                Op::ProjectPlanes { degenerate, .. } => degenerate.iter().filter(|d| **d).count(),
                _ => 0,
            })
            .sum()
    }

    /// Smallest distance of any ReLU input to its kink, and of any max-pool
    /// column's winner to its runner-up. Finite-difference checks are only
    /// meaningful when this exceeds the step size.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for n in &self.nodes {
            match &n.op {
                Op::Relu(a) => {
                    for v in self.data(*a) {
                        margin = margin.min(v.abs());
                    }
                }
                Op::MaxPoolCols { input, argmax } => {
                    let t = self.value(*input);
                    let (rows, cols) = t.dims2().unwrap_or((1, t.numel()));
                    for (c, &best) in argmax.iter().enumerate() {
                        let top = t.data[best * cols + c];
                        for r in (0..rows).filter(|&r| r != best) {
                            margin = margin.min(top - t.data[r * cols + c]);
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} produced a non-finite value at element {i}",
                op.name()
            )));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value: Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            op,
            tracked,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, v: Var, op: &str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .map_err(|_| Error::usage(format!("{op}: expected a matrix, got shape {:?}", self.shape(v))))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a length-`n` bias (shape `[n]` or `[1, n]`) to every row.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_bias")?;
        let bs = self.shape(b);
        if !(bs == [n] || bs == [1, n]) {
            return Err(shape_err("add_bias", self.shape(a), bs));
        }
        let bias = self.data(b);
        let out: Vec<f64> = self
            .data(a)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
            .collect();
        self.push(vec![m, n], out, Op::AddBias(a, b), &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.data(a).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Relu(a), &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.dims2(a, "concat_cols")?;
        let (m2, q) = self.dims2(b, "concat_cols")?;
        if m != m2 {
            return Err(shape_err("concat_cols", self.shape(a), self.shape(b)));
        }
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&self.data(a)[i * p..(i + 1) * p]);
            out.extend_from_slice(&self.data(b)[i * q..(i + 1) * q]);
        }
        self.push(vec![m, p + q], out, Op::ConcatCols(a, b), &[a, b])
    }

    /// Repeats a `1×n` row `rows` times.
    pub fn broadcast_row(&mut self, v: Var, rows: usize) -> Result<Var> {
        let (one, n) = self.dims2(v, "broadcast_row")?;
        if one != 1 || rows == 0 {
            return Err(Error::usage(format!(
                "broadcast_row: need a 1×n row and rows ≥ 1, got shape {:?} and rows {rows}",
                self.shape(v)
            )));
        }
        let out = self.data(v).repeat(rows);
        self.push(vec![rows, n], out, Op::BroadcastRow(v), &[v])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        self.push(vec![], vec![s], Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.numel() as f64;
        self.push(vec![], vec![s], Op::MeanAll(a), &[a])
    }

    /// Column-wise maximum of an `N×d` matrix. Ties go to the lowest row,
    /// which also receives the whole column gradient.
    pub fn maxpool_cols(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(a, "maxpool_cols")?;
        let d = self.data(a);
        let mut argmax = vec![0usize; cols];
        let mut out = d[..cols].to_vec();
        for r in 1..rows {
            for c in 0..cols {
                let v = d[r * cols + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        self.push(vec![1, cols], out, Op::MaxPoolCols { input: a, argmax }, &[a])
    }

    /// Per-row cosine similarity of two `N×k` matrices, shape `[N]`.
    pub fn cosine_sim_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a, "cosine_sim_rows")?;
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("cosine_sim_rows", self.shape(a), self.shape(b)));
        }
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (ra, rb) = (&da[i * k..(i + 1) * k], &db[i * k..(i + 1) * k]);
            let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na <= 1e-12 || nb <= 1e-12 {
                return Err(Error::usage(format!("cosine_sim_rows: row {i} has zero norm")));
            }
            out.push(ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>() / (na * nb));
        }
        self.push(vec![n], out, Op::CosineRows(a, b), &[a, b])
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(name, self.shape(a), self.shape(b)));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.data(a).iter().map(|&v| f(v)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, &[a])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, |v| v * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, |v| v + k, Op::AddScalar(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, |v| v * v, Op::Square(a))
    }

    /// Projects each row of `points` (`N×3`) onto the plane in the matching
    /// row of `raw` (`N×4`, `(a, c)` not necessarily normalized):
    /// `p̂ = p + (c/‖a‖ − â·p)·â` with `â = a/‖a‖`.
    ///
    /// Rows with `‖a‖ ≤ 1e-8` pass their point through unchanged and
    /// contribute no gradient to `raw`.
    pub fn project_planes(&mut self, points: Var, raw: Var) -> Result<Var> {
        let (n, three) = self.dims2(points, "project_planes")?;
        let (n2, four) = self.dims2(raw, "project_planes")?;
        if three != 3 || four != 4 || n != n2 {
            return Err(shape_err("project_planes", self.shape(points), self.shape(raw)));
        }
        let (p, r) = (self.data(points), self.data(raw));
        let mut out = Vec::with_capacity(n * 3);
        let mut degenerate = vec![false; n];
        for i in 0..n {
            let pi = &p[i * 3..i * 3 + 3];
            let ri = &r[i * 4..i * 4 + 4];
            let s = (ri[0] * ri[0] + ri[1] * ri[1] + ri[2] * ri[2]).sqrt();
            if !(s > DEGENERATE_NORM) {
                degenerate[i] = true;
                out.extend_from_slice(pi);
                continue;
            }
            let a = [ri[0] / s, ri[1] / s, ri[2] / s];
            let d = ri[3] / s - (a[0] * pi[0] + a[1] * pi[1] + a[2] * pi[2]);
            out.extend((0..3).map(|k| pi[k] + d * a[k]));
        }
        let count = degenerate.iter().filter(|d| **d).count();
        if count > 0 {
            log::warn!("{count} degenerate plane row(s) passed through unprojected");
        }
        self.push(vec![n, 3], out, Op::ProjectPlanes { points, raw, degenerate }, &[points, raw])
    }

    fn accumulate(&mut self, v: Var, g: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.tracked {
            return;
        }
        match &mut node.value.grad {
            Some(buf) => {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
            None => node.value.grad = Some(g.to_vec()),
        }
    }

    /// Propagates `d loss / d node` to every tracked node. Gradients
    /// accumulate into existing buffers, so call once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].tracked {
            return Err(Error::usage("loss does not depend on any tensor that requires grad"));
        }
        self.accumulate(loss, &[1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].tracked {
                continue;
            }
            let Some(g) = self.nodes[idx].value.grad.take() else {
                continue;
            };
            self.backprop_node(idx, &g);
            self.nodes[idx].value.grad = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, g: &[f64]) {
        // Borrow the op out of the node while inputs are updated.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape[1];
                if self.nodes[a.0].tracked {
                    let mut ga = vec![0.0; m * k];
                    gemm_nt(g, self.data(*b), &mut ga, m, k, n);
                    self.accumulate(*a, &ga);
                }
                if self.nodes[b.0].tracked {
                    let mut gb = vec![0.0; k * n];
                    gemm_tn(self.data(*a), g, &mut gb, m, k, n);
                    self.accumulate(*b, &gb);
                }
            }
            Op::AddBias(a, b) => {
                self.accumulate(*a, g);
                let n = self.value(*b).numel();
                let mut gb = vec![0.0; n];
                for row in g.chunks_exact(n) {
                    for (o, x) in gb.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                self.accumulate(*b, &gb);
            }
            Op::Relu(a) => {
                let ga: Vec<f64> = self
                    .data(*a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(*a, &ga);
            }
            Op::ConcatCols(a, b) => {
                let (m, p) = self.value(*a).dims2().unwrap();
                let q = self.value(*b).shape[1];
                let mut ga = Vec::with_capacity(m * p);
                let mut gb = Vec::with_capacity(m * q);
                for row in g.chunks_exact(p + q) {
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                self.accumulate(*a, &ga);
                self.accumulate(*b, &gb);
            }
            Op::BroadcastRow(v) => {
                let n = self.value(*v).numel();
                let mut gv = vec![0.0; n];
                for row in g.chunks_exact(n) {
                    for (o, x) in gv.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                self.accumulate(*v, &gv);
            }
            Op::SumAll(a) => {
                let ga = vec![g[0]; self.value(*a).numel()];
                self.accumulate(*a, &ga);
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).numel();
                let ga = vec![g[0] / n as f64; n];
                self.accumulate(*a, &ga);
            }
            Op::MaxPoolCols { input, argmax } => {
                let numel = self.value(*input).numel();
                let cols = argmax.len();
                let mut ga = vec![0.0; numel];
                for (c, &r) in argmax.iter().enumerate() {
                    ga[r * cols + c] = g[c];
                }
                self.accumulate(*input, &ga);
            }
            Op::CosineRows(a, b) => {
                let (n, k) = self.value(*a).dims2().unwrap();
                let (da, db) = (self.data(*a), self.data(*b));
                let mut ga = vec![0.0; n * k];
                let mut gb = vec![0.0; n * k];
                for i in 0..n {
                    let (ra, rb) = (&da[i * k..(i + 1) * k], &db[i * k..(i + 1) * k]);
                    let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let cos = ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
                    // ∂cos/∂a = b/(|a||b|) − cos·a/|a|²
                    for j in 0..k {
                        ga[i * k + j] = g[i] * (rb[j] / (na * nb) - cos * ra[j] / (na * na));
                        gb[i * k + j] = g[i] * (ra[j] / (na * nb) - cos * rb[j] / (nb * nb));
                    }
                }
                self.accumulate(*a, &ga);
                self.accumulate(*b, &gb);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate(*b, &neg);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect();
                self.accumulate(*a, &ga);
                self.accumulate(*b, &gb);
            }
            Op::Scale(a, k) => {
                let ga: Vec<f64> = g.iter().map(|v| v * k).collect();
                self.accumulate(*a, &ga);
            }
            Op::AddScalar(a) => self.accumulate(*a, g),
            Op::Abs(a) => {
                let ga: Vec<f64> = self
                    .data(*a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > 0.0 { gv } else if x < 0.0 { -gv } else { 0.0 })
                    .collect();
                self.accumulate(*a, &ga);
            }
            Op::Square(a) => {
                let ga: Vec<f64> = self.data(*a).iter().zip(g).map(|(&x, &gv)| 2.0 * x * gv).collect();
                self.accumulate(*a, &ga);
            }
            Op::ProjectPlanes { points, raw, degenerate } => {
                let n = degenerate.len();
                let (p, r) = (self.data(*points), self.data(*raw));
                let mut gp = vec![0.0; n * 3];
                let mut gr = vec![0.0; n * 4];
                for i in 0..n {
                    let gi = &g[i * 3..i * 3 + 3];
                    if degenerate[i] {
                        gp[i * 3..i * 3 + 3].copy_from_slice(gi);
                        continue;
                    }
                    let pi = &p[i * 3..i * 3 + 3];
                    let ri = &r[i * 4..i * 4 + 4];
                    let s = (ri[0] * ri[0] + ri[1] * ri[1] + ri[2] * ri[2]).sqrt();
                    let a = [ri[0] / s, ri[1] / s, ri[2] / s];
                    let c = ri[3] / s;
                    let ap = a[0] * pi[0] + a[1] * pi[1] + a[2] * pi[2];
                    let d = c - ap;
                    let ga_dot = a[0] * gi[0] + a[1] * gi[1] + a[2] * gi[2];
                    // p̂ = p + d·â,  d = c − â·p
                    for k in 0..3 {
                        gp[i * 3 + k] = gi[k] - ga_dot * a[k];
                    }
                    // gradients w.r.t. the normalized (â, c)
                    let g_unit: [f64; 3] = std::array::from_fn(|k| d * gi[k] - ga_dot * pi[k]);
                    let g_c = ga_dot;
                    // back through â = a/s, c = r₃/s
                    let gu_dot = g_unit[0] * a[0] + g_unit[1] * a[1] + g_unit[2] * a[2];
                    for k in 0..3 {
                        gr[i * 4 + k] = (g_unit[k] - gu_dot * a[k] - g_c * c * a[k]) / s;
                    }
                    gr[i * 4 + 3] = g_c / s;
                }
                self.accumulate(*points, &gp);
                self.accumulate(*raw, &gr);
            }
        }
        self.nodes[idx].op = op;
    }
}

/// Worst element-wise relative error between the gradients that
/// [`Tape::backward`] produces for `inputs` and central differences
/// `(f(x+h) − f(x−h)) / 2h`.
///
/// `f` builds a scalar loss on a fresh tape from one leaf per input.
/// Relative error is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-7)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
        let loss = f(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (t, v) in inputs.iter().enumerate() {
        let zeros = vec![0.0; v.numel()];
        let analytic = tape.grad(vars[t]).unwrap_or(&zeros).to_vec();
        for e in 0..v.numel() {
            let mut xs = inputs.to_vec();
            xs[t].data[e] = v.data[e] + h;
            let up = eval(&xs)?;
            xs[t].data[e] = v.data[e] - h;
            let down = eval(&xs)?;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[e].abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((analytic[e] - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(r: &mut impl Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = a.dims2().unwrap();
        let n = b.dims2().unwrap().1;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data[i * k + p] * b.data[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let i2 = t.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = t.constant(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = t.matmul(i2, x).unwrap();
        assert_eq!(t.data(y), t.data(x));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (m, k, n) = (r.random_range(1..9), r.random_range(1..9), r.random_range(1..9));
            let a = rand_tensor(&mut r, vec![m, k]);
            let b = rand_tensor(&mut r, vec![k, n]);
            let mut t = Tape::new();
            let (va, vb) = (t.leaf(a.clone()), t.leaf(b.clone()));
            let c = t.matmul(va, vb).unwrap();
            for (x, y) in t.data(c).iter().zip(naive_matmul(&a, &b)) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
        let c = t.constant(vec![3, 3], vec![0.0; 9]).unwrap();
        assert!(t.concat_cols(a, c).is_err());
        assert!(t.add(a, c).is_err());
        let bias = t.constant(vec![2], vec![0.0; 2]).unwrap();
        assert!(t.add_bias(a, bias).is_err());
    }

    #[test]
    fn relu_and_maxpool_examples() {
        let mut t = Tape::new();
        let a = t.constant(vec![2], vec![-1.0, 2.0]).unwrap();
        let r = t.relu(a).unwrap();
        assert_eq!(t.data(r), &[0.0, 2.0]);

        let m = t.constant(vec![2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let p = t.maxpool_cols(m).unwrap();
        assert_eq!(t.data(p), &[3.0, 5.0]);
        assert_eq!(t.shape(p), &[1, 2]);

        let one = t.constant(vec![1, 3], vec![4.0, -1.0, 0.5]).unwrap();
        let p = t.maxpool_cols(one).unwrap();
        assert_eq!(t.data(p), &[4.0, -1.0, 0.5]);
    }

    #[test]
    fn maxpool_matches_scan_and_routes_gradient() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut r, vec![7, 5]);
        let mut t = Tape::new();
        let v = t.leaf(x.clone().with_requires_grad(true));
        let p = t.maxpool_cols(v).unwrap();
        for c in 0..5 {
            let col_max = (0..7).map(|i| x.data[i * 5 + c]).fold(f64::MIN, f64::max);
            assert_eq!(t.data(p)[c], col_max);
        }
        let s = t.sum_all(p).unwrap();
        t.backward(s).unwrap();
        let g = t.grad(v).unwrap();
        for c in 0..5 {
            let nonzero = (0..7).filter(|&i| g[i * 5 + c] != 0.0).count();
            assert_eq!(nonzero, 1);
        }
        let err = grad_check(
            |t, v| {
                let p = t.maxpool_cols(v[0])?;
                let sq = t.square(p)?;
                t.sum_all(sq)
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn maxpool_ties_go_to_first_row() {
        let mut t = Tape::new();
        let v = t.param(vec![3, 1], vec![2.0, 2.0, 1.0]).unwrap();
        let p = t.maxpool_cols(v).unwrap();
        let s = t.sum_all(p).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(v).unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn cosine_examples() {
        let mut t = Tape::new();
        let a = t.constant(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let c = t.cosine_sim_rows(a, a).unwrap();
        for v in t.data(c) {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let na = t.scale(a, -1.0).unwrap();
        let c = t.cosine_sim_rows(a, na).unwrap();
        for v in t.data(c) {
            assert!((v + 1.0).abs() < 1e-15);
        }
        let z = t.constant(vec![2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let err = t.cosine_sim_rows(a, z).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn cosine_matches_scalar_formula_and_gradients() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut r, vec![6, 4]);
        let b = rand_tensor(&mut r, vec![6, 4]);
        let mut t = Tape::new();
        let (va, vb) = (t.leaf(a.clone()), t.leaf(b.clone()));
        let c = t.cosine_sim_rows(va, vb).unwrap();
        for i in 0..6 {
            let (ra, rb) = (a.row(i), b.row(i));
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            let na: f64 = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((t.data(c)[i] - dot / (na * nb)).abs() < 1e-7);
        }
        let err = grad_check(
            |t, v| {
                let c = t.cosine_sim_rows(v[0], v[1])?;
                let s = t.square(c)?;
                t.sum_all(s)
            },
            &[a, b],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn sum_gives_ones_and_mse_closed_form() {
        let mut t = Tape::new();
        let x = t.param(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let s = t.sum_all(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 4]);

        let mut t = Tape::new();
        let xv = [0.3, -0.1, 0.7, 2.0];
        let yv = [0.0, 0.4, 0.2, 1.0];
        let x = t.param(vec![4], xv.to_vec()).unwrap();
        let y = t.constant(vec![4], yv.to_vec()).unwrap();
        let d = t.sub(x, y).unwrap();
        let sq = t.square(d).unwrap();
        let m = t.mean_all(sq).unwrap();
        t.backward(m).unwrap();
        for i in 0..4 {
            assert!((t.grad(x).unwrap()[i] - 2.0 * (xv[i] - yv[i]) / 4.0).abs() < 1e-15);
        }
        assert!(t.grad(y).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(vec![3], vec![1.0; 3]).unwrap();
        let y = t.relu(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Usage(_))));
        let mut t = Tape::new();
        let c = t.constant(vec![], vec![1.0]).unwrap();
        assert!(t.backward(c).is_err());
    }

    #[test]
    fn non_finite_forward_trips() {
        let mut t = Tape::new();
        let x = t.constant(vec![1], vec![1e300]).unwrap();
        let err = t.square(x).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn every_op_passes_grad_check() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let a = rand_tensor(&mut r, vec![5, 3]);
        let w = rand_tensor(&mut r, vec![3, 4]);
        let bias = rand_tensor(&mut r, vec![4]);
        let row = rand_tensor(&mut r, vec![1, 2]);
        let f = |t: &mut Tape, v: &[Var]| -> Result<Var> {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add_bias(h, v[2])?;
            let h2 = t.square(h)?;
            let b = t.broadcast_row(v[3], 5)?;
            let cat = t.concat_cols(h2, b)?;
            let pooled = t.maxpool_cols(cat)?;
            let s1 = t.sum_all(pooled)?;
            let m = t.mul(h, h)?;
            let m = t.add_scalar(m, 0.5)?;
            let m = t.scale(m, 0.3)?;
            let s2 = t.mean_all(m)?;
            let d = t.sub(s1, s2)?;
            let d = t.abs(d)?;
            t.add(d, s2)
        };
        let err = grad_check(f, &[a, w, bias, row], 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn relu_grad_check_away_from_kinks() {
        let mut r = ChaCha8Rng::seed_from_u64(10);
        let mut x = rand_tensor(&mut r, vec![4, 4]);
        for v in x.data_mut() {
            if v.abs() < 1e-2 {
                *v = 0.5;
            }
        }
        let err = grad_check(
            |t, v| {
                let h = t.relu(v[0])?;
                let h = t.square(h)?;
                t.sum_all(h)
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4);
    }

    #[test]
    fn projection_forward_and_gradient() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let pts = rand_tensor(&mut r, vec![6, 3]);
        let raw = rand_tensor(&mut r, vec![6, 4]);
        let target = rand_tensor(&mut r, vec![6, 3]);
        let mut t = Tape::new();
        let (vp, vr) = (t.leaf(pts.clone()), t.leaf(raw.clone()));
        let q = t.project_planes(vp, vr).unwrap();
        for i in 0..6 {
            let plane = crate::geom::plane_from_raw(std::array::from_fn(|k| raw.row(i)[k])).unwrap();
            let want = crate::geom::project_point(
                crate::geom::Point3::new(pts.row(i)[0], pts.row(i)[1], pts.row(i)[2]),
                &plane,
            );
            for (k, w) in want.to_array().iter().enumerate() {
                assert!((t.data(q)[i * 3 + k] - w).abs() < 1e-12);
            }
        }
        let err = grad_check(
            |t, v| {
                let q = t.project_planes(v[0], v[1])?;
                let tgt = t.constant(vec![6, 3], target.data().to_vec())?;
                let d = t.sub(q, tgt)?;
                let d = t.square(d)?;
                t.mean_all(d)
            },
            &[pts, raw],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn degenerate_projection_rows_pass_through() {
        let mut t = Tape::new();
        let p = t.constant(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let raw = t.param(vec![2, 4], vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0]).unwrap();
        let q = t.project_planes(p, raw).unwrap();
        assert_eq!(t.data(q), &[1.0, 2.0, 3.0, 4.0, 5.0, 0.0]);
        assert_eq!(t.degenerate_projections(), 1);
        let s = t.sum_all(q).unwrap();
        t.backward(s).unwrap();
        assert_eq!(&t.grad(raw).unwrap()[..4], &[0.0; 4]);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut r = ChaCha8Rng::seed_from_u64(12);
            let a = rand_tensor(&mut r, vec![8, 3]);
            let w = rand_tensor(&mut r, vec![3, 6]);
            let mut t = Tape::new();
            let va = t.leaf(a);
            let vw = t.leaf(w.with_requires_grad(true));
            let h = t.matmul(va, vw).unwrap();
            let h = t.relu(h).unwrap();
            let p = t.maxpool_cols(h).unwrap();
            let s = t.sum_all(p).unwrap();
            t.backward(s).unwrap();
            (t.data(s).to_vec(), t.grad(vw).unwrap().to_vec())
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0[0].to_bits(), b.0[0].to_bits());
        assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
