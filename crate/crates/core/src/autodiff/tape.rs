//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation appends one node holding its output value and whatever
//! it needs to propagate gradients. Parents always have smaller ids than
//! their children, so walking the node list backwards is a valid reverse
//! topological order and each node is visited exactly once.

use std::f64::consts::TAU;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { x: usize, w: usize, b: usize },
    Conv1d { x: usize, w: usize, b: usize },
    MaxPool { x: usize, argmax: Vec<usize> },
    PadEdge { x: usize },
    GroupNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        groups: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Silu(usize),
    Relu(usize),
    Sin(usize),
    Cos(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddConst(usize),
    Scale(usize, f64),
    Mean(usize),
    Sum(usize),
    SquaredError(usize, usize),
    SqErrRows { a: usize, target: Vec<f64> },
    Atan2(usize),
    OuterAdd(usize),
    PosEnc { x: usize, bands: usize },
    Interp { grid: usize, x: usize },
    Gather { src: usize, idx: Vec<usize> },
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "gradient lookup on a foreign tape");
        let shape = &self.shapes[v.id];
        match &self.grads[v.id] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        v.tape == self.tape && self.grads[v.id].is_some()
    }
}

/// Recording of a single forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch<T>(op: &'static str, detail: String) -> Result<T> {
    Err(Error::ShapeMismatch { op, detail })
}

/// `c = op(a) * op(b) + beta * c` for row-major operands; `ta`/`tb` select
/// the transposed view of the stored matrix.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: strides describe matrices fully contained in the slices
    // checked above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const CONV_KERNEL: usize = 5;
pub const GROUP_NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable used on a foreign tape");
        &self.nodes[v.id].value
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::Detached);
        }
        Ok(v.id)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        value.check_finite(name)?;
        let id = self.nodes.len();
        self.nodes.push(Node { value, op });
        Ok(Var { tape: self.id, id })
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// `x[B, in] · w[in, out] + b[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (xs, ws, bs) = (self.val(xi).shape(), self.val(wi).shape(), self.val(bi).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return mismatch("dense", format!("x {xs:?}, w {ws:?}, b {bs:?}"));
        }
        let (rows, inp, out) = (xs[0], xs[1], ws[1]);
        let mut y = vec![0.0; rows * out];
        for r in 0..rows {
            y[r * out..(r + 1) * out].copy_from_slice(self.val(bi).data());
        }
        gemm(rows, inp, out, self.val(xi).data(), false, self.val(wi).data(), false, 1.0, &mut y);
        let value = Tensor::new(vec![rows, out], y)?;
        self.push(value, Op::Dense { x: xi, w: wi, b: bi }, "dense")
    }

    /// Same-padded 1D convolution: `x[B, Cin, L]`, `w[Cout, Cin, 5]`, `b[Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (xs, ws, bs) = (self.val(xi).shape(), self.val(wi).shape(), self.val(bi).shape());
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[1] || ws[2] != CONV_KERNEL || bs != [ws[0]] {
            return mismatch("conv1d", format!("x {xs:?}, w {ws:?}, b {bs:?}"));
        }
        let (batch, cin, len, cout) = (xs[0], xs[1], xs[2], ws[0]);
        let mut y = vec![0.0; batch * cout * len];
        let mut cols = vec![0.0; cin * CONV_KERNEL * len];
        let xd = self.val(xi).data();
        for s in 0..batch {
            im2col(&xd[s * cin * len..(s + 1) * cin * len], cin, len, &mut cols);
            let out = &mut y[s * cout * len..(s + 1) * cout * len];
            for (co, row) in out.chunks_mut(len).enumerate() {
                row.fill(self.val(bi).data()[co]);
            }
            gemm(cout, cin * CONV_KERNEL, len, self.val(wi).data(), false, &cols, false, 1.0, out);
        }
        let value = Tensor::new(vec![batch, cout, len], y)?;
        self.push(value, Op::Conv1d { x: xi, w: wi, b: bi }, "conv1d")
    }

    /// Max pooling with window 2 and stride 2 along the last axis. An odd
    /// trailing element is dropped.
    pub fn maxpool1d(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let xs = self.val(xi).shape().to_vec();
        if xs.len() != 3 || xs[2] < 2 {
            return mismatch("maxpool1d", format!("x {xs:?}"));
        }
        let (rows, len) = (xs[0] * xs[1], xs[2]);
        let half = len / 2;
        let xd = self.val(xi).data();
        let mut y = Vec::with_capacity(rows * half);
        let mut argmax = Vec::with_capacity(rows * half);
        for r in 0..rows {
            for j in 0..half {
                let i0 = r * len + 2 * j;
                let pick = if xd[i0 + 1] > xd[i0] { i0 + 1 } else { i0 };
                y.push(xd[pick]);
                argmax.push(pick);
            }
        }
        let value = Tensor::new(vec![xs[0], xs[1], half], y)?;
        self.push(value, Op::MaxPool { x: xi, argmax }, "maxpool1d")
    }

    /// Appends one copy of the last element along the last axis.
    pub fn pad_edge(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let xs = self.val(xi).shape().to_vec();
        if xs.len() != 3 {
            return mismatch("pad_edge", format!("x {xs:?}"));
        }
        let len = xs[2];
        let mut y = Vec::with_capacity(xs[0] * xs[1] * (len + 1));
        for row in self.val(xi).data().chunks(len) {
            y.extend_from_slice(row);
            y.push(row[len - 1]);
        }
        let value = Tensor::new(vec![xs[0], xs[1], len + 1], y)?;
        self.push(value, Op::PadEdge { x: xi }, "pad_edge")
    }

    /// Group normalization of `x[B, C, L]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (xi, gi, bi) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let xs = self.val(xi).shape().to_vec();
        if xs.len() != 3
            || groups == 0
            || xs[1] % groups != 0
            || self.val(gi).shape() != [xs[1]]
            || self.val(bi).shape() != [xs[1]]
        {
            return mismatch("group_norm", format!("x {xs:?}, groups {groups}"));
        }
        let (batch, ch, len) = (xs[0], xs[1], xs[2]);
        let per = ch / groups * len;
        let xd = self.val(xi).data();
        let (gd, bd) = (self.val(gi).data(), self.val(bi).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = Vec::with_capacity(batch * groups);
        let mut y = vec![0.0; xd.len()];
        for blk in 0..batch * groups {
            let seg = &xd[blk * per..(blk + 1) * per];
            let mean = seg.iter().sum::<f64>() / per as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            let inv = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            inv_std.push(inv);
            for (j, v) in seg.iter().enumerate() {
                let i = blk * per + j;
                let c = (i / len) % ch;
                xhat[i] = (v - mean) * inv;
                y[i] = gd[c] * xhat[i] + bd[c];
            }
        }
        let value = Tensor::new(xs, y)?;
        self.push(
            value,
            Op::GroupNorm { x: xi, gamma: gi, beta: bi, groups, xhat, inv_std },
            "group_norm",
        )
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: fn(usize) -> Op, name: &str) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = self.val(xi);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())?;
        self.push(value, op(xi), name)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |a| a * sigmoid(a), Op::Silu, "silu")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |a| a.max(0.0), Op::Relu, "relu")
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::sin, Op::Sin, "sin")
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::cos, Op::Cos, "cos")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = self.val(xi);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * factor).collect())?;
        self.push(value, Op::Scale(xi, factor), "scale")
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op, name: &'static str) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (self.val(ai), self.val(bi));
        if av.shape() != bv.shape() {
            return mismatch(name, format!("{:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(value, op(ai, bi), name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul, "mul")
    }

    /// Adds a constant (non-differentiable) tensor of the same shape.
    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Result<Var> {
        let ai = self.idx(a)?;
        let av = self.val(ai);
        if av.len() != c.len() {
            return mismatch("add_const", format!("{:?} vs {}", av.shape(), c.len()));
        }
        let data = av.data().iter().zip(c).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(value, Op::AddConst(ai), "add_const")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let v = self.val(ai);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(ai), "mean")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let s = self.val(ai).data().iter().sum::<f64>();
        self.push(Tensor::scalar(s), Op::Sum(ai), "sum")
    }

    /// `Σ (a − b)²` as a scalar.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (self.val(ai), self.val(bi));
        if av.shape() != bv.shape() {
            return mismatch("squared_error", format!("{:?} vs {:?}", av.shape(), bv.shape()));
        }
        let s = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        self.push(Tensor::scalar(s), Op::SquaredError(ai, bi), "squared_error")
    }

    /// Row-wise squared error against a constant target: `a[R, M] -> [R]`.
    pub fn sq_err_rows(&mut self, a: Var, target: &[f64]) -> Result<Var> {
        let ai = self.idx(a)?;
        let av = self.val(ai);
        if av.shape().len() != 2 || av.len() != target.len() {
            return mismatch("sq_err_rows", format!("{:?} vs {}", av.shape(), target.len()));
        }
        let m = av.shape()[1];
        let rows = av
            .data()
            .chunks(m)
            .zip(target.chunks(m))
            .map(|(x, t)| x.iter().zip(t).map(|(p, q)| (p - q) * (p - q)).sum())
            .collect();
        let value = Tensor::from_vec(rows);
        self.push(value, Op::SqErrRows { a: ai, target: target.to_vec() }, "sq_err_rows")
    }

    /// Angle of each row `(u, v)` of `h[B, 2]`, wrapped into `[0, 2π)`.
    pub fn atan2_rows(&mut self, h: Var) -> Result<Var> {
        let hi = self.idx(h)?;
        let hv = self.val(hi);
        if hv.shape().len() != 2 || hv.shape()[1] != 2 {
            return mismatch("atan2_rows", format!("h {:?}", hv.shape()));
        }
        let mut out = Vec::with_capacity(hv.shape()[0]);
        for row in hv.data().chunks(2) {
            let norm = row[0].hypot(row[1]);
            if !(norm >= 1e-8) {
                return Err(Error::DegenerateHead(norm));
            }
            out.push(crate::rotations::wrap_raw(row[1].atan2(row[0])));
        }
        self.push(Tensor::from_vec(out), Op::Atan2(hi), "atan2_rows")
    }

    /// `out[b, j] = a[b] + offsets[j]`.
    pub fn outer_add(&mut self, a: Var, offsets: &[f64]) -> Result<Var> {
        let ai = self.idx(a)?;
        let av = self.val(ai);
        if av.shape().len() != 1 || offsets.is_empty() {
            return mismatch("outer_add", format!("a {:?}", av.shape()));
        }
        let mut out = Vec::with_capacity(av.len() * offsets.len());
        for &x in av.data() {
            out.extend(offsets.iter().map(|o| x + o));
        }
        let value = Tensor::new(vec![av.len(), offsets.len()], out)?;
        self.push(value, Op::OuterAdd(ai), "outer_add")
    }

    /// Periodic encoding `x[P] -> [P, 2L]`: columns `sin(2^l x)` for
    /// `l < L` followed by `cos(2^l x)`.
    pub fn positional_encoding(&mut self, x: Var, bands: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let xv = self.val(xi);
        if xv.shape().len() != 1 || bands == 0 {
            return mismatch("positional_encoding", format!("x {:?}, bands {bands}", xv.shape()));
        }
        let mut out = Vec::with_capacity(xv.len() * 2 * bands);
        for &a in xv.data() {
            encode_row(a, bands, &mut out);
        }
        let value = Tensor::new(vec![xv.len(), 2 * bands], out)?;
        self.push(value, Op::PosEnc { x: xi, bands }, "positional_encoding")
    }

    /// Periodic linear interpolation of `grid[G]` (nodes at `2πk/G`) at `x[P]`.
    pub fn interp_periodic(&mut self, grid: Var, x: Var) -> Result<Var> {
        let (gi, xi) = (self.idx(grid)?, self.idx(x)?);
        let (gv, xv) = (self.val(gi), self.val(xi));
        if gv.shape().len() != 1 || xv.shape().len() != 1 || gv.len() < 2 {
            return mismatch("interp_periodic", format!("grid {:?}, x {:?}", gv.shape(), xv.shape()));
        }
        let g = gv.data();
        let out = xv
            .data()
            .iter()
            .map(|&a| {
                let (i0, i1, f) = interp_nodes(a, g.len());
                (1.0 - f) * g[i0] + f * g[i1]
            })
            .collect();
        self.push(Tensor::from_vec(out), Op::Interp { grid: gi, x: xi }, "interp_periodic")
    }

    /// `out[b] = src[idx[b]]` for a 1D `src`.
    pub fn gather(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let si = self.idx(src)?;
        let sv = self.val(si);
        if sv.shape().len() != 1 || idx.iter().any(|&i| i >= sv.len()) || idx.is_empty() {
            return mismatch("gather", format!("src {:?}", sv.shape()));
        }
        let out = idx.iter().map(|&i| sv.data()[i]).collect();
        self.push(Tensor::from_vec(out), Op::Gather { src: si, idx: idx.to_vec() }, "gather")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.val(xi).clone().reshaped(shape)?;
        self.push(value, Op::Reshape(xi), "reshape")
    }

    /// Propagates `d loss / d node` to every node feeding `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.idx(loss)?;
        let lv = self.val(li);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[li] = Some(vec![1.0]);
        for id in (0..=li).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut acc = |target: usize, f: &dyn Fn(&mut [f64])| {
            let len = self.nodes[target].value.len();
            let slot = grads[target].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let xs = self.val(*x).shape();
                let (rows, inp, out) = (xs[0], xs[1], self.val(*w).shape()[1]);
                let wd = self.val(*w).data();
                let xd = self.val(*x).data();
                acc(*x, &|dx| gemm(rows, out, inp, g, false, wd, true, 1.0, dx));
                acc(*w, &|dw| gemm(inp, rows, out, xd, true, g, false, 1.0, dw));
                acc(*b, &|db| {
                    for row in g.chunks(out) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b } => {
                let xs = self.val(*x).shape();
                let (batch, cin, len) = (xs[0], xs[1], xs[2]);
                let cout = self.val(*w).shape()[0];
                let kk = cin * CONV_KERNEL;
                let xd = self.val(*x).data();
                let wd = self.val(*w).data();
                let mut cols = vec![0.0; kk * len];
                let mut dcols = vec![0.0; kk * len];
                let mut dw_acc = vec![0.0; cout * kk];
                let mut dx_acc = vec![0.0; xd.len()];
                for s in 0..batch {
                    let gs = &g[s * cout * len..(s + 1) * cout * len];
                    im2col(&xd[s * cin * len..(s + 1) * cin * len], cin, len, &mut cols);
                    gemm(cout, len, kk, gs, false, &cols, true, 1.0, &mut dw_acc);
                    gemm(kk, cout, len, wd, true, gs, false, 0.0, &mut dcols);
                    col2im(&dcols, cin, len, &mut dx_acc[s * cin * len..(s + 1) * cin * len]);
                }
                acc(*w, &|dw| add_into(dw, &dw_acc));
                acc(*x, &|dx| add_into(dx, &dx_acc));
                acc(*b, &|db| {
                    for (i, row) in g.chunks(len).enumerate() {
                        db[i % cout] += row.iter().sum::<f64>();
                    }
                });
            }
            Op::MaxPool { x, argmax } => acc(*x, &|dx| {
                for (&i, v) in argmax.iter().zip(g) {
                    dx[i] += v;
                }
            }),
            Op::PadEdge { x } => {
                let len = self.val(*x).shape()[2];
                acc(*x, &|dx| {
                    for (drow, grow) in dx.chunks_mut(len).zip(g.chunks(len + 1)) {
                        add_into(drow, &grow[..len]);
                        drow[len - 1] += grow[len];
                    }
                });
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std } => {
                let xs = self.val(*x).shape();
                let (ch, len) = (xs[1], xs[2]);
                let per = ch / groups * len;
                let gd = self.val(*gamma).data();
                acc(*gamma, &|dg| {
                    for (i, (v, xh)) in g.iter().zip(xhat).enumerate() {
                        dg[(i / len) % ch] += v * xh;
                    }
                });
                acc(*beta, &|db| {
                    for (i, v) in g.iter().enumerate() {
                        db[(i / len) % ch] += v;
                    }
                });
                acc(*x, &|dx| {
                    let n = per as f64;
                    let mut dxhat = vec![0.0; per];
                    for (blk, inv) in inv_std.iter().enumerate() {
                        let base = blk * per;
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..per {
                            let i = base + j;
                            dxhat[j] = g[i] * gd[(i / len) % ch];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xhat[i];
                        }
                        for j in 0..per {
                            let i = base + j;
                            dx[i] += inv / n * (n * dxhat[j] - s1 - xhat[i] * s2);
                        }
                    }
                });
            }
            Op::Silu(x) => {
                let xd = self.val(*x).data();
                acc(*x, &|dx| {
                    for ((d, &a), v) in dx.iter_mut().zip(xd).zip(g) {
                        let s = sigmoid(a);
                        *d += v * (s + a * s * (1.0 - s));
                    }
                });
            }
            Op::Relu(x) => {
                let xd = self.val(*x).data();
                acc(*x, &|dx| {
                    for ((d, &a), v) in dx.iter_mut().zip(xd).zip(g) {
                        if a > 0.0 {
                            *d += v;
                        }
                    }
                });
            }
            Op::Sin(x) => {
                let xd = self.val(*x).data();
                acc(*x, &|dx| {
                    for ((d, &a), v) in dx.iter_mut().zip(xd).zip(g) {
                        *d += v * a.cos();
                    }
                });
            }
            Op::Cos(x) => {
                let xd = self.val(*x).data();
                acc(*x, &|dx| {
                    for ((d, &a), v) in dx.iter_mut().zip(xd).zip(g) {
                        *d -= v * a.sin();
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|da| add_into(da, g));
                acc(*b, &|db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|da| add_into(da, g));
                acc(*b, &|db| {
                    for (d, v) in db.iter_mut().zip(g) {
                        *d -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                acc(*a, &|da| {
                    for ((d, y), v) in da.iter_mut().zip(bd).zip(g) {
                        *d += v * y;
                    }
                });
                acc(*b, &|db| {
                    for ((d, x), v) in db.iter_mut().zip(ad).zip(g) {
                        *d += v * x;
                    }
                });
            }
            Op::AddConst(a) | Op::Reshape(a) => acc(*a, &|da| add_into(da, g)),
            Op::Scale(a, f) => acc(*a, &|da| {
                for (d, v) in da.iter_mut().zip(g) {
                    *d += v * f;
                }
            }),
            Op::Mean(a) => {
                let n = self.val(*a).len() as f64;
                acc(*a, &|da| da.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Sum(a) => acc(*a, &|da| da.iter_mut().for_each(|d| *d += g[0])),
            Op::SquaredError(a, b) => {
                let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                acc(*a, &|da| {
                    for ((d, x), y) in da.iter_mut().zip(ad).zip(bd) {
                        *d += 2.0 * g[0] * (x - y);
                    }
                });
                acc(*b, &|db| {
                    for ((d, x), y) in db.iter_mut().zip(ad).zip(bd) {
                        *d -= 2.0 * g[0] * (x - y);
                    }
                });
            }
            Op::SqErrRows { a, target } => {
                let av = self.val(*a);
                let m = av.shape()[1];
                acc(*a, &|da| {
                    for (i, (d, (x, t))) in da.iter_mut().zip(av.data().iter().zip(target)).enumerate() {
                        *d += 2.0 * g[i / m] * (x - t);
                    }
                });
            }
            Op::Atan2(h) => {
                let hd = self.val(*h).data();
                acc(*h, &|dh| {
                    for (i, v) in g.iter().enumerate() {
                        let (u, w) = (hd[2 * i], hd[2 * i + 1]);
                        let r2 = u * u + w * w;
                        dh[2 * i] -= v * w / r2;
                        dh[2 * i + 1] += v * u / r2;
                    }
                });
            }
            Op::OuterAdd(a) => {
                let m = node.value.shape()[1];
                acc(*a, &|da| {
                    for (d, row) in da.iter_mut().zip(g.chunks(m)) {
                        *d += row.iter().sum::<f64>();
                    }
                });
            }
            Op::PosEnc { x, bands } => {
                let xd = self.val(*x).data();
                let w = 2 * bands;
                acc(*x, &|dx| {
                    for (i, (d, &a)) in dx.iter_mut().zip(xd).enumerate() {
                        let row = &g[i * w..(i + 1) * w];
                        let mut freq = 1.0;
                        for l in 0..*bands {
                            let (s, c) = (freq * a).sin_cos();
                            *d += freq * (row[l] * c - row[bands + l] * s);
                            freq *= 2.0;
                        }
                    }
                });
            }
            Op::Interp { grid, x } => {
                let gv = self.val(*grid).data();
                let xd = self.val(*x).data();
                let n = gv.len();
                acc(*grid, &|dg| {
                    for (&a, v) in xd.iter().zip(g) {
                        let (i0, i1, f) = interp_nodes(a, n);
                        dg[i0] += v * (1.0 - f);
                        dg[i1] += v * f;
                    }
                });
                acc(*x, &|dx| {
                    for ((d, &a), v) in dx.iter_mut().zip(xd).zip(g) {
                        let (i0, i1, _) = interp_nodes(a, n);
                        *d += v * (gv[i1] - gv[i0]) * n as f64 / TAU;
                    }
                });
            }
            Op::Gather { src, idx } => acc(*src, &|ds| {
                for (&i, v) in idx.iter().zip(g) {
                    ds[i] += v;
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn im2col(x: &[f64], cin: usize, len: usize, cols: &mut [f64]) {
    let pad = CONV_KERNEL / 2;
    for ci in 0..cin {
        let xrow = &x[ci * len..(ci + 1) * len];
        for k in 0..CONV_KERNEL {
            let crow = &mut cols[(ci * CONV_KERNEL + k) * len..(ci * CONV_KERNEL + k + 1) * len];
            for (l, c) in crow.iter_mut().enumerate() {
                let src = l + k;
                *c = if src >= pad && src - pad < len { xrow[src - pad] } else { 0.0 };
            }
        }
    }
}

fn col2im(dcols: &[f64], cin: usize, len: usize, dx: &mut [f64]) {
    let pad = CONV_KERNEL / 2;
    for ci in 0..cin {
        for k in 0..CONV_KERNEL {
            let crow = &dcols[(ci * CONV_KERNEL + k) * len..(ci * CONV_KERNEL + k + 1) * len];
            for (l, c) in crow.iter().enumerate() {
                let src = l + k;
                if src >= pad && src - pad < len {
                    dx[ci * len + src - pad] += c;
                }
            }
        }
    }
}

/// Appends the `2 * bands` encoding features of one coordinate.
pub(crate) fn encode_row(a: f64, bands: usize, out: &mut Vec<f64>) {
    let start = out.len();
    out.resize(start + 2 * bands, 0.0);
    let mut freq = 1.0;
    for l in 0..bands {
        let (s, c) = (freq * a).sin_cos();
        out[start + l] = s;
        out[start + bands + l] = c;
        freq *= 2.0;
    }
}

/// Bracketing node indices and fractional weight for periodic interpolation.
pub(crate) fn interp_nodes(x: f64, n: usize) -> (usize, usize, f64) {
    let mut u = x.rem_euclid(TAU) * n as f64 / TAU;
    let r = u.round();
    if (u - r).abs() < 1e-9 {
        u = r;
    }
    let fl = u.floor();
    let i0 = (fl as usize) % n;
    (i0, (i0 + 1) % n, u - fl)
}
