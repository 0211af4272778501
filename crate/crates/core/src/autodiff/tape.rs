use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// scalar * tensor broadcast
    MulScalar(Var, Var),
    /// matrix + row vector broadcast over rows
    AddRow(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Concat(Vec<Var>),
    Slice {
        src: Var,
        start: usize,
    },
    SliceCols {
        src: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Pow(Var, f64),
    Sqrt(Var),
    Log10(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Dot(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Frame {
        src: Var,
        frame: usize,
        hop: usize,
    },
    OverlapAdd {
        src: Var,
        hop: usize,
        out_len: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation graph. Nodes are stored in topological order,
/// so backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Insert a leaf tensor; `requires_grad` marks trainable parameters.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, op: fn(f64, f64) -> f64, tag: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| op(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, tag, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Broadcast a one-element tensor over `t`.
    pub fn mul_scalar(&mut self, s: Var, t: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Shape("mul_scalar: first operand must be scalar".into()));
        }
        let sv = self.value(s).item();
        let tt = self.value(t);
        let value = Tensor::new(tt.shape().to_vec(), tt.data().iter().map(|&x| sv * x).collect())?;
        let rg = self.rg(s) || self.rg(t);
        Ok(self.push(value, Op::MulScalar(s, t), rg))
    }

    /// Add a row vector to every row of a matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let tm = self.value(m);
        let tr = self.value(row);
        let (r, c) = tm.dims2();
        if tm.shape().len() != 2 || tr.shape() != [c] {
            return Err(Error::Shape(format!(
                "add_row: {:?} + {:?}",
                tm.shape(),
                tr.shape()
            )));
        }
        let mut data = tm.data().to_vec();
        for i in 0..r {
            for (d, &rv) in data[i * c..(i + 1) * c].iter_mut().zip(tr.data()) {
                *d += rv;
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        let rg = self.rg(m) || self.rg(row);
        Ok(self.push(value, Op::AddRow(m, row), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Shape(format!(
                "matmul of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let n = tb.shape()[1];
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), m, k, n, &mut out);
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(Error::Shape(format!("transpose of {:?}", ta.shape())));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ta.data()[i * c + j];
            }
        }
        let value = Tensor::matrix(c, r, out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// Concatenate 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(Error::Shape(format!("concat of rank {:?}", t.shape())));
            }
            data.extend_from_slice(t.data());
            rg |= self.rg(p);
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg))
    }

    /// Contiguous range of a 1-D tensor.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        if t.shape().len() != 1 || start + len > t.numel() {
            return Err(Error::Shape(format!(
                "slice {start}..{} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let value = Tensor::vector(t.data()[start..start + len].to_vec());
        let rg = self.rg(src);
        Ok(self.push(value, Op::Slice { src, start }, rg))
    }

    /// Contiguous column range of a 2-D tensor.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        if t.shape().len() != 2 || start + len > t.shape()[1] {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let value = Tensor::matrix(r, len, data)?;
        let rg = self.rg(src);
        Ok(self.push(value, Op::SliceCols { src, start }, rg))
    }

    fn reduce(&mut self, a: Var, mean: bool) -> Var {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum();
        let v = if mean { s / t.numel() as f64 } else { s };
        let rg = self.rg(a);
        let op = if mean { Op::Mean(a) } else { Op::Sum(a) };
        self.push(Tensor::scalar(v), op, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(a, false)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(a, true)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn pow(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x.powf(k), Op::Pow(a, k))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn log10(&mut self, a: Var) -> Var {
        self.unary(a, f64::log10, Op::Log10(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    /// Add a compile-time constant elementwise.
    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddConst(a))
    }

    /// Dot product of two equal-length 1-D tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 1 || ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "dot of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let v: f64 = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b), rg))
    }

    /// Extract overlapping frames from a 1-D signal into a
    /// `n_frames x frame` matrix.
    pub fn frame(&mut self, src: Var, frame: usize, hop: usize) -> Result<Var> {
        let t = self.value(src);
        let len = t.numel();
        if t.shape().len() != 1 || frame == 0 || hop == 0 || len < frame {
            return Err(Error::Shape(format!(
                "frame({frame}, {hop}) of length {len}"
            )));
        }
        let n_frames = 1 + (len - frame) / hop;
        let mut data = Vec::with_capacity(n_frames * frame);
        for f in 0..n_frames {
            data.extend_from_slice(&t.data()[f * hop..f * hop + frame]);
        }
        let value = Tensor::matrix(n_frames, frame, data)?;
        let rg = self.rg(src);
        Ok(self.push(value, Op::Frame { src, frame, hop }, rg))
    }

    /// Overlap-add synthesis of a frame matrix into a 1-D signal of
    /// `out_len` samples, dividing every sample by its overlap count so an
    /// identity analysis/synthesis path is amplitude-correct. Samples not
    /// covered by any frame stay zero.
    pub fn overlap_add(&mut self, src: Var, hop: usize, out_len: usize) -> Result<Var> {
        let t = self.value(src);
        if t.shape().len() != 2 || hop == 0 || out_len == 0 {
            return Err(Error::Shape(format!(
                "overlap_add(hop={hop}, out_len={out_len}) of {:?}",
                t.shape()
            )));
        }
        let (n_frames, frame) = (t.shape()[0], t.shape()[1]);
        let mut acc = vec![0.0; out_len];
        let mut count = vec![0u32; out_len];
        for f in 0..n_frames {
            for k in 0..frame {
                let pos = f * hop + k;
                if pos < out_len {
                    acc[pos] += t.data()[f * frame + k];
                    count[pos] += 1;
                }
            }
        }
        for (a, &c) in acc.iter_mut().zip(&count) {
            if c > 0 {
                *a /= c as f64;
            }
        }
        let value = Tensor::vector(acc);
        let rg = self.rg(src);
        Ok(self.push(value, Op::OverlapAdd { src, hop, out_len }, rg))
    }

    /// Overlap count per output sample, as used by [`Tape::overlap_add`].
    fn overlap_counts(n_frames: usize, frame: usize, hop: usize, out_len: usize) -> Vec<u32> {
        let mut count = vec![0u32; out_len];
        for f in 0..n_frames {
            for k in 0..frame {
                let pos = f * hop + k;
                if pos < out_len {
                    count[pos] += 1;
                }
            }
        }
        count
    }

    /// Reverse sweep from a scalar root; returns one gradient slot per
    /// node (None where no gradient flows).
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(
            self.value(root).shape().to_vec(),
            vec![1.0],
        )?);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let mut neg = g.clone();
                for v in neg.data_mut() {
                    *v = -*v;
                }
                self.accumulate(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = Tensor::new(
                    ta.shape().to_vec(),
                    g.data().iter().zip(tb.data()).map(|(&gv, &bv)| gv * bv).collect(),
                )?;
                let db = Tensor::new(
                    tb.shape().to_vec(),
                    g.data().iter().zip(ta.data()).map(|(&gv, &av)| gv * av).collect(),
                )?;
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = Tensor::new(
                    ta.shape().to_vec(),
                    g.data().iter().zip(tb.data()).map(|(&gv, &bv)| gv / bv).collect(),
                )?;
                let db = Tensor::new(
                    tb.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(ta.data().iter().zip(tb.data()))
                        .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                        .collect(),
                )?;
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::MulScalar(s, t) => {
                let (ts, tt) = (self.value(*s), self.value(*t));
                let ds: f64 = g.data().iter().zip(tt.data()).map(|(&gv, &tv)| gv * tv).sum();
                self.accumulate(grads, *s, Tensor::new(ts.shape().to_vec(), vec![ds])?);
                let sv = ts.item();
                let dt = Tensor::new(
                    tt.shape().to_vec(),
                    g.data().iter().map(|&gv| gv * sv).collect(),
                )?;
                self.accumulate(grads, *t, dt);
            }
            Op::AddRow(m, row) => {
                self.accumulate(grads, *m, g.clone());
                let c = self.value(*row).numel();
                let mut drow = vec![0.0; c];
                for (i, &gv) in g.data().iter().enumerate() {
                    drow[i % c] += gv;
                }
                self.accumulate(grads, *row, Tensor::vector(drow));
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                // dA = g . B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for kk in 0..k {
                        let brow = &tb.data()[kk * n..(kk + 1) * n];
                        let grow = &g.data()[i * n..(i + 1) * n];
                        da[i * k + kk] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                    }
                }
                // dB = A^T . g
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g.data()[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let av = ta.data()[i * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        let drow = &mut db[kk * n..(kk + 1) * n];
                        for (d, &gv) in drow.iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, k, da)?);
                self.accumulate(grads, *b, Tensor::matrix(k, n, db)?);
            }
            Op::Transpose(a) => {
                let ta = self.value(*a);
                let (r, c) = (ta.shape()[0], ta.shape()[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        da[j * c + i] = g.data()[i * r + j];
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(r, c, da)?);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    let dpart = Tensor::vector(g.data()[offset..offset + len].to_vec());
                    self.accumulate(grads, p, dpart);
                    offset += len;
                }
            }
            Op::Slice { src, start } => {
                let mut dsrc = vec![0.0; self.value(*src).numel()];
                for (k, &gv) in g.data().iter().enumerate() {
                    dsrc[start + k] = gv;
                }
                self.accumulate(grads, *src, Tensor::vector(dsrc));
            }
            Op::SliceCols { src, start } => {
                let t = self.value(*src);
                let (r, c) = (t.shape()[0], t.shape()[1]);
                let len = node.value.shape()[1];
                let mut dsrc = vec![0.0; r * c];
                for i in 0..r {
                    for k in 0..len {
                        dsrc[i * c + start + k] = g.data()[i * len + k];
                    }
                }
                self.accumulate(grads, *src, Tensor::matrix(r, c, dsrc)?);
            }
            Op::Sum(a) => {
                let t = self.value(*a);
                let gv = g.item();
                self.accumulate(
                    grads,
                    *a,
                    Tensor::new(t.shape().to_vec(), vec![gv; t.numel()])?,
                );
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let gv = g.item() / t.numel() as f64;
                self.accumulate(
                    grads,
                    *a,
                    Tensor::new(t.shape().to_vec(), vec![gv; t.numel()])?,
                );
            }
            Op::Pow(a, k) => {
                let t = self.value(*a);
                let da = Tensor::new(
                    t.shape().to_vec(),
                    t.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gv)| gv * k * x.powf(k - 1.0))
                        .collect(),
                )?;
                self.accumulate(grads, *a, da);
            }
            Op::Sqrt(a) => {
                let da = Tensor::new(
                    node.value.shape().to_vec(),
                    node.value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &gv)| gv / (2.0 * y))
                        .collect(),
                )?;
                self.accumulate(grads, *a, da);
            }
            Op::Log10(a) => {
                let t = self.value(*a);
                let ln10 = std::f64::consts::LN_10;
                let da = Tensor::new(
                    t.shape().to_vec(),
                    t.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gv)| gv / (x * ln10))
                        .collect(),
                )?;
                self.accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = Tensor::new(
                    node.value.shape().to_vec(),
                    node.value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &gv)| gv * y * (1.0 - y))
                        .collect(),
                )?;
                self.accumulate(grads, *a, da);
            }
            Op::Tanh(a) => {
                let da = Tensor::new(
                    node.value.shape().to_vec(),
                    node.value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &gv)| gv * (1.0 - y * y))
                        .collect(),
                )?;
                self.accumulate(grads, *a, da);
            }
            Op::Relu(a) => {
                let t = self.value(*a);
                let da = Tensor::new(
                    t.shape().to_vec(),
                    t.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                        .collect(),
                )?;
                self.accumulate(grads, *a, da);
            }
            Op::Dot(a, b) => {
                let gv = g.item();
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = Tensor::vector(tb.data().iter().map(|&x| gv * x).collect());
                let db = Tensor::vector(ta.data().iter().map(|&x| gv * x).collect());
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(a, c) => {
                let da = Tensor::new(
                    node.value.shape().to_vec(),
                    g.data().iter().map(|&gv| gv * c).collect(),
                )?;
                self.accumulate(grads, *a, da);
            }
            Op::AddConst(a) => {
                self.accumulate(grads, *a, g.clone());
            }
            Op::Frame { src, frame, hop } => {
                let len = self.value(*src).numel();
                let n_frames = node.value.shape()[0];
                let mut dsrc = vec![0.0; len];
                for f in 0..n_frames {
                    for k in 0..*frame {
                        dsrc[f * hop + k] += g.data()[f * frame + k];
                    }
                }
                self.accumulate(grads, *src, Tensor::vector(dsrc));
            }
            Op::OverlapAdd { src, hop, out_len } => {
                let t = self.value(*src);
                let (n_frames, frame) = (t.shape()[0], t.shape()[1]);
                let count = Self::overlap_counts(n_frames, frame, *hop, *out_len);
                let mut dsrc = vec![0.0; n_frames * frame];
                for f in 0..n_frames {
                    for k in 0..frame {
                        let pos = f * hop + k;
                        if pos < *out_len && count[pos] > 0 {
                            dsrc[f * frame + k] = g.data()[pos] / count[pos] as f64;
                        }
                    }
                }
                self.accumulate(grads, *src, Tensor::matrix(n_frames, frame, dsrc)?);
            }
        }
        Ok(())
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zero tensors are
    /// materialized for disconnected nodes on demand by the caller.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
