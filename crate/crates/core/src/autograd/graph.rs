//! Tape-recorded computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so the node vector is already a
//! topological order and `backward` is a single reverse sweep.

use super::{AutogradError, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise kinds. `Add`, `Sub` and `Mul` are binary; the rest are unary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Tanh,
    Exp,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    /// Sum along `axis` scaled by weights shaped like the leading dimensions
    /// up to and including `axis`.
    WeightedSum,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    Binary { kind: Elementwise, a: Var, b: Var, broadcast: bool },
    Unary { kind: Elementwise, a: Var },
    Scale { a: Var, factor: f64 },
    ClampMin { a: Var, floor: f64 },
    Softmax { x: Var },
    Reduce { mean: bool, x: Var, axis: Option<usize> },
    WeightedSum { x: Var, weights: Var, axis: usize },
    Gather { x: Var, index: Vec<usize> },
    Scatter { x: Var, index: Vec<usize> },
    Concat { a: Var, b: Var },
    Reshape { x: Var },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Splits a shape around `axis` into `(outer, len, inner)` extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// A tensor that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, present after `backward` for nodes that require it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutogradError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(av.data(), bv.data(), p, q, r);
        let value = Tensor::new(vec![p, r], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Matmul { a, b }, rg))
    }

    /// Pointwise operation. Binary kinds accept equal shapes, or `b` shaped
    /// `[last_dim(a)]` broadcast over every row of `a`.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var, AutogradError> {
        match kind {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => {
                let b = b.ok_or(AutogradError::MissingOperand(kind))?;
                self.binary(kind, a, b)
            }
            Elementwise::Tanh | Elementwise::Exp | Elementwise::Log => self.unary(kind, a),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutogradError> {
        self.unary(Elementwise::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutogradError> {
        self.unary(Elementwise::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutogradError> {
        self.unary(Elementwise::Log, a)
    }

    fn binary(&mut self, kind: Elementwise, a: Var, b: Var) -> Result<Var, AutogradError> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if bv.shape() == [av.last_dim()] {
            true
        } else {
            return Err(AutogradError::ShapeMismatch {
                op: "elementwise",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        };
        let cols = bv.numel();
        let f: fn(f64, f64) -> f64 = match kind {
            Elementwise::Add => |x, y| x + y,
            Elementwise::Sub => |x, y| x - y,
            Elementwise::Mul => |x, y| x * y,
            _ => unreachable!("unary kind in binary op"),
        };
        let out: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv.data()[if broadcast { i % cols } else { i }]))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Binary { kind, a, b, broadcast }, rg))
    }

    fn unary(&mut self, kind: Elementwise, a: Var) -> Result<Var, AutogradError> {
        let av = self.value(a);
        let out: Vec<f64> = match kind {
            Elementwise::Tanh => av.data().iter().map(|x| x.tanh()).collect(),
            Elementwise::Exp => av.data().iter().map(|x| x.exp()).collect(),
            Elementwise::Log => {
                if let Some((index, &value)) = av.data().iter().enumerate().find(|(_, &x)| x <= 0.0 || x.is_nan()) {
                    return Err(AutogradError::Domain { index, value });
                }
                av.data().iter().map(|x| x.ln()).collect()
            }
            _ => return Err(AutogradError::MissingOperand(kind)),
        };
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Unary { kind, a }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * factor).collect()).expect("shape");
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale { a, factor }, rg)
    }

    /// `max(a, floor)`; the gradient is passed only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let av = self.value(a);
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x.max(floor)).collect()).expect("shape");
        let rg = self.any_grad(&[a]);
        self.push(value, Op::ClampMin { a, floor }, rg)
    }

    /// Softmax over the last dimension. Masked entries (`false`) are left out
    /// of the normalising sum and come out as exactly zero.
    pub fn softmax_lastdim(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        if let Some(m) = mask {
            if m.len() != xv.numel() {
                return Err(AutogradError::ShapeMismatch {
                    op: "softmax mask",
                    left: xv.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
        }
        let cols = xv.last_dim();
        let mut out = vec![0.0; xv.numel()];
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let keep = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(AutogradError::FullyMasked { row: r });
            }
            let mut total = 0.0;
            for j in (0..cols).filter(|&j| keep(j)) {
                let e = (row[j] - max).exp();
                out[r * cols + j] = e;
                total += e;
            }
            for v in &mut out[r * cols..(r + 1) * cols] {
                *v /= total;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Softmax { x }, rg))
    }

    /// Reductions. `axis = None` reduces everything to a scalar (`Sum`/`Mean`
    /// only). Reducing along an axis removes that axis; reducing the only
    /// axis yields shape `[1]`.
    pub fn reduce(
        &mut self,
        kind: Reduction,
        x: Var,
        axis: Option<usize>,
        weights: Option<Var>,
    ) -> Result<Var, AutogradError> {
        match kind {
            Reduction::Sum | Reduction::Mean => self.reduce_plain(kind == Reduction::Mean, x, axis),
            Reduction::WeightedSum => {
                let w = weights.ok_or(AutogradError::MissingWeights)?;
                let shape = self.value(x).shape().to_vec();
                let axis = axis.ok_or(AutogradError::InvalidAxis { axis: None, shape })?;
                self.weighted_sum(x, w, axis)
            }
        }
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce_plain(false, x, None).expect("full reduction")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce_plain(true, x, None).expect("full reduction")
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, AutogradError> {
        self.reduce_plain(false, x, Some(axis))
    }

    fn reduce_plain(&mut self, mean: bool, x: Var, axis: Option<usize>) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        let value = match axis {
            None => {
                let s: f64 = xv.data().iter().sum();
                Tensor::scalar(if mean { s / xv.numel() as f64 } else { s })
            }
            Some(ax) => {
                if ax >= xv.shape().len() {
                    return Err(AutogradError::InvalidAxis {
                        axis: Some(ax),
                        shape: xv.shape().to_vec(),
                    });
                }
                let (outer, len, inner) = axis_extents(xv.shape(), ax);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for i in 0..len {
                        let src = &xv.data()[(o * len + i) * inner..(o * len + i + 1) * inner];
                        for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *dst += s;
                        }
                    }
                }
                if mean {
                    out.iter_mut().for_each(|v| *v /= len as f64);
                }
                let mut shape: Vec<usize> = xv.shape().to_vec();
                shape.remove(ax);
                if shape.is_empty() {
                    shape.push(1);
                }
                Tensor::new(shape, out)?
            }
        };
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reduce { mean, x, axis }, rg))
    }

    pub fn weighted_sum(&mut self, x: Var, weights: Var, axis: usize) -> Result<Var, AutogradError> {
        let (xv, wv) = (self.value(x), self.value(weights));
        if axis >= xv.shape().len() {
            return Err(AutogradError::InvalidAxis {
                axis: Some(axis),
                shape: xv.shape().to_vec(),
            });
        }
        if wv.shape() != &xv.shape()[..=axis] {
            return Err(AutogradError::ShapeMismatch {
                op: "weighted_sum",
                left: xv.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        let (outer, len, inner) = axis_extents(xv.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let w = wv.data()[o * len + i];
                let src = &xv.data()[(o * len + i) * inner..(o * len + i + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += w * s;
                }
            }
        }
        let mut shape: Vec<usize> = xv.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[x, weights]);
        Ok(self.push(value, Op::WeightedSum { x, weights, axis }, rg))
    }

    /// Selects rows (first-axis slices) of `x`; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        let rows = xv.shape()[0];
        let inner = xv.numel() / rows;
        let mut out = Vec::with_capacity(index.len() * inner);
        for &r in index {
            if r >= rows {
                return Err(AutogradError::IndexOutOfRange { index: r, rows });
            }
            out.extend_from_slice(&xv.data()[r * inner..(r + 1) * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = index.len();
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Places row `i` of `x` at row `index[i]` of a zero tensor with `rows`
    /// rows. Indices must be distinct.
    pub fn scatter_rows(&mut self, x: Var, index: &[usize], rows: usize) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        if index.len() != xv.shape()[0] {
            return Err(AutogradError::ShapeMismatch {
                op: "scatter_rows",
                left: xv.shape().to_vec(),
                right: vec![index.len()],
            });
        }
        let inner = xv.numel() / xv.shape()[0];
        let mut out = vec![0.0; rows * inner];
        let mut seen = vec![false; rows];
        for (i, &r) in index.iter().enumerate() {
            if r >= rows || seen[r] {
                return Err(AutogradError::IndexOutOfRange { index: r, rows });
            }
            seen[r] = true;
            out[r * inner..(r + 1) * inner].copy_from_slice(&xv.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = rows;
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::Scatter {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates two matrices along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[0] != bv.shape()[0] {
            return Err(AutogradError::ShapeMismatch {
                op: "concat_cols",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (rows, ca, cb) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(av.row(r));
            out.extend_from_slice(bv.row(r));
        }
        let value = Tensor::new(vec![rows, ca + cb], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutogradError> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are added to whatever
    /// the nodes already hold, so calling this twice without
    /// [`Graph::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutogradError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutogradError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = local[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut local);
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        let mut send = |v: Var, grad: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut local[v.0] {
                Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(grad),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q, r) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    // g [p,r] · bᵀ [r,q]
                    let mut ga = vec![0.0; p * q];
                    for i in 0..p {
                        for k in 0..q {
                            let brow = &bv.data()[k * r..(k + 1) * r];
                            ga[i * q + k] = g[i * r..(i + 1) * r].iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    send(*a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    // aᵀ [q,p] · g [p,r]
                    let mut gb = vec![0.0; q * r];
                    for i in 0..p {
                        for k in 0..q {
                            let aik = av.data()[i * q + k];
                            for (dst, gv) in gb[k * r..(k + 1) * r].iter_mut().zip(&g[i * r..(i + 1) * r]) {
                                *dst += aik * gv;
                            }
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::Binary { kind, a, b, broadcast } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = bv.numel();
                let bidx = |i: usize| if *broadcast { i % cols } else { i };
                let ga: Vec<f64> = match kind {
                    Elementwise::Add | Elementwise::Sub => g.to_vec(),
                    Elementwise::Mul => g.iter().enumerate().map(|(i, gi)| gi * bv.data()[bidx(i)]).collect(),
                    _ => unreachable!(),
                };
                let sign = if *kind == Elementwise::Sub { -1.0 } else { 1.0 };
                let mut gb = vec![0.0; bv.numel()];
                for (i, gi) in g.iter().enumerate() {
                    let contrib = match kind {
                        Elementwise::Mul => gi * av.data()[i],
                        _ => sign * gi,
                    };
                    gb[bidx(i)] += contrib;
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Unary { kind, a } => {
                let av = self.value(*a);
                let ga: Vec<f64> = match kind {
                    Elementwise::Tanh => g.iter().zip(out).map(|(gi, y)| gi * (1.0 - y * y)).collect(),
                    Elementwise::Exp => g.iter().zip(out).map(|(gi, y)| gi * y).collect(),
                    Elementwise::Log => g.iter().zip(av.data()).map(|(gi, x)| gi / x).collect(),
                    _ => unreachable!(),
                };
                send(*a, ga);
            }
            Op::Scale { a, factor } => send(*a, g.iter().map(|x| x * factor).collect()),
            Op::ClampMin { a, floor } => {
                let av = self.value(*a);
                send(
                    *a,
                    g.iter()
                        .zip(av.data())
                        .map(|(gi, x)| if *x > *floor { *gi } else { 0.0 })
                        .collect(),
                );
            }
            Op::Softmax { x } => {
                let cols = node.value.last_dim();
                let mut gx = vec![0.0; g.len()];
                for r in 0..node.value.rows() {
                    let span = r * cols..(r + 1) * cols;
                    let y = &out[span.clone()];
                    let gr = &g[span.clone()];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((dst, yi), gi) in gx[span].iter_mut().zip(y).zip(gr) {
                        *dst = yi * (gi - dot);
                    }
                }
                send(*x, gx);
            }
            Op::Reduce { mean, x, axis } => {
                let xv = self.value(*x);
                let gx = match axis {
                    None => {
                        let v = if *mean { g[0] / xv.numel() as f64 } else { g[0] };
                        vec![v; xv.numel()]
                    }
                    Some(ax) => {
                        let (outer, len, inner) = axis_extents(xv.shape(), *ax);
                        let scale = if *mean { 1.0 / len as f64 } else { 1.0 };
                        let mut gx = vec![0.0; xv.numel()];
                        for o in 0..outer {
                            for i in 0..len {
                                let base = (o * len + i) * inner;
                                for n in 0..inner {
                                    gx[base + n] = g[o * inner + n] * scale;
                                }
                            }
                        }
                        gx
                    }
                };
                send(*x, gx);
            }
            Op::WeightedSum { x, weights, axis } => {
                let (xv, wv) = (self.value(*x), self.value(*weights));
                let (outer, len, inner) = axis_extents(xv.shape(), *axis);
                let mut gx = vec![0.0; xv.numel()];
                let mut gw = vec![0.0; wv.numel()];
                for o in 0..outer {
                    let go = &g[o * inner..(o + 1) * inner];
                    for i in 0..len {
                        let w = wv.data()[o * len + i];
                        let base = (o * len + i) * inner;
                        let xs = &xv.data()[base..base + inner];
                        let mut dot = 0.0;
                        for n in 0..inner {
                            gx[base + n] = w * go[n];
                            dot += xs[n] * go[n];
                        }
                        gw[o * len + i] = dot;
                    }
                }
                send(*x, gx);
                send(*weights, gw);
            }
            Op::Gather { x, index } => {
                let xv = self.value(*x);
                let inner = xv.numel() / xv.shape()[0];
                let mut gx = vec![0.0; xv.numel()];
                for (i, &r) in index.iter().enumerate() {
                    for (dst, gi) in gx[r * inner..(r + 1) * inner].iter_mut().zip(&g[i * inner..(i + 1) * inner]) {
                        *dst += gi;
                    }
                }
                send(*x, gx);
            }
            Op::Scatter { x, index } => {
                let xv = self.value(*x);
                let inner = xv.numel() / xv.shape()[0];
                let mut gx = Vec::with_capacity(xv.numel());
                for &r in index {
                    gx.extend_from_slice(&g[r * inner..(r + 1) * inner]);
                }
                send(*x, gx);
            }
            Op::Concat { a, b } => {
                let (ca, cb) = (self.value(*a).shape()[1], self.value(*b).shape()[1]);
                let rows = node.value.shape()[0];
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let base = r * (ca + cb);
                    ga.extend_from_slice(&g[base..base + ca]);
                    gb.extend_from_slice(&g[base + ca..base + ca + cb]);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Reshape { x } => send(*x, g.to_vec()),
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            for (o, bv) in orow.iter_mut().zip(&b[k * r..(k + 1) * r]) {
                *o += aik * bv;
            }
        }
    }
    out
}
