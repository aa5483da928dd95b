use std::ops::Range;

use super::rng::Rng;
use super::{numel, GradSink, Result, Tensor, TensorError};

const COS_EPS: f64 = 1e-8;

pub(crate) enum Op {
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Concat { inputs: Vec<Tensor>, axis: usize },
    Tanh(Tensor),
    Sigmoid(Tensor),
    Relu(Tensor),
    Exp(Tensor),
    Log(Tensor),
    Square(Tensor),
    Sqrt(Tensor),
    Sum(Tensor),
    SumAxis { input: Tensor, axis: usize },
    Mean(Tensor),
    Slice { input: Tensor, axis: usize, range: Range<usize> },
    Reshape(Tensor),
    Dropout { input: Tensor, mask: Vec<f64> },
    GradReverse { input: Tensor, lambda: f64 },
    CosineMatrix(Tensor, Tensor),
    Gather { input: Tensor, indices: Vec<usize> },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        use Op::*;
        match self {
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | CosineMatrix(a, b) => vec![a, b],
            Concat { inputs, .. } => inputs.iter().collect(),
            Scale(a, _) | Tanh(a) | Sigmoid(a) | Relu(a) | Exp(a) | Log(a) | Square(a)
            | Sqrt(a) | Sum(a) | Mean(a) | Reshape(a) => vec![a],
            SumAxis { input, .. }
            | Slice { input, .. }
            | Dropout { input, .. }
            | GradReverse { input, .. }
            | Gather { input, .. } => vec![input],
        }
    }

    /// Propagates `g` (gradient w.r.t. this node's output `out`) to the inputs.
    pub(crate) fn backward(&self, out: &[f64], g: &[f64], sink: &mut GradSink<'_>) {
        use Op::*;
        match self {
            MatMul(a, b) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                if a.requires_grad() {
                    let bv = b.value();
                    // dA += dC · Bᵀ
                    sink.add(a, |da| gemm(m, n, k, g, (n, 1), &bv, (1, n), da));
                }
                if b.requires_grad() {
                    let av = a.value();
                    // dB += Aᵀ · dC
                    sink.add(b, |db| gemm(k, m, n, &av, (1, k), g, (n, 1), db));
                }
            }
            Add(a, b) | Sub(a, b) => {
                let sign = if matches!(self, Sub(..)) { -1.0 } else { 1.0 };
                let bc = Broadcast::new(a.shape(), b.shape()).expect("checked in forward");
                sink.add(a, |da| bc.reduce_a(g, da, |gi, _| gi));
                sink.add(b, |db| bc.reduce_b(g, db, |gi, _| sign * gi));
            }
            Mul(a, b) => {
                let bc = Broadcast::new(a.shape(), b.shape()).expect("checked in forward");
                if a.requires_grad() {
                    let bv = b.value();
                    sink.add(a, |da| bc.reduce_a(g, da, |gi, i| gi * bv[bc.b_index(i)]));
                }
                if b.requires_grad() {
                    let av = a.value();
                    sink.add(b, |db| bc.reduce_b(g, db, |gi, i| gi * av[bc.a_index(i)]));
                }
            }
            Scale(a, c) => sink.add(a, |da| axpy(da, g, |gi, _| gi * c)),
            Concat { inputs, axis } => {
                let out_shape = concat_shape(inputs, *axis);
                let outer = numel(&out_shape[..*axis]);
                let inner = numel(&out_shape[axis + 1..]);
                let out_row = out_shape[*axis] * inner;
                let mut offset = 0;
                for t in inputs {
                    let width = t.shape()[*axis] * inner;
                    sink.add(t, |dt| {
                        for o in 0..outer {
                            let src = &g[o * out_row + offset..o * out_row + offset + width];
                            for (d, s) in dt[o * width..(o + 1) * width].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    offset += width;
                }
            }
            Tanh(a) => sink.add(a, |da| axpy(da, g, |gi, i| gi * (1.0 - out[i] * out[i]))),
            Sigmoid(a) => sink.add(a, |da| axpy(da, g, |gi, i| gi * out[i] * (1.0 - out[i]))),
            Relu(a) => {
                let av = a.value();
                sink.add(a, |da| axpy(da, g, |gi, i| if av[i] > 0.0 { gi } else { 0.0 }))
            }
            Exp(a) => sink.add(a, |da| axpy(da, g, |gi, i| gi * out[i])),
            Log(a) => {
                let av = a.value();
                sink.add(a, |da| axpy(da, g, |gi, i| gi / av[i]))
            }
            Square(a) => {
                let av = a.value();
                sink.add(a, |da| axpy(da, g, |gi, i| 2.0 * gi * av[i]))
            }
            Sqrt(a) => sink.add(a, |da| axpy(da, g, |gi, i| 0.5 * gi / out[i])),
            Sum(a) => sink.add(a, |da| da.iter_mut().for_each(|d| *d += g[0])),
            Mean(a) => {
                let n = a.numel() as f64;
                sink.add(a, |da| da.iter_mut().for_each(|d| *d += g[0] / n))
            }
            SumAxis { input, axis } => {
                let shape = input.shape();
                let outer = numel(&shape[..*axis]);
                let len = shape[*axis];
                let inner = numel(&shape[axis + 1..]);
                sink.add(input, |di| {
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            for j in 0..inner {
                                di[base + j] += g[o * inner + j];
                            }
                        }
                    }
                });
            }
            Slice { input, axis, range } => {
                let shape = input.shape();
                let outer = numel(&shape[..*axis]);
                let inner = numel(&shape[axis + 1..]);
                let in_row = shape[*axis] * inner;
                let width = range.len() * inner;
                sink.add(input, |di| {
                    for o in 0..outer {
                        let dst = &mut di[o * in_row + range.start * inner..][..width];
                        for (d, s) in dst.iter_mut().zip(&g[o * width..(o + 1) * width]) {
                            *d += s;
                        }
                    }
                });
            }
            Reshape(a) => sink.add(a, |da| axpy(da, g, |gi, _| gi)),
            Dropout { input, mask } => sink.add(input, |di| axpy(di, g, |gi, i| gi * mask[i])),
            GradReverse { input, lambda } => {
                sink.add(input, |di| axpy(di, g, |gi, _| -lambda * gi))
            }
            CosineMatrix(a, b) => cosine_backward(a, b, g, sink),
            Gather { input, indices } => sink.add(input, |di| {
                for (k, &idx) in indices.iter().enumerate() {
                    di[idx] += g[k];
                }
            }),
        }
    }
}

fn axpy(dst: &mut [f64], g: &[f64], f: impl Fn(f64, usize) -> f64) {
    for (i, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
        *d += f(gi, i);
    }
}

/// `c += a · b` for an `m×k` by `k×n` product with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slices cover the full strided extents checked above and `c`
    // does not alias `a` or `b` (it is a distinct, exclusively borrowed buffer).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Index mapping for numpy-style (right-aligned) broadcasting of two operands.
struct Broadcast {
    out_shape: Vec<usize>,
    a: IndexMap,
    b: IndexMap,
}

enum IndexMap {
    Same,
    Scalar,
    /// Operand repeats along leading axes: index = i % n.
    Cycle(usize),
    Table(Vec<usize>),
}

impl IndexMap {
    fn build(shape: &[usize], out: &[usize]) -> IndexMap {
        let n = numel(shape);
        if shape == out {
            return IndexMap::Same;
        }
        if n == 1 {
            return IndexMap::Scalar;
        }
        let trimmed: Vec<usize> = shape.iter().copied().skip_while(|&d| d == 1).collect();
        if out.ends_with(&trimmed) {
            return IndexMap::Cycle(n);
        }
        // General case: explicit table over output positions.
        let rank = out.len();
        let padded: Vec<usize> = std::iter::repeat(1)
            .take(rank - shape.len())
            .chain(shape.iter().copied())
            .collect();
        let mut strides = vec![0; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            strides[d] = if padded[d] == 1 { 0 } else { acc };
            acc *= padded[d];
        }
        let total = numel(out);
        let mut table = Vec::with_capacity(total);
        let mut idx = vec![0; rank];
        for _ in 0..total {
            table.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        IndexMap::Table(table)
    }

    #[inline]
    fn get(&self, i: usize) -> usize {
        match self {
            IndexMap::Same => i,
            IndexMap::Scalar => 0,
            IndexMap::Cycle(n) => i % n,
            IndexMap::Table(t) => t[i],
        }
    }
}

impl Broadcast {
    fn new(a: &[usize], b: &[usize]) -> Option<Broadcast> {
        let rank = a.len().max(b.len());
        let mut out = vec![0; rank];
        for d in 0..rank {
            let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
            let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
            out[d] = match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return None,
            };
        }
        Some(Broadcast {
            a: IndexMap::build(a, &out),
            b: IndexMap::build(b, &out),
            out_shape: out,
        })
    }

    fn a_index(&self, i: usize) -> usize {
        self.a.get(i)
    }

    fn b_index(&self, i: usize) -> usize {
        self.b.get(i)
    }

    fn reduce_a(&self, g: &[f64], da: &mut [f64], f: impl Fn(f64, usize) -> f64) {
        for (i, &gi) in g.iter().enumerate() {
            da[self.a.get(i)] += f(gi, i);
        }
    }

    fn reduce_b(&self, g: &[f64], db: &mut [f64], f: impl Fn(f64, usize) -> f64) {
        for (i, &gi) in g.iter().enumerate() {
            db[self.b.get(i)] += f(gi, i);
        }
    }
}

fn concat_shape(inputs: &[Tensor], axis: usize) -> Vec<usize> {
    let mut shape = inputs[0].shape().to_vec();
    shape[axis] = inputs.iter().map(|t| t.shape()[axis]).sum();
    shape
}

fn cosine_parts(a: &[f64], b: &[f64], n: usize, k: usize, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let norm = |v: &[f64], rows: usize| -> Vec<f64> {
        (0..rows)
            .map(|r| v[r * d..(r + 1) * d].iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    };
    let na = norm(a, n);
    let nb = norm(b, k);
    let mut dots = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            dots[i * k + j] = a[i * d..(i + 1) * d]
                .iter()
                .zip(&b[j * d..(j + 1) * d])
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    (na, nb, dots)
}

fn cosine_backward(a: &Tensor, b: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
    let (n, d) = (a.shape()[0], a.shape()[1]);
    let k = b.shape()[0];
    let av = a.to_vec();
    let bv = b.to_vec();
    let (na, nb, dots) = cosine_parts(&av, &bv, n, k, d);
    // c_ij = dot_ij / q_ij with q_ij = |a_i||b_j| + eps
    // dc_ij/da_i = b_j / q_ij - dot_ij |b_j| (a_i / |a_i|) / q_ij^2
    sink.add(a, |da| {
        for i in 0..n {
            for j in 0..k {
                let gij = g[i * k + j];
                if gij == 0.0 {
                    continue;
                }
                let q = na[i] * nb[j] + COS_EPS;
                let radial = if na[i] > 0.0 {
                    dots[i * k + j] * nb[j] / (na[i] * q * q)
                } else {
                    0.0
                };
                for c in 0..d {
                    da[i * d + c] += gij * (bv[j * d + c] / q - radial * av[i * d + c]);
                }
            }
        }
    });
    sink.add(b, |db| {
        for i in 0..n {
            for j in 0..k {
                let gij = g[i * k + j];
                if gij == 0.0 {
                    continue;
                }
                let q = na[i] * nb[j] + COS_EPS;
                let radial = if nb[j] > 0.0 {
                    dots[i * k + j] * na[i] / (nb[j] * q * q)
                } else {
                    0.0
                };
                for c in 0..d {
                    db[j * d + c] += gij * (av[i * d + c] / q - radial * bv[j * d + c]);
                }
            }
        }
    });
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tensor {
    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let values = self.value().iter().map(|&x| f(x)).collect();
        Tensor::from_op(self.shape().to_vec(), values, op)
    }

    fn binary(&self, other: &Tensor, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>)> {
        let bc = Broadcast::new(self.shape(), other.shape()).ok_or_else(|| dim_err(name, self, other))?;
        let a = self.value();
        let b = other.value();
        let n = numel(&bc.out_shape);
        let values = match (&bc.a, &bc.b) {
            (IndexMap::Same, IndexMap::Same) => a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|i| f(a[bc.a_index(i)], b[bc.b_index(i)])).collect(),
        };
        Ok((bc.out_shape, values))
    }

    /// Matrix product of an `m×k` and a `k×n` tensor.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", self, other));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.value(), (k, 1), &other.value(), (n, 1), &mut out);
        Ok(Tensor::from_op(vec![m, n], out, Op::MatMul(self.clone(), other.clone())))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, v) = self.binary(other, "add", |x, y| x + y)?;
        Ok(Tensor::from_op(shape, v, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, v) = self.binary(other, "sub", |x, y| x - y)?;
        Ok(Tensor::from_op(shape, v, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, v) = self.binary(other, "mul", |x, y| x * y)?;
        Ok(Tensor::from_op(shape, v, Op::Mul(self.clone(), other.clone())))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(Op::Scale(self.clone(), c), |x| x * c)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn concat(&self, other: &Tensor, axis: usize) -> Result<Tensor> {
        Tensor::concat_all(&[self.clone(), other.clone()], axis)
    }

    /// Concatenates tensors that agree on every axis except `axis`.
    pub fn concat_all(inputs: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = inputs.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        if axis >= first.shape().len() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {:?}", first.shape()),
            });
        }
        for t in &inputs[1..] {
            let ok = t.shape().len() == first.shape().len()
                && t.shape().iter().zip(first.shape()).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(dim_err("concat", first, t));
            }
        }
        let shape = concat_shape(inputs, axis);
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let mut values = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for t in inputs {
                let width = t.shape()[axis] * inner;
                values.extend_from_slice(&t.value()[o * width..(o + 1) * width]);
            }
        }
        Ok(Tensor::from_op(shape, values, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Op::Tanh(self.clone()), f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid(self.clone()), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu(self.clone()), |x| x.max(0.0))
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Op::Exp(self.clone()), f64::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(bad) = self.value().iter().find(|&&x| !(x > 0.0)) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("nonpositive input {bad}"),
            });
        }
        Ok(self.unary(Op::Log(self.clone()), f64::ln))
    }

    pub fn square(&self) -> Tensor {
        self.unary(Op::Square(self.clone()), |x| x * x)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(bad) = self.value().iter().find(|&&x| x < 0.0 || x.is_nan()) {
            return Err(TensorError::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        Ok(self.unary(Op::Sqrt(self.clone()), f64::sqrt))
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s = self.value().iter().sum();
        Tensor::from_op(vec![], vec![s], Op::Sum(self.clone()))
    }

    /// Sum along `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::Invalid {
                op: "sum",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let v = self.value();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for j in 0..inner {
                    out[o * inner + j] += v[base + j];
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        drop(v);
        Ok(Tensor::from_op(out_shape, out, Op::SumAxis { input: self.clone(), axis }))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        let s: f64 = self.value().iter().sum();
        Tensor::from_op(vec![], vec![s / n], Op::Mean(self.clone()))
    }

    pub fn slice(&self, axis: usize, range: Range<usize>) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || range.start > range.end || range.end > shape[axis] {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("range {range:?} on axis {axis} invalid for shape {shape:?}"),
            });
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let in_row = shape[axis] * inner;
        let width = range.len() * inner;
        let v = self.value();
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            out.extend_from_slice(&v[o * in_row + range.start * inner..][..width]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = range.len();
        drop(v);
        Ok(Tensor::from_op(out_shape, out, Op::Slice { input: self.clone(), axis, range }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::Dimension {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), Op::Reshape(self.clone())))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`.
    /// Evaluation mode (or `rate == 0`) returns the input unchanged.
    pub fn dropout(&self, rate: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Invalid {
                op: "dropout",
                msg: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !training || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
            .collect();
        let values = self.value().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), values, Op::Dropout { input: self.clone(), mask }))
    }

    /// Identity on the forward pass; scales the incoming gradient by
    /// `-lambda` on the way back.
    pub fn grad_reverse(&self, lambda: f64) -> Tensor {
        Tensor::from_op(
            self.shape().to_vec(),
            self.to_vec(),
            Op::GradReverse { input: self.clone(), lambda },
        )
    }

    /// Pairwise cosine similarities between the rows of an `n×d` and a `k×d`
    /// tensor: `<a_i, b_j> / (|a_i| |b_j| + 1e-8)`.
    pub fn cosine_matrix(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(dim_err("cosine_matrix", self, other));
        }
        let (n, d, k) = (sa[0], sa[1], sb[0]);
        let (na, nb, mut dots) = cosine_parts(&self.value(), &other.value(), n, k, d);
        for i in 0..n {
            for j in 0..k {
                dots[i * k + j] /= na[i] * nb[j] + COS_EPS;
            }
        }
        Ok(Tensor::from_op(vec![n, k], dots, Op::CosineMatrix(self.clone(), other.clone())))
    }

    /// Selects elements by flat (row-major) index into a 1-D tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let n = self.numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::Invalid {
                op: "gather",
                msg: format!("index {bad} out of range for {n} elements"),
            });
        }
        let v = self.value();
        let values = indices.iter().map(|&i| v[i]).collect();
        drop(v);
        Ok(Tensor::from_op(
            vec![indices.len()],
            values,
            Op::Gather { input: self.clone(), indices: indices.to_vec() },
        ))
    }
}

/// Cosine similarity of two equal-length vectors as a scalar tensor.
/// Two zero vectors give 0 through the `1e-8` denominator guard.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 1 || a.shape() != b.shape() {
        return Err(dim_err("cosine_similarity", a, b));
    }
    let d = a.numel();
    a.reshape(&[1, d])?.cosine_matrix(&b.reshape(&[1, d])?)?.reshape(&[])
}
