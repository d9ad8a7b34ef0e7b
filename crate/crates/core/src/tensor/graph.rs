use std::borrow::Cow;

use super::kernels::{self, split_axis};
use super::{Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<F> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    Sum(usize),
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Softmax {
        input: usize,
        axis: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Conv1d {
        input: usize,
        kernel: usize,
        rate: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<F>,
    },
}

pub(crate) struct Node<'p, F: Real> {
    pub(crate) value: Cow<'p, Tensor<F>>,
    pub(crate) op: Op<F>,
    pub(crate) requires_grad: bool,
}

/// One forward recording. Parameters are borrowed for the lifetime `'p`;
/// everything else is owned and dropped with the graph.
pub struct Graph<'p, F: Real> {
    pub(crate) nodes: Vec<Node<'p, F>>,
    pub(crate) grads: Vec<Option<Tensor<F>>>,
    pub(crate) backward_done: bool,
}

impl<'p, F: Real> Default for Graph<'p, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an owned leaf.
    pub fn input(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.input(value, false)
    }

    /// Records a borrowed leaf without copying it.
    pub fn leaf_ref(&mut self, value: &'p Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the loss with respect to `v`, available after
    /// [`Graph::backward`] for reachable tensors that require grad.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let shape = self.shape(v);
        match shape {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::InvalidShape {
                op,
                shape: shape.to_vec(),
                reason: "expected a rank-2 tensor".into(),
            }),
        }
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![F::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a.0, b.0), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("transpose", a)?;
        let src = self.value(a).data();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a.0), rg))
    }

    /// Elementwise sum of equal shapes, or a bias vector (`[n]` or `[1, n]`)
    /// added to every row of an `[m, n]` tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let rg = self.rg(&[a.0, b.0]);
        if sa == sb {
            let data = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| x + y)
                .collect();
            return Ok(self.push(Tensor::from_parts(sa.to_vec(), data), Op::Add(a.0, b.0), rg));
        }
        let is_bias = sa.len() == 2
            && match sb {
                [n] => *n == sa[1],
                [1, n] => *n == sa[1],
                _ => false,
            };
        if !is_bias {
            return Err(self.mismatch("add", a, b));
        }
        let n = sa[1];
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &y) in row.iter_mut().zip(bias) {
                *x += y;
            }
        }
        let shape = sa.to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddRow(a.0, b.0), rg))
    }

    fn zip_exact(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(op, a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(self.shape(a).to_vec(), data))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_exact("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Sub(a.0, b.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_exact("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Var {
        let v = self.value(a);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&x| x * factor).collect());
        let rg = self.rg(&[a.0]);
        self.push(t, Op::Scale(a.0, factor), rg)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(F::zero(), |acc, &x| acc + x);
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::InvalidShape {
            op: "concat",
            shape: vec![],
            reason: "no inputs".into(),
        })?;
        let rank = self.shape(first).len();
        if axis >= rank {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: self.shape(first).to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut out_shape = self.shape(first).to_vec();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == rank
                && s.iter()
                    .zip(self.shape(first))
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(self.mismatch("concat", first, p));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, total, inner) = split_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let ext = v.shape()[axis];
                let block = ext * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Concat { inputs: ids, axis }, rg))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::InvalidShape {
                op: "slice",
                shape,
                reason: format!("range {start}..{} on axis {axis}", start + len),
            });
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ext * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[a.0]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Slice {
                input: a.0,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Row `r` of a rank-2 tensor as a `[1, n]` tensor.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.slice(a, 0, r, 1)
    }

    fn map(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let v = self.value(a);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect());
        let rg = self.rg(&[a.0]);
        self.push(t, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, kernels::sigmoid, Op::Sigmoid(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > F::zero() { x } else { F::zero() }, Op::Relu(a.0))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidShape {
                op: "softmax",
                shape,
                reason: format!("axis {axis} out of range"),
            });
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![F::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| o * ext * inner + k * inner + i;
                let mut max = F::neg_infinity();
                for k in 0..ext {
                    max = max.max(src[idx(k)]);
                }
                let mut total = F::zero();
                for k in 0..ext {
                    let e = (src[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..ext {
                    out[idx(k)] /= total;
                }
            }
        }
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { input: a.0, axis }, rg))
    }

    /// Gathers rows of a `[V, D]` table, producing `[ids.len(), D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, dim) = self.dims2("embedding_lookup", table)?;
        if ids.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "embedding_lookup",
                shape: vec![rows, dim],
                reason: "empty id list".into(),
            });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding_lookup",
                    index: id,
                    extent: rows,
                });
            }
            out.extend_from_slice(&src[id * dim..(id + 1) * dim]);
        }
        let rg = self.rg(&[table.0]);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), dim], out),
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Valid (unpadded) dilated convolution over a `[L, C_in]` sequence with a
    /// `[K, C_in, C_out]` kernel: `out[j] = sum_k in[j + k*rate] * W[k]`.
    pub fn dilated_conv1d(&mut self, input: Var, kernel: Var, rate: usize) -> Result<Var> {
        let (len, cin) = self.dims2("dilated_conv1d", input)?;
        let kshape = self.shape(kernel).to_vec();
        let (taps, kin, cout) = match kshape.as_slice() {
            [k, ci, co] => (*k, *ci, *co),
            _ => return Err(self.mismatch("dilated_conv1d", input, kernel)),
        };
        if kin != cin {
            return Err(self.mismatch("dilated_conv1d", input, kernel));
        }
        if rate == 0 {
            return Err(TensorError::InvalidShape {
                op: "dilated_conv1d",
                shape: kshape,
                reason: "dilation rate must be positive".into(),
            });
        }
        let span = 1 + (taps - 1) * rate;
        if len < span {
            return Err(TensorError::SequenceTooShort { len, span });
        }
        let out_len = len - (taps - 1) * rate;
        let x = self.value(input).data();
        let w = self.value(kernel).data();
        let mut out = vec![F::zero(); out_len * cout];
        for j in 0..out_len {
            let out_row = &mut out[j * cout..(j + 1) * cout];
            for k in 0..taps {
                let pos = j + k * rate;
                let x_row = &x[pos * cin..(pos + 1) * cin];
                let w_k = &w[k * cin * cout..(k + 1) * cin * cout];
                kernels::matmul_acc(x_row, w_k, out_row, 1, cin, cout);
            }
        }
        let rg = self.rg(&[input.0, kernel.0]);
        Ok(self.push(
            Tensor::from_parts(vec![out_len, cout], out),
            Op::Conv1d {
                input: input.0,
                kernel: kernel.0,
                rate,
            },
            rg,
        ))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`[V]` or `[n, V]`), as a `[1]` tensor.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let (rows, classes) = match shape.as_slice() {
            [v] => (1, *v),
            [n, v] => (*n, *v),
            _ => {
                return Err(TensorError::InvalidShape {
                    op: "cross_entropy",
                    shape,
                    reason: "expected [V] or [n, V] logits".into(),
                })
            }
        };
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let src = self.value(logits).data();
        let mut probs = vec![F::zero(); src.len()];
        let mut loss = F::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    extent: classes,
                });
            }
            let row = &src[r * classes..(r + 1) * classes];
            let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
            let mut total = F::zero();
            for (c, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                probs[r * classes + c] = e;
                total += e;
            }
            for p in &mut probs[r * classes..(r + 1) * classes] {
                *p /= total;
            }
            loss += total.ln() + max - row[t];
        }
        let rg = self.rg(&[logits.0]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }
}
