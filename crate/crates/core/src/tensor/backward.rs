use super::graph::{Graph, Node, Op};
use super::kernels::{self, split_axis};
use super::{Real, Result, Tensor, TensorError};

/// Zero-initialised gradient buffer for node `id`.
fn slot<'a, F: Real>(grads: &'a mut [Option<Tensor<F>>], nodes: &[Node<'_, F>], id: usize) -> &'a mut [F] {
    grads[id]
        .get_or_insert_with(|| Tensor::zeros(nodes[id].value.shape()))
        .data_mut()
}

impl<'p, F: Real> Graph<'p, F> {
    /// Propagates d(loss)/d(node) to every reachable node that requires
    /// grad. Gradients accumulate additively across fan-out. A recording
    /// supports exactly one backward pass.
    pub fn backward(&mut self, loss: super::Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(&shape, F::one()));

        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(nodes, grads, node, &g);
            grads[id] = Some(g);
        }
        Ok(())
    }
}

fn propagate<F: Real>(nodes: &[Node<'_, F>], grads: &mut [Option<Tensor<F>>], node: &Node<'_, F>, g: &Tensor<F>) {
    let rg = |i: usize| nodes[i].requires_grad;
    let val = |i: usize| nodes[i].value.data();
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = nodes[*a].value.dims2().expect("rank-2");
            let n = nodes[*b].value.shape()[1];
            if rg(*a) {
                kernels::matmul_bt_acc(gd, val(*b), slot(grads, nodes, *a), m, k, n);
            }
            if rg(*b) {
                kernels::matmul_at_acc(val(*a), gd, slot(grads, nodes, *b), m, k, n);
            }
        }
        Op::Transpose(a) => {
            if rg(*a) {
                let (m, n) = nodes[*a].value.dims2().expect("rank-2");
                let ga = slot(grads, nodes, *a);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += gd[j * m + i];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for &i in &[*a, *b] {
                if rg(i) {
                    for (x, &y) in slot(grads, nodes, i).iter_mut().zip(gd) {
                        *x += y;
                    }
                }
            }
        }
        Op::AddRow(a, b) => {
            if rg(*a) {
                for (x, &y) in slot(grads, nodes, *a).iter_mut().zip(gd) {
                    *x += y;
                }
            }
            if rg(*b) {
                let gb = slot(grads, nodes, *b);
                let n = gb.len();
                for row in gd.chunks(n) {
                    for (x, &y) in gb.iter_mut().zip(row) {
                        *x += y;
                    }
                }
            }
        }
        Op::Sub(a, b) => {
            if rg(*a) {
                for (x, &y) in slot(grads, nodes, *a).iter_mut().zip(gd) {
                    *x += y;
                }
            }
            if rg(*b) {
                for (x, &y) in slot(grads, nodes, *b).iter_mut().zip(gd) {
                    *x -= y;
                }
            }
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                let vb = val(*b);
                for ((x, &y), &w) in slot(grads, nodes, *a).iter_mut().zip(gd).zip(vb) {
                    *x += y * w;
                }
            }
            if rg(*b) {
                let va = val(*a);
                for ((x, &y), &w) in slot(grads, nodes, *b).iter_mut().zip(gd).zip(va) {
                    *x += y * w;
                }
            }
        }
        Op::Scale(a, factor) => {
            if rg(*a) {
                for (x, &y) in slot(grads, nodes, *a).iter_mut().zip(gd) {
                    *x += y * *factor;
                }
            }
        }
        Op::Sum(a) => {
            if rg(*a) {
                let s = gd[0];
                for x in slot(grads, nodes, *a).iter_mut() {
                    *x += s;
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = split_axis(g.shape(), *axis);
            let mut offset = 0;
            for &i in inputs {
                let ext = nodes[i].value.shape()[*axis];
                if rg(i) {
                    let gi = slot(grads, nodes, i);
                    let block = ext * inner;
                    for o in 0..outer {
                        let src = &gd[o * total * inner + offset * inner..][..block];
                        for (x, &y) in gi[o * block..(o + 1) * block].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
                offset += ext;
            }
        }
        Op::Slice { input, axis, start } => {
            if rg(*input) {
                let (outer, ext, inner) = split_axis(nodes[*input].value.shape(), *axis);
                let len = g.shape()[*axis];
                let gi = slot(grads, nodes, *input);
                for o in 0..outer {
                    let dst = &mut gi[o * ext * inner + start * inner..][..len * inner];
                    for (x, &y) in dst.iter_mut().zip(&gd[o * len * inner..(o + 1) * len * inner]) {
                        *x += y;
                    }
                }
            }
        }
        Op::Tanh(a) => {
            if rg(*a) {
                let out = node.value.data();
                for ((x, &y), &t) in slot(grads, nodes, *a).iter_mut().zip(gd).zip(out) {
                    *x += y * (F::one() - t * t);
                }
            }
        }
        Op::Sigmoid(a) => {
            if rg(*a) {
                let out = node.value.data();
                for ((x, &y), &s) in slot(grads, nodes, *a).iter_mut().zip(gd).zip(out) {
                    *x += y * s * (F::one() - s);
                }
            }
        }
        Op::Relu(a) => {
            if rg(*a) {
                let inp = val(*a);
                for ((x, &y), &v) in slot(grads, nodes, *a).iter_mut().zip(gd).zip(inp) {
                    if v > F::zero() {
                        *x += y;
                    }
                }
            }
        }
        Op::Softmax { input, axis } => {
            if rg(*input) {
                let out = node.value.data();
                let (outer, ext, inner) = split_axis(node.value.shape(), *axis);
                let gi = slot(grads, nodes, *input);
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| o * ext * inner + k * inner + i;
                        let mut dotp = F::zero();
                        for k in 0..ext {
                            dotp += gd[idx(k)] * out[idx(k)];
                        }
                        for k in 0..ext {
                            gi[idx(k)] += out[idx(k)] * (gd[idx(k)] - dotp);
                        }
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            if rg(*table) {
                let dim = nodes[*table].value.shape()[1];
                let gt = slot(grads, nodes, *table);
                for (r, &id) in ids.iter().enumerate() {
                    for (x, &y) in gt[id * dim..(id + 1) * dim].iter_mut().zip(&gd[r * dim..(r + 1) * dim]) {
                        *x += y;
                    }
                }
            }
        }
        Op::Conv1d { input, kernel, rate } => {
            let cin = nodes[*input].value.shape()[1];
            let (taps, cout) = {
                let s = nodes[*kernel].value.shape();
                (s[0], s[2])
            };
            let out_len = g.shape()[0];
            if rg(*input) {
                let w = val(*kernel);
                let gx = slot(grads, nodes, *input);
                for j in 0..out_len {
                    let g_row = &gd[j * cout..(j + 1) * cout];
                    for k in 0..taps {
                        let pos = j + k * rate;
                        let w_k = &w[k * cin * cout..(k + 1) * cin * cout];
                        kernels::matmul_bt_acc(g_row, w_k, &mut gx[pos * cin..(pos + 1) * cin], 1, cin, cout);
                    }
                }
            }
            if rg(*kernel) {
                let x = val(*input);
                let gw = slot(grads, nodes, *kernel);
                for j in 0..out_len {
                    let g_row = &gd[j * cout..(j + 1) * cout];
                    for k in 0..taps {
                        let pos = j + k * rate;
                        let x_row = &x[pos * cin..(pos + 1) * cin];
                        kernels::matmul_at_acc(
                            x_row,
                            g_row,
                            &mut gw[k * cin * cout..(k + 1) * cin * cout],
                            1,
                            cin,
                            cout,
                        );
                    }
                }
            }
        }
        Op::CrossEntropy { logits, targets, probs } => {
            if rg(*logits) {
                let s = gd[0];
                let classes = probs.len() / targets.len();
                let gl = slot(grads, nodes, *logits);
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..classes {
                        let mut d = probs[r * classes + c];
                        if c == t {
                            d -= F::one();
                        }
                        gl[r * classes + c] += s * d;
                    }
                }
            }
        }
    }
}
