use super::graph::{sigmoid, transpose_data, Graph, Node, Op, Var};
use super::{gemm, split_axis, Real, Transpose, LOG_EPS};
use crate::error::{Error, Result};

struct Accum<'a, T: Real> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Real> Accum<'_, T> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn add(&mut self, v: Var, contribution: Vec<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }
}

impl<T: Real> Graph<T> {
    /// Reverse-mode sweep from a scalar `root`.
    ///
    /// Fills gradients for every node that depends on a `requires_grad`
    /// leaf; read them with [`Graph::grad`]. A graph supports exactly one
    /// backward pass.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract("backward already ran on this graph".into()));
        }
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        self.consumed = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![T::one()]);
        let mut acc = Accum {
            nodes: &self.nodes,
            grads: &mut self.grads,
        };
        let nodes = acc.nodes;
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = acc.grads[i].clone() else {
                continue;
            };
            propagate(&mut acc, node, &g);
        }
        Ok(())
    }
}

fn propagate<T: Real>(acc: &mut Accum<'_, T>, node: &Node<T>, g: &[T]) {
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc.add(*a, g.to_vec());
            acc.add(*b, g.to_vec());
        }
        Op::Sub(a, b) => {
            acc.add(*a, g.to_vec());
            acc.add(*b, g.iter().map(|&v| -v).collect());
        }
        Op::Mul(a, b) => {
            if acc.wants(*a) {
                let bd = acc.data(*b);
                let ga = g.iter().zip(bd).map(|(&x, &y)| x * y).collect();
                acc.add(*a, ga);
            }
            if acc.wants(*b) {
                let ad = acc.data(*a);
                let gb = g.iter().zip(ad).map(|(&x, &y)| x * y).collect();
                acc.add(*b, gb);
            }
        }
        Op::AddBroadcast(a, b) => {
            acc.add(*a, g.to_vec());
            if acc.wants(*b) {
                let inner = acc.data(*b).len();
                let mut gb = vec![T::zero(); inner];
                for chunk in g.chunks(inner) {
                    for (d, &v) in gb.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                acc.add(*b, gb);
            }
        }
        Op::MulBroadcast(a, b) => {
            let outer = acc.data(*b).len();
            let inner = g.len() / outer;
            if acc.wants(*a) {
                let bd = acc.data(*b);
                let mut ga = g.to_vec();
                for (chunk, &s) in ga.chunks_mut(inner).zip(bd) {
                    for v in chunk {
                        *v *= s;
                    }
                }
                acc.add(*a, ga);
            }
            if acc.wants(*b) {
                let ad = acc.data(*a);
                let gb = g
                    .chunks(inner)
                    .zip(ad.chunks(inner))
                    .map(|(gc, ac)| gc.iter().zip(ac).map(|(&x, &y)| x * y).sum())
                    .collect();
                acc.add(*b, gb);
            }
        }
        Op::Scale(x, c) => acc.add(*x, g.iter().map(|&v| v * *c).collect()),
        Op::Relu(x) => {
            let xd = acc.data(*x);
            let gx = g
                .iter()
                .zip(xd)
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            acc.add(*x, gx);
        }
        Op::Sigmoid(x) => {
            let xd = acc.data(*x);
            let gx = g
                .iter()
                .zip(xd)
                .map(|(&gv, &xv)| {
                    let s = sigmoid(xv);
                    gv * s * (T::one() - s)
                })
                .collect();
            acc.add(*x, gx);
        }
        Op::Exp(x) => acc.add(*x, g.iter().zip(out).map(|(&gv, &y)| gv * y).collect()),
        Op::Log(x) => {
            let eps = T::of(LOG_EPS);
            let xd = acc.data(*x);
            acc.add(*x, g.iter().zip(xd).map(|(&gv, &xv)| gv / (xv + eps)).collect());
        }
        Op::SumAxis { x, axis } => {
            let (outer, n, inner) = split_axis(acc.shape(*x), *axis);
            let mut gx = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                for i in 0..n {
                    let base = (o * n + i) * inner;
                    gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            acc.add(*x, gx);
        }
        Op::Sum(x) => {
            let n = acc.data(*x).len();
            acc.add(*x, vec![g[0]; n]);
        }
        Op::Mean(x) => {
            let n = acc.data(*x).len();
            acc.add(*x, vec![g[0] / T::of(n as f64); n]);
        }
        Op::Reshape(x) => acc.add(*x, g.to_vec()),
        Op::Transpose(x) => {
            let s = node.value.shape();
            let r = s.len();
            acc.add(*x, transpose_data(g, s[r - 2], s[r - 1]));
        }
        Op::MatMul { a, b, batch, m, k, n, shared_rhs } => {
            let (batch, m, k, n) = (*batch, *m, *k, *n);
            if acc.wants(*a) {
                let bd = acc.data(*b);
                let mut ga = vec![T::zero(); batch * m * k];
                for i in 0..batch {
                    gemm(
                        Transpose::No,
                        Transpose::Yes,
                        m,
                        k,
                        n,
                        T::one(),
                        &g[i * m * n..(i + 1) * m * n],
                        &bd[i * k * n..(i + 1) * k * n],
                        T::zero(),
                        &mut ga[i * m * k..(i + 1) * m * k],
                    );
                }
                acc.add(*a, ga);
            }
            if acc.wants(*b) {
                let ad = acc.data(*a);
                let mut gb = vec![T::zero(); batch * k * n];
                for i in 0..batch {
                    gemm(
                        Transpose::Yes,
                        Transpose::No,
                        k,
                        n,
                        m,
                        T::one(),
                        &ad[i * m * k..(i + 1) * m * k],
                        &g[i * m * n..(i + 1) * m * n],
                        T::zero(),
                        &mut gb[i * k * n..(i + 1) * k * n],
                    );
                }
                debug_assert!(!*shared_rhs || batch == 1);
                acc.add(*b, gb);
            }
        }
        Op::Conv2d { x, w, b, geom } => {
            let want_x = acc.wants(*x);
            let (gx, gw, gb) = geom.backward(acc.data(*x), acc.data(*w), g, want_x);
            if let Some(gx) = gx {
                acc.add(*x, gx);
            }
            acc.add(*w, gw);
            acc.add(*b, gb);
        }
        Op::MaxPool { x, argmax } => {
            let mut gx = vec![T::zero(); acc.data(*x).len()];
            for (&src, &gv) in argmax.iter().zip(g) {
                gx[src] += gv;
            }
            acc.add(*x, gx);
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
            let s = acc.shape(*x);
            let (batch, channels, hw) = (s[0], s[1], s[2] * s[3]);
            let mut sum_g = vec![T::zero(); channels];
            let mut sum_gx = vec![T::zero(); channels];
            for bi in 0..batch {
                for c in 0..channels {
                    let base = (bi * channels + c) * hw;
                    for i in base..base + hw {
                        sum_g[c] += g[i];
                        sum_gx[c] += g[i] * xhat[i];
                    }
                }
            }
            if acc.wants(*x) {
                let gam = acc.data(*gamma);
                let count = T::of((batch * hw) as f64);
                let mut gx = vec![T::zero(); g.len()];
                for bi in 0..batch {
                    for c in 0..channels {
                        let base = (bi * channels + c) * hw;
                        let scale = gam[c] * inv_std[c];
                        for i in base..base + hw {
                            gx[i] = if *train {
                                scale * (g[i] - sum_g[c] / count - xhat[i] * sum_gx[c] / count)
                            } else {
                                scale * g[i]
                            };
                        }
                    }
                }
                acc.add(*x, gx);
            }
            acc.add(*gamma, sum_gx);
            acc.add(*beta, sum_g);
        }
        Op::Softmax { x, axis, tau } => {
            let (outer, n, inner) = split_axis(node.value.shape(), *axis);
            let mut gx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let dot: T = (0..n).map(|j| g[idx(j)] * out[idx(j)]).sum();
                    for j in 0..n {
                        gx[idx(j)] = out[idx(j)] * (g[idx(j)] - dot) / *tau;
                    }
                }
            }
            acc.add(*x, gx);
        }
        Op::SqDist { q, p } => {
            let (m, d) = (acc.shape(*q)[0], acc.shape(*q)[1]);
            let k = acc.shape(*p)[0];
            let (qd, pd) = (acc.data(*q), acc.data(*p));
            let mut gq = vec![T::zero(); m * d];
            let mut gp = vec![T::zero(); k * d];
            let two = T::of(2.0);
            for i in 0..m {
                for j in 0..k {
                    let gij = two * g[i * k + j];
                    for t in 0..d {
                        let diff = gij * (qd[i * d + t] - pd[j * d + t]);
                        gq[i * d + t] += diff;
                        gp[j * d + t] -= diff;
                    }
                }
            }
            acc.add(*q, gq);
            acc.add(*p, gp);
        }
        Op::Concat { xs, axis } => {
            let total = node.value.shape()[*axis];
            let (outer, _, inner) = split_axis(node.value.shape(), *axis);
            let mut offset = 0;
            for &v in xs {
                let n = acc.shape(v)[*axis];
                if acc.wants(v) {
                    let mut gv = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gv.extend_from_slice(&g[base..base + n * inner]);
                    }
                    acc.add(v, gv);
                }
                offset += n;
            }
        }
        Op::Narrow { x, axis, start } => {
            let (outer, n, inner) = split_axis(acc.shape(*x), *axis);
            let len = node.value.shape()[*axis];
            let mut gx = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                let dst = (o * n + start) * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            acc.add(*x, gx);
        }
        Op::Pick { x, labels } => {
            let k = acc.shape(*x)[1];
            let mut gx = vec![T::zero(); labels.len() * k];
            for (i, &l) in labels.iter().enumerate() {
                gx[i * k + l] = g[i];
            }
            acc.add(*x, gx);
        }
    }
}
