//! Reverse-mode differentiation over a linear record of vector operations.

use super::dist::{sigmoid, softplus};
use super::kernels::{matvec_t_acc, outer_acc};
use super::layers::{DenseLayer, LstmGrads, LstmLayer};
use super::params::{Gradients, ParamId, ParameterStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    /// Constant input; receives no gradient.
    Input,
    Param(ParamId),
    Dense { layer: DenseLayer, x: NodeId },
    /// Value is `[h'; c']`, `aux` holds the activated gates.
    Lstm { layer: LstmLayer, x: NodeId, h: NodeId, c: NodeId },
    Slice { x: NodeId, start: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Square(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    SumAll(Vec<NodeId>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
    aux: Vec<f64>,
}

/// Records a forward computation against a frozen [`ParameterStore`] so
/// that [`Tape::backward`] can produce parameter gradients.
pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            aux: Vec::new(),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.input(vec![value])
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let value = self.store.value(id).to_vec();
        self.push(Op::Param(id), value)
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).to_vec();
        self.input(value)
    }

    pub fn dense(&mut self, layer: &DenseLayer, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.len() != layer.input {
            return Err(Error::DimensionMismatch {
                expected: layer.input,
                got: xv.len(),
            });
        }
        let mut out = vec![0.0; layer.output];
        layer.forward_into(self.store, xv, &mut out);
        Ok(self.push(Op::Dense { layer: *layer, x }, out))
    }

    /// One cell step; returns the new `(h, c)` nodes.
    pub fn lstm(
        &mut self,
        layer: &LstmLayer,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let n = layer.hidden;
        let (xv, hv, cv) = (self.value(x), self.value(h), self.value(c));
        if xv.len() != layer.input {
            return Err(Error::DimensionMismatch {
                expected: layer.input,
                got: xv.len(),
            });
        }
        if hv.len() != n || cv.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: hv.len().max(cv.len()),
            });
        }
        let mut gates = vec![0.0; 4 * n];
        let mut out = vec![0.0; 2 * n];
        let (h_out, c_out) = out.split_at_mut(n);
        layer.cell_forward(self.store, xv, hv, cv, &mut gates, h_out, c_out);
        let joint = self.push(
            Op::Lstm {
                layer: *layer,
                x,
                h,
                c,
            },
            out,
        );
        self.nodes[joint.0].aux = gates;
        Ok((self.slice(joint, 0, n), self.slice(joint, n, n)))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.value(x)[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, value)
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise operands differ in length");
        let value = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
        self.push(op, value)
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: NodeId, k: f64) -> NodeId {
        self.map(a, |x| x + k, Op::AddConst(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let value = v.iter().map(|x| x - lse).collect();
        self.push(Op::LogSoftmax(a), value)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).iter().sum();
        self.push(Op::Sum(a), vec![s])
    }

    /// Sum of scalar nodes. An empty list yields a constant zero.
    pub fn sum_all(&mut self, terms: &[NodeId]) -> NodeId {
        if terms.is_empty() {
            return self.constant(0.0);
        }
        let s = terms.iter().map(|&t| self.scalar(t)).sum();
        self.push(Op::SumAll(terms.to_vec()), vec![s])
    }

    /// Gradients of the scalar node `loss` with respect to every parameter
    /// that took part in computing it.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Tape(
                "loss node was not recorded on this tape".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, node has {} entries",
                self.nodes[loss.0].value.len()
            )));
        }
        let mut out = Gradients::empty(self.store.len());
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
            grads[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let len_of = |id: NodeId| self.nodes[id.0].value.len();
            let val = |id: NodeId| self.nodes[id.0].value.as_slice();
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    let slot = out.slot(*p, g.len());
                    slot.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Dense { layer, x } => {
                    let xv = val(*x);
                    outer_acc(&g, xv, out.slot(layer.weight, layer.input * layer.output));
                    out.slot(layer.bias, layer.output)
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                    let gx = acc(&mut grads, *x, xv.len());
                    matvec_t_acc(self.store.value(layer.weight), &g, gx);
                }
                Op::Lstm { layer, x, h, c } => {
                    let n = layer.hidden;
                    let mut w_ih = out.slots[layer.w_ih.0]
                        .take()
                        .unwrap_or_else(|| vec![0.0; 4 * n * layer.input]);
                    let mut w_hh = out.slots[layer.w_hh.0]
                        .take()
                        .unwrap_or_else(|| vec![0.0; 4 * n * n]);
                    let mut bias = out.slots[layer.bias.0]
                        .take()
                        .unwrap_or_else(|| vec![0.0; 4 * n]);
                    let (dx, dh, dc) = layer.cell_backward(
                        self.store,
                        val(*x),
                        val(*h),
                        val(*c),
                        &node.aux,
                        &node.value[n..],
                        &g[..n],
                        &g[n..],
                        &mut LstmGrads {
                            w_ih: Some(&mut w_ih),
                            w_hh: Some(&mut w_hh),
                            bias: Some(&mut bias),
                        },
                    );
                    out.slots[layer.w_ih.0] = Some(w_ih);
                    out.slots[layer.w_hh.0] = Some(w_hh);
                    out.slots[layer.bias.0] = Some(bias);
                    for (id, d) in [(*x, dx), (*h, dh), (*c, dc)] {
                        acc(&mut grads, id, d.len())
                            .iter_mut()
                            .zip(&d)
                            .for_each(|(a, b)| *a += b);
                    }
                }
                Op::Slice { x, start } => {
                    let gx = acc(&mut grads, *x, len_of(*x));
                    gx[*start..start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, _| gi);
                    add_into(acc(&mut grads, *b, g.len()), &g, |gi, _| gi);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, _| gi);
                    add_into(acc(&mut grads, *b, g.len()), &g, |gi, _| -gi);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, i| gi * bv[i]);
                    add_into(acc(&mut grads, *b, g.len()), &g, |gi, i| gi * av[i]);
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, i| gi / bv[i]);
                    add_into(acc(&mut grads, *b, g.len()), &g, |gi, i| {
                        -gi * av[i] / (bv[i] * bv[i])
                    });
                }
                Op::Scale(a, k) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, _| gi * k);
                }
                Op::AddConst(a) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, _| gi);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, i| {
                        gi * y[i] * (1.0 - y[i])
                    });
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, i| {
                        gi * (1.0 - y[i] * y[i])
                    });
                }
                Op::Softplus(a) => {
                    let xv = val(*a).to_vec();
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, i| gi * sigmoid(xv[i]));
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, i| gi * y[i]);
                }
                Op::Ln(a) => {
                    let xv = val(*a).to_vec();
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, i| gi / xv[i]);
                }
                Op::Square(a) => {
                    let xv = val(*a).to_vec();
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, i| 2.0 * gi * xv[i]);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let total: f64 = g.iter().sum();
                    add_into(acc(&mut grads, *a, g.len()), &g, |gi, i| {
                        gi - y[i].exp() * total
                    });
                }
                Op::Sum(a) => {
                    let n = len_of(*a);
                    acc(&mut grads, *a, n).iter_mut().for_each(|v| *v += g[0]);
                }
                Op::SumAll(terms) => {
                    for t in terms {
                        acc(&mut grads, *t, 1)[0] += g[0];
                    }
                }
            }
        }
        Ok(out)
    }
}

fn add_into(dst: &mut [f64], g: &[f64], f: impl Fn(f64, usize) -> f64) {
    for (i, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
        *d += f(gi, i);
    }
}
