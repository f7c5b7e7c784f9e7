use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Additive attention mask shared by every window of a batch.
///
/// `values` has shape `[windows, n, n]`. Softmax row block `b` (of the
/// `[batch * windows * heads, n, n]` logits) uses window `(b / heads) % windows`.
#[derive(Debug)]
pub struct AttentionMask<T> {
    pub values: Vec<T>,
    pub windows: usize,
    pub tokens: usize,
    pub heads: usize,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    Sum(Var),
    WeightedSum(Var, Rc<Vec<T>>),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
        alpha: T,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        kernel: usize,
        pad: usize,
    },
    Gather {
        x: Var,
        index: Rc<Vec<u32>>,
    },
    Concat(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        // per-row (mean, inverse std)
        stats: Vec<(T, T)>,
    },
    Softmax(Var),
    RobustLoss {
        x: Var,
        target: Rc<Vec<T>>,
        beta: T,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Gelu(x)
            | Op::Sum(x)
            | Op::WeightedSum(x, _)
            | Op::Softmax(x) => vec![*x],
            Op::Linear { x, w, b } | Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Bmm { a, b, .. } => vec![*a, *b],
            Op::Gather { x, .. } | Op::RobustLoss { x, .. } => vec![*x],
            Op::Concat(parts) => parts.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Define-by-run tape. Every op appends a node; [`Graph::backward`] walks the
/// tape in reverse.
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        let value = self.value(output);
        assert_eq!(value.len(), 1, "backward requires a scalar output");
        self.backward_with_seed(output, vec![T::one()])
    }

    /// Reverse pass seeded with an arbitrary output cotangent.
    pub fn backward_with_seed(&self, output: Var, seed: Vec<T>) -> Gradients<T> {
        assert_eq!(seed.len(), self.value(output).len());
        let mut grads = GradStore {
            grads: (0..self.nodes.len()).map(|_| None).collect(),
        };
        if !self.nodes[output.0].needs_grad {
            return Gradients { grads: grads.grads };
        }
        grads.grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = grads.grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &grad, &mut grads);
        }
        // Only leaves keep their gradient; intermediates were consumed above.
        Gradients { grads: grads.grads }
    }

    fn backward_node(&self, idx: usize, grad: &[T], grads: &mut GradStore<T>) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                grads.add_slice(self, *a, grad);
                grads.add_slice(self, *b, grad);
            }
            Op::Sub(a, b) => {
                grads.add_slice(self, *a, grad);
                if let Some(gb) = grads.slot(self, *b) {
                    for (g, d) in gb.iter_mut().zip(grad) {
                        *g = *g - *d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                if let Some(ga) = grads.slot(self, *a) {
                    for ((g, d), y) in ga.iter_mut().zip(grad).zip(bv) {
                        *g = *g + *d * *y;
                    }
                }
                if let Some(gb) = grads.slot(self, *b) {
                    for ((g, d), x) in gb.iter_mut().zip(grad).zip(av) {
                        *g = *g + *d * *x;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = grads.slot(self, *x) {
                    for (g, d) in gx.iter_mut().zip(grad) {
                        *g = *g + *d * *c;
                    }
                }
            }
            Op::Relu(x) => crate::ops::elementwise::relu_backward(self, *x, grad, grads),
            Op::Gelu(x) => crate::ops::elementwise::gelu_backward(self, *x, grad, grads),
            Op::Sum(x) => {
                if let Some(gx) = grads.slot(self, *x) {
                    for g in gx.iter_mut() {
                        *g = *g + grad[0];
                    }
                }
            }
            Op::WeightedSum(x, w) => {
                if let Some(gx) = grads.slot(self, *x) {
                    for (g, wi) in gx.iter_mut().zip(w.iter()) {
                        *g = *g + grad[0] * *wi;
                    }
                }
            }
            Op::Linear { x, w, b } => {
                crate::ops::linear::linear_backward(self, *x, *w, *b, grad, grads)
            }
            Op::Bmm {
                a,
                b,
                trans_b,
                alpha,
            } => crate::ops::linear::bmm_backward(self, *a, *b, *trans_b, *alpha, grad, grads),
            Op::Conv2d {
                x,
                w,
                b,
                kernel,
                pad,
            } => crate::ops::conv::conv2d_backward(self, *x, *w, *b, *kernel, *pad, grad, grads),
            Op::Gather { x, index } => {
                if let Some(gx) = grads.slot(self, *x) {
                    for (d, &src) in grad.iter().zip(index.iter()) {
                        gx[src as usize] = gx[src as usize] + *d;
                    }
                }
            }
            Op::Concat(parts) => crate::ops::gather::concat_backward(self, parts, grad, grads),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => crate::ops::norm::layer_norm_backward(
                self, *x, *gamma, *beta, stats, grad, grads,
            ),
            Op::Softmax(x) => {
                crate::ops::softmax::softmax_backward(self, idx, *x, grad, grads)
            }
            Op::RobustLoss { x, target, beta } => {
                crate::ops::loss::robust_loss_backward(self, *x, target, *beta, grad, grads)
            }
        }
    }
}

pub(crate) struct GradStore<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> GradStore<T> {
    /// Mutable gradient buffer for `v`, allocated on first use. `None` when
    /// `v` does not need a gradient.
    pub(crate) fn slot(&mut self, graph: &Graph<T>, v: Var) -> Option<&mut [T]> {
        let node = &graph.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let len = node.value.len();
        Some(
            self.grads[v.0]
                .get_or_insert_with(|| vec![T::zero(); len])
                .as_mut_slice(),
        )
    }

    pub(crate) fn add_slice(&mut self, graph: &Graph<T>, v: Var, grad: &[T]) {
        if let Some(g) = self.slot(graph, v) {
            for (a, b) in g.iter_mut().zip(grad) {
                *a = *a + *b;
            }
        }
    }
}

/// Leaf gradients produced by a reverse pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` if it did not influence the output.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
