use super::{ops, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        padding: usize,
    },
    Relu(Var),
    Upsample {
        x: Var,
        factor: usize,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Concat {
        a: Var,
        b: Var,
        split: usize,
    },
    Add(Var, Var),
    Mse {
        pred: Var,
        target: Var,
    },
    Sum(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::Relu(x) | Op::Upsample { x, .. } | Op::InstanceNorm { x, .. } | Op::Sum(x) => {
                vec![x]
            }
            Op::Concat { a, b, .. } | Op::Add(a, b) => vec![a, b],
            Op::Mse { pred, target } => vec![pred, target],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of tensor operations.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// the reverse index order is a valid topological order for backward.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visits: Vec<u32>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Number of times backward processed each node.
    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that gradients never flow through (inputs, targets,
    /// and outputs of non-differentiable transforms).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(w), self.value(b), padding)?;
        self.push(Op::Conv2d { x, w, b, padding }, y, "conv2d")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = ops::relu(self.value(x));
        self.push(Op::Relu(x), y, "relu")
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = ops::upsample_nearest(self.value(x), factor)?;
        self.push(Op::Upsample { x, factor }, y, "upsample_nearest")
    }

    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (y, inv_std) = ops::instance_norm(self.value(x), eps)?;
        self.push(Op::InstanceNorm { x, inv_std }, y, "instance_norm")
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat(self.value(a), self.value(b))?;
        let split = self.value(a).shape()[0];
        self.push(Op::Concat { a, b, split }, y, "concat")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        self.push(Op::Add(a, b), y, "add")
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let l = ops::mse_loss(self.value(pred), self.value(target))?;
        self.push(Op::Mse { pred, target }, Tensor::scalar(l), "mse_loss")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Op::Sum(x), Tensor::scalar(s), "sum")
    }

    /// Reverse-mode sweep from a scalar `loss`. Every node that requires a
    /// gradient and is reachable from `loss` gets one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss must be scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let mut visits = vec![0u32; n];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visits[i] += 1;
            for (input, contrib) in self.local_grads(&node.op, &node.value, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, visits })
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        Ok(match *op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, padding } => {
                let need_x = self.requires_grad(x);
                let (gx, gw, gb) = ops::conv2d_backward(
                    self.value(x),
                    self.value(w),
                    self.value(b),
                    padding,
                    g,
                    need_x,
                )?;
                let mut v = vec![(w, gw), (b, gb)];
                if let Some(gx) = gx {
                    v.push((x, gx));
                }
                v
            }
            Op::Relu(x) => vec![(x, ops::relu_backward(self.value(x), g))],
            Op::Upsample { x, factor } => vec![(x, ops::upsample_nearest_backward(g, factor)?)],
            Op::InstanceNorm { x, ref inv_std } => {
                vec![(x, ops::instance_norm_backward(out, inv_std, g)?)]
            }
            Op::Concat { a, b, split } => {
                let (ga, gb) = ops::split(g, split)?;
                vec![(a, ga), (b, gb)]
            }
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Mse { pred, target } => {
                let p = self.value(pred);
                let t = self.value(target);
                let scale = 2.0 * g.data()[0] / p.numel() as f64;
                let gp: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                let gt: Vec<f64> = gp.iter().map(|v| -v).collect();
                vec![
                    (pred, Tensor::new(p.shape().to_vec(), gp)?),
                    (target, Tensor::new(t.shape().to_vec(), gt)?),
                ]
            }
            Op::Sum(x) => vec![(x, Tensor::full(self.value(x).shape(), g.data()[0]))],
        })
    }
}
