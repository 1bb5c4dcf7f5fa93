//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s and replays them
//! backwards to produce exact analytic gradients. The design is deliberately
//! small: dynamic-rank `ndarray` buffers, an explicit [`Op`] enum, and one
//! backward pass per scalar loss. Layout conventions used throughout the
//! crate: image-like tensors are `[C, H, W]`, token maps are `[N, C]` (one row
//! per token), batched attention tensors are `[B, m, n]`.
//!
//! Two kinds of leaves exist: `constant` (no gradient) and `param` (gradient
//! tracked). Everything downstream tracks gradients only if some ancestor is a
//! param, so inference-style evaluation through the same code path skips all
//! backward bookkeeping.

mod conv;
mod ops;

use ndarray::{ArrayD, IxDyn};

/// Handle to a tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node {
    pub value: ArrayD<f64>,
    pub op: Op,
    /// True when a param is reachable through this node.
    pub needs: bool,
}

/// Recorded operation; fields are input node ids plus immutable attributes.
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Abs(usize),
    Sqrt(usize),
    Exp(usize),
    Ln(usize),
    Sigmoid(usize),
    Tanh(usize),
    Silu(usize),
    Gelu(usize),
    MatMul(usize, usize),
    Bmm(usize, usize),
    Reshape(usize),
    Transpose2(usize),
    Permute3_021(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    SliceAxis { input: usize, axis: usize, start: usize, len: usize },
    GatherRows { input: usize, idx: Vec<usize> },
    SoftmaxLast(usize),
    SumAll(usize),
    MeanAll(usize),
    AddRowVec(usize, usize),
    LayerNormRows { x: usize, gain: usize, bias: usize, eps: f64 },
    CrossEntropyLogits { logits: usize, labels: Vec<i64> },
    Conv2d { x: usize, w: usize, b: usize, stride: usize, pad: usize },
    NearestUp2(usize),
    BilinearResize { input: usize, out_h: usize, out_w: usize },
    GaussFilter { input: usize, kernel: Vec<f64> },
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    g: Vec<Option<ArrayD<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.g.get(v.0).and_then(|o| o.as_ref())
    }
    pub fn take(&mut self, v: Var) -> Option<ArrayD<f64>> {
        self.g.get_mut(v.0).and_then(|o| o.take())
    }
}

#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub(crate) fn push(&mut self, value: ArrayD<f64>, op: Op, needs: bool) -> Var {
        self.nodes.push(Node { value, op, needs });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs
    }

    /// Tensor value of `v`.
    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `[1]`-shaped tensor.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "expected scalar tensor");
        val.iter().next().copied().unwrap()
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf with gradient tracking.
    pub fn param(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[1]), value))
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate only into
    /// nodes on a param-reaching path; everything else stays `None`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut g: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(ArrayD::from_elem(IxDyn(&[1]), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs {
                g[i] = None;
                continue;
            }
            let Some(grad) = g[i].take() else { continue };
            self.backprop_node(i, &grad, &mut g);
            g[i] = Some(grad);
        }
        Grads { g }
    }

    /// Add `delta` into the gradient slot of node `id` (if it tracks grads).
    pub(crate) fn acc(&self, g: &mut [Option<ArrayD<f64>>], id: usize, delta: ArrayD<f64>) {
        if !self.nodes[id].needs {
            return;
        }
        match &mut g[id] {
            Some(acc) => *acc += &delta,
            slot @ None => *slot = Some(delta),
        }
    }
}

/// Relative error between an analytic and a numerical derivative, with an
/// absolute floor so that near-zero pairs compare on absolute difference.
pub fn grad_rel_err(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale <= abs_floor {
        0.0
    } else {
        diff / scale
    }
}

/// Central finite difference of `f` at `x` (perturbing a copy via `set`).
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[cfg(test)]
mod tests;
