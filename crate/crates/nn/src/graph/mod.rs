//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its variables in execution
//! order. Calling [`Graph::backward`] on a scalar walks the tape in reverse and
//! accumulates vector-Jacobian products into a [`Gradients`] table.
//!
//! Sequence tensors use the `[batch, time, channels]` layout. Operations that
//! accept `lengths` treat frames `t >= lengths[b]` as padding: padding never
//! contributes to statistics, attention keys or losses.

mod attention;
mod dense;
mod elementwise;
mod loss;
mod norm;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub use attention::softmax;
pub use dense::conv_output_len;
pub use norm::{BatchStats, BnMode, RunningStats};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: dense::ConvGeometry,
        cols: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
        lengths: Option<Vec<usize>>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    Add(Var, Var),
    AddConst(Var),
    MaskFrames {
        x: Var,
        lengths: Vec<usize>,
    },
    Softmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        diff: Vec<f64>,
        count: usize,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<Option<usize>>,
        count: usize,
    },
    DotConst {
        x: Var,
        weights: Vec<f64>,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of a forward computation.
#[derive(Default)]
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

    /// Records a differentiable input (a parameter or a probe).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Option<Var>]) -> bool {
        vars.iter().flatten().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Back-propagates from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(NnError::InvalidArgument {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", loss_value.shape()),
            });
        }
        if !loss_value.item().is_finite() {
            return Err(NnError::NonFinite("loss".into()));
        }
        let mut grads = Gradients {
            grads: vec![None; self.nodes.len()],
        };
        grads.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads.grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads.grads[idx] = Some(gy);
                    continue;
                }
                Op::Linear { x, w, b } => dense::linear_backward(self, &mut grads, &gy, *x, *w, *b),
                Op::Conv1d {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => dense::conv1d_backward(self, &mut grads, &gy, *x, *w, *b, geom, cols),
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    training,
                    lengths,
                } => norm::batch_norm_backward(
                    self,
                    &mut grads,
                    &gy,
                    norm::BnSaved {
                        x: *x,
                        gamma: *gamma,
                        beta: *beta,
                        xhat,
                        inv_std,
                        training: *training,
                        lengths: lengths.as_deref(),
                    },
                ),
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => norm::layer_norm_backward(self, &mut grads, &gy, *x, *gamma, *beta, xhat, inv_std),
                Op::Relu(x) => elementwise::relu_backward(self, &mut grads, &gy, *x),
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, &gy);
                    self.accumulate(&mut grads, *b, &gy);
                }
                Op::AddConst(x) => self.accumulate(&mut grads, *x, &gy),
                Op::MaskFrames { x, lengths } => {
                    elementwise::mask_backward(self, &mut grads, gy, *x, lengths)
                }
                Op::Softmax { x, outer, n, inner } => attention::softmax_backward(
                    self,
                    &mut grads,
                    &gy,
                    *x,
                    &node.value,
                    (*outer, *n, *inner),
                ),
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => attention::attention_backward(self, &mut grads, &gy, *q, *k, *v, *heads, probs),
                Op::Mse { pred, diff, count } => {
                    let scale = 2.0 * gy[0] / *count as f64;
                    let g: Vec<f64> = diff.iter().map(|d| d * scale).collect();
                    self.accumulate_owned(&mut grads, *pred, g);
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    targets,
                    count,
                } => loss::cross_entropy_backward(
                    self, &mut grads, gy[0], *logits, probs, targets, *count,
                ),
                Op::DotConst { x, weights } => {
                    let g: Vec<f64> = weights.iter().map(|w| w * gy[0]).collect();
                    self.accumulate_owned(&mut grads, *x, g);
                }
                Op::WeightedSum(terms) => {
                    for (v, w) in terms {
                        self.accumulate_owned(&mut grads, *v, vec![w * gy[0]]);
                    }
                }
            }
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut Gradients, v: Var, g: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    fn accumulate_owned(&self, grads: &mut Gradients, v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients of a scalar with respect to every recorded variable.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the variable does not influence the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_lengths(op: &'static str, lengths: &[usize], b: usize, t: usize) -> Result<()> {
    if lengths.len() != b {
        return crate::error::shape_err(op, format!("{} lengths for batch of {b}", lengths.len()));
    }
    if let Some(&bad) = lengths.iter().find(|&&l| l > t || l == 0) {
        return crate::error::arg_err(op, format!("length {bad} outside 1..={t}"));
    }
    Ok(())
}
