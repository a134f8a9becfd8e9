//! Wengert-list tape: forward ops append nodes, `backward` walks them in reverse.
//!
//! A tape borrows its [`ParamStore`] for its whole lifetime, so parameter
//! values are read in place and never copied. One tape records one graph;
//! `backward` may run once per tape.

use std::borrow::Cow;

use crate::error::{Result, TensorError};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{cols_of, numel, rows_of, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Bcast {
    Same,
    Row,
}

#[derive(Debug)]
pub(crate) enum Op<F> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var, Bcast),
    Sub(Var, Var),
    Mul(Var, Var, Bcast),
    Scale(Var, F),
    AddConst(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<F>,
    },
    LayerNorm {
        x: Var,
        rstd: Vec<F>,
    },
    DepthwiseConv {
        x: Var,
        w: Var,
        b: Var,
    },
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    Grn {
        x: Var,
        gamma: Var,
        beta: Var,
        norms: Vec<F>,
        denom: F,
    },
    Rotary {
        x: Var,
        head_dim: usize,
        offset: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterRows {
        x: Var,
        idx: Vec<usize>,
    },
    MaskRows {
        x: Var,
        fill: Var,
        mask: Vec<bool>,
    },
    MeanRows(Var),
    BroadcastRows(Var),
    Sum(Var),
    WeightedSum(Var, Vec<F>),
    BceWithLogits {
        logits: Var,
        targets: Vec<F>,
    },
}

pub(crate) struct Node<'p, F: Real> {
    pub shape: Vec<usize>,
    pub value: Cow<'p, [F]>,
    pub op: Op<F>,
    pub requires_grad: bool,
}

pub struct Tape<'p, F: Real> {
    pub(crate) params: Option<&'p ParamStore<F>>,
    pub(crate) nodes: Vec<Node<'p, F>>,
    param_vars: Vec<Option<Var>>,
    grads: Vec<Option<Vec<F>>>,
    backward_done: bool,
}

impl<'p, F: Real> Default for Tape<'p, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Real> Tape<'p, F> {
    /// A tape without parameters (for free-standing functions).
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn with_params(store: &'p ParamStore<F>) -> Self {
        Self {
            params: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        value: Vec<F>,
        op: Op<F>,
        requires_grad: bool,
    ) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Input whose gradient is retained after `backward`.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        let p = store.get(id);
        self.nodes.push(Node {
            shape: p.value.shape().to_vec(),
            value: Cow::Borrowed(p.value.data()),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn rows(&self, v: Var) -> usize {
        rows_of(self.shape(v))
    }

    pub fn cols(&self, v: Var) -> usize {
        cols_of(self.shape(v))
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v)[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse pass from a scalar output.
    ///
    /// A tape accepts exactly one call; a second call returns
    /// [`TensorError::BackwardTwice`] so gradients are never silently doubled.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let out = &self.nodes[output.0];
        if out.value.len() != 1 {
            return Err(TensorError::NonScalarBackward(out.shape.clone()));
        }
        self.backward_done = true;
        let n = output.0 + 1;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[output.0] = Some(vec![F::one()]);
        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param) {
                self.grads[i] = Some(g);
                continue;
            }
            let contributions = self.vjp(i, &g);
            for (var, dg) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut self.grads[var.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&dg) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        Ok(())
    }

    /// Gradient of an input or parameter node after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Parameter gradients in store order; unused parameters get zeros.
    pub fn param_gradients(&self) -> Gradients<F> {
        let store = self.params.expect("tape has no parameter store");
        let mut out = Gradients::zeros_like(store);
        for (i, pv) in self.param_vars.iter().enumerate() {
            if let Some(v) = pv {
                if let Some(g) = self.grad(*v) {
                    out.values[i].copy_from_slice(g);
                }
            }
        }
        out
    }
}
