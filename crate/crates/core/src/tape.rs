//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! Every op appends a node holding its forward value, its parent handles and
//! a [`Backward`] rule. Nodes are appended in evaluation order, so the node
//! list is already topologically sorted and [`Tape::backward`] is a single
//! reverse sweep that visits each node once.
//!
//! A tape lives for one training step. After `backward` it is consumed and
//! further `backward` calls are rejected.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Vector-Jacobian product of one recorded op.
///
/// Returns one entry per parent; an entry may be `None` when `needs[i]` is
/// false (the parent does not require a gradient).
pub trait Backward: Send {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    rule: Option<Box<dyn Backward>>,
    requires_grad: bool,
    leaf: bool,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Registers a leaf whose gradient is wanted (a trainable parameter or
    /// an input under gradient check).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, true, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, false, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        v.tape == self.id && self.nodes[v.index].requires_grad
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Backward("variable is not on this tape".into()));
        }
        Ok(v.index)
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<usize>,
        rule: Option<Box<dyn Backward>>,
        requires_grad: bool,
        leaf: bool,
    ) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            parents,
            rule,
            requires_grad,
            leaf,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    /// Appends the result of an op. The rule is kept only if some parent
    /// participates in differentiation.
    pub fn record(
        &mut self,
        value: Tensor,
        parents: &[Var],
        rule: impl Backward + 'static,
    ) -> Result<Var> {
        let idx = parents
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<Vec<_>>>()?;
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        let rule: Option<Box<dyn Backward>> = if requires_grad {
            Some(Box::new(rule))
        } else {
            None
        };
        Ok(self.push(value, idx, rule, requires_grad, false))
    }

    /// Propagates `d(loss)/d(node)` back to every leaf.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        if self.consumed {
            return Err(Error::Backward(
                "tape already consumed by a previous backward pass".into(),
            ));
        }
        let shape = self.nodes[root].value.shape();
        if !shape.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be a scalar (1,1,1,1), got {shape}"
            )));
        }
        if !self.nodes[root].requires_grad {
            return Err(Error::Backward(
                "loss is detached: it does not depend on any differentiable leaf".into(),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::scalar(1.0));
        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].requires_grad)
                .collect();
            let parent_grads = rule.backward(&g, &inputs, &node.value, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let (Some(pg), true) = (pg, need) else {
                    continue;
                };
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                accumulate(&mut grads[p], pg);
            }
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            if node.leaf && node.requires_grad {
                out.push(Some(g.unwrap_or_else(|| Tensor::zeros(node.value.shape()))));
            } else {
                out.push(None);
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }

    // ---- elementwise core ------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.record(v, &[a, b], Linear2(1.0, 1.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.record(v, &[a, b], Linear2(1.0, -1.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.record(v, &[a, b], MulRule)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.record(v, &[a], ScaleRule(s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + s);
        self.record(v, &[a], ScaleRule(1.0))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.record(v, &[a], ReluRule)
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.record(v, &[a], SumRule)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

/// Gradients of a loss with respect to every differentiable leaf of a tape.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Moves a gradient out, leaving `None` behind.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}

struct Linear2(f64, f64);

impl Backward for Linear2 {
    fn backward(
        &self,
        g: &Tensor,
        _: &[&Tensor],
        _: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let scaled = |s: f64, need: bool| {
            need.then(|| {
                if s == 1.0 {
                    g.clone()
                } else {
                    g.map(|x| x * s)
                }
            })
        };
        vec![scaled(self.0, needs[0]), scaled(self.1, needs[1])]
    }
}

struct MulRule;

impl Backward for MulRule {
    fn backward(
        &self,
        g: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        vec![
            needs[0].then(|| {
                g.zip_map(b, |g, b| g * b)
                    .expect("shapes checked in forward")
            }),
            needs[1].then(|| {
                g.zip_map(a, |g, a| g * a)
                    .expect("shapes checked in forward")
            }),
        ]
    }
}

struct ScaleRule(f64);

impl Backward for ScaleRule {
    fn backward(&self, g: &Tensor, _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let s = self.0;
        vec![Some(if s == 1.0 {
            g.clone()
        } else {
            g.map(|x| x * s)
        })]
    }
}

struct ReluRule;

impl Backward for ReluRule {
    fn backward(
        &self,
        g: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        // subgradient at 0 is 0
        vec![Some(
            g.zip_map(inputs[0], |g, x| if x > 0.0 { g } else { 0.0 })
                .expect("shapes checked in forward"),
        )]
    }
}

struct SumRule;

impl Backward for SumRule {
    fn backward(
        &self,
        g: &Tensor,
        inputs: &[&Tensor],
        _: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape(), g.item()))]
    }
}
