use std::collections::{HashMap, HashSet};

use super::{GradCtx, Real, Tensor};
use crate::error::{Result, VigError};

/// One recorded op in topological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub op: &'static str,
    pub inputs: Vec<u64>,
    pub output: u64,
}

/// The ops that lead to a tensor, restricted to those participating in
/// gradient computation, ordered so every input precedes its output.
#[derive(Debug, Clone, Default)]
pub struct OpTrace {
    pub entries: Vec<TraceEntry>,
}

fn reachable<T: Real>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut seen = HashSet::new();
    let mut stack = vec![root.clone()];
    let mut nodes = Vec::new();
    while let Some(t) = stack.pop() {
        if !t.tracks_grad() || !seen.insert(t.id()) {
            continue;
        }
        if let Some(op) = &t.node.op {
            stack.extend(op.inputs.iter().cloned());
        }
        nodes.push(t);
    }
    nodes.sort_by_key(Tensor::id);
    nodes
}

impl OpTrace {
    pub fn of<T: Real>(root: &Tensor<T>) -> Self {
        let entries = reachable(root)
            .iter()
            .filter_map(|t| {
                t.node.op.as_ref().map(|op| TraceEntry {
                    op: op.kind,
                    inputs: op.inputs.iter().map(Tensor::id).collect(),
                    output: t.id(),
                })
            })
            .collect();
        OpTrace { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<T: Real> Tensor<T> {
    pub fn trace(&self) -> OpTrace {
        OpTrace::of(self)
    }

    /// Propagates d(self)/d(leaf) into every trainable leaf reachable from
    /// this scalar. Gradients add to whatever the leaves already hold.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(VigError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.tracks_grad() {
            return Ok(());
        }
        let order = reachable(self);
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            let Some(op) = &node.node.op else {
                node.accumulate_grad(&grad);
                continue;
            };
            let ctx = GradCtx {
                inputs: &op.inputs,
                output: node.data(),
                grad: &grad,
            };
            let input_grads = (op.backward)(&ctx);
            debug_assert_eq!(input_grads.len(), op.inputs.len(), "{}: grad arity", op.kind);
            for (input, g) in op.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !input.tracks_grad() {
                    continue;
                }
                debug_assert_eq!(g.len(), input.numel(), "{}: grad size", op.kind);
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        pending.insert(input.id(), g);
                    }
                }
            }
        }
        Ok(())
    }
}
