use std::collections::HashMap;

use super::ops::{self, Op};
use super::{Float, ParamId, ParamStore, StatsId, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Option<Vec<T>>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Records one forward pass. Nodes are appended in execution order, so the
/// node list is already topologically sorted for the backward sweep.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grad_enabled: bool,
    param_leaves: HashMap<ParamId, Var>,
    bn_updates: Vec<(StatsId, Vec<T>, Vec<T>)>,
    live_bytes: usize,
    peak_bytes: usize,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            param_leaves: HashMap::new(),
            bn_updates: Vec::new(),
            live_bytes: 0,
            peak_bytes: 0,
        }
    }

    /// A tape that records no backward information and lets callers release
    /// intermediates early.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of data-flow edges recorded so far.
    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.op.inputs().len()).sum()
    }

    /// High-water mark of bytes held by recorded values.
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }

    pub fn live_bytes(&self) -> usize {
        self.live_bytes
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if let Some(bad) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("{} (element {bad})", op.name()),
            });
        }
        let needs_grad = self.grad_enabled
            && match &op {
                Op::Input { requires_grad } => *requires_grad,
                Op::Param => true,
                other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
            };
        self.live_bytes += value.len() * T::BYTES;
        self.peak_bytes = self.peak_bytes.max(self.live_bytes);
        self.nodes.push(Node {
            shape,
            value: Some(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.push(shape, tensor.into_data(), Op::Input { requires_grad })
            .expect("input tensors are validated on construction")
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        for v in t.data() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    op: "constant".into(),
                });
            }
        }
        Ok(self.input(t))
    }

    /// Leaf for a stored parameter. Repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let t = &store.get(id).value;
        let v = self
            .push(t.shape().to_vec(), t.data().to_vec(), Op::Param)
            .unwrap_or_else(|e| panic!("parameter {}: {e}", store.get(id).name));
        self.param_leaves.insert(id, v);
        v
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Rows and columns of a rank-2 value.
    pub fn dims2(&self, v: Var) -> (usize, usize) {
        match self.nodes[v.0].shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            s => panic!("expected rank-2 value, got {s:?}"),
        }
    }

    pub fn value(&self, v: Var) -> &[T] {
        self.nodes[v.0]
            .value
            .as_deref()
            .expect("value was released")
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(&self.nodes[v.0].shape, self.value(v).to_vec())
            .expect("recorded values are shape-consistent")
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    /// Frees an intermediate on an inference tape. No-op when recording gradients.
    pub fn release(&mut self, v: Var) {
        if self.grad_enabled {
            return;
        }
        if let Some(buf) = self.nodes[v.0].value.take() {
            self.live_bytes -= buf.len() * T::BYTES;
        }
    }

    pub(crate) fn record_bn_update(&mut self, id: StatsId, mean: Vec<T>, var: Vec<T>) {
        self.bn_updates.push((id, mean, var));
    }

    /// Batch statistics observed by training-mode batch norms, in execution order.
    pub fn bn_updates(&self) -> &[(StatsId, Vec<T>, Vec<T>)] {
        &self.bn_updates
    }

    /// Folds recorded batch statistics into the running statistics.
    pub fn apply_bn_updates(&self, store: &mut ParamStore<T>, momentum: f64) {
        let m = T::from_f64(momentum);
        let keep = T::one() - m;
        for (id, mean, var) in &self.bn_updates {
            let stats = store.stats_mut(*id);
            for (r, &b) in stats.mean.iter_mut().zip(mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in stats.var.iter_mut().zip(var) {
                *r = keep * *r + m * b;
            }
        }
    }

    /// Reverse sweep from a scalar output. Each node is visited once, in
    /// reverse recording order; gradients reaching a node along several paths
    /// are summed before it propagates further.
    pub fn backward(&self, output: Var) -> Result<Grads<T>> {
        if !self.grad_enabled {
            return Err(Error::InvalidArgument(
                "backward on an inference tape".into(),
            ));
        }
        let out = &self.nodes[output.0];
        if out.value.as_ref().map(Vec::len) != Some(1) {
            return Err(Error::shape(
                "backward",
                format!("output must be a scalar, got {:?}", out.shape),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            ops::backward(self, id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Grads {
            grads,
            params: self.param_leaves.iter().map(|(&p, &v)| (p, v)).collect(),
        })
    }

    pub(crate) fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        let mut params = self.params.clone();
        params.sort();
        for (id, v) in params {
            if let Some(g) = self.get(v) {
                store.get_mut(id).value.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Euclidean norm of the gradient at `v`, zero when it received none.
    pub fn norm(&self, v: Var) -> f64 {
        self.get(v)
            .map(|g| g.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt())
            .unwrap_or(0.0)
    }
}

pub(crate) fn add_into<T: Float>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}
