use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Value};

use super::ops;

/// Handle to a recorded node. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation.
///
/// `forward` is evaluated eagerly when the node is recorded. `backward` is the
/// vector-Jacobian product on the real view: complex values are treated as
/// pairs of reals, and a complex gradient holds `dL/dRe + i dL/dIm`.
pub trait Primitive<T: Scalar> {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Value<T>]) -> Result<Value<T>>;

    /// One entry per input; `None` when no gradient flows to that input.
    fn backward(
        &self,
        inputs: &[&Value<T>],
        output: &Value<T>,
        grad_output: &Value<T>,
    ) -> Result<Vec<Option<Value<T>>>>;
}

struct Node<T: Scalar> {
    value: Arc<Value<T>>,
    op: Option<Box<dyn Primitive<T>>>,
    inputs: Vec<NodeId>,
    param: Option<String>,
}

/// Eager tape. Nodes are appended in evaluation order, which is a valid
/// topological order, so the backward pass is a single reverse sweep.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Arc<Value<T>>, param: Option<String>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn input(&mut self, value: impl Into<Value<T>>) -> NodeId {
        self.push_leaf(Arc::new(value.into()), None)
    }

    /// Non-trainable leaf sharing an existing buffer.
    pub fn input_shared(&mut self, value: Arc<Value<T>>) -> NodeId {
        self.push_leaf(value, None)
    }

    /// Trainable leaf. Its gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: impl Into<Value<T>>) -> NodeId {
        self.push_leaf(Arc::new(value.into()), Some(name.into()))
    }

    pub fn param_shared(&mut self, name: impl Into<String>, value: Arc<Value<T>>) -> NodeId {
        self.push_leaf(value, Some(name.into()))
    }

    pub fn value(&self, id: NodeId) -> &Value<T> {
        &self.nodes[id.0].value
    }

    pub fn shared_value(&self, id: NodeId) -> Arc<Value<T>> {
        Arc::clone(&self.nodes[id.0].value)
    }

    pub fn real(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.value(id).as_real()
    }

    /// Evaluates `op` on the given nodes and appends the result.
    pub fn record(
        &mut self,
        op: impl Primitive<T> + 'static,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        self.record_boxed(Box::new(op), inputs)
    }

    pub fn record_boxed(
        &mut self,
        op: Box<dyn Primitive<T>>,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::invalid(format!("node {} does not exist", bad.0)));
        }
        let args: Vec<&Value<T>> = inputs.iter().map(|id| &*self.nodes[id.0].value).collect();
        let out = op.forward(&args)?;
        if !out.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            value: Arc::new(out),
            op: Some(op),
            inputs: inputs.to_vec(),
            param: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records an attribute-free primitive by name.
    pub fn record_named(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId> {
        let op = ops::by_name::<T>(name).ok_or_else(|| Error::UnknownPrimitive(name.into()))?;
        self.record_boxed(op, inputs)
    }

    /// Reverse sweep from a real scalar node. A graph can be differentiated once.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let seed = match &*self.nodes[loss.0].value {
            Value::Real(t) if t.len() == 1 => Value::Real(Tensor::from_fn(t.shape(), |_| T::one())),
            other => return Err(Error::NotScalar(other.shape().to_vec())),
        };
        self.consumed = true;

        let mut grads: Vec<Option<Value<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(seed);
        for idx in (0..=loss.0).rev() {
            let Some(op) = self.nodes[idx].op.as_ref() else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let args: Vec<&Value<T>> = node.inputs.iter().map(|id| &*self.nodes[id.0].value).collect();
            let input_grads = op.backward(&args, &node.value, &g)?;
            grads[idx] = Some(g);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.accumulate(&ig)?,
                    slot @ None => *slot = Some(ig),
                }
            }
        }

        let mut params = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = grads[idx]
                    .clone()
                    .unwrap_or_else(|| node.value.zeros_like());
                match params.get_mut(name) {
                    None => {
                        params.insert(name.clone(), g);
                    }
                    Some(acc) => Value::accumulate(acc, &g)?,
                }
            }
        }
        Ok(Gradients { params, nodes: grads })
    }
}

/// Result of a backward pass.
pub struct Gradients<T: Scalar> {
    params: BTreeMap<String, Value<T>>,
    nodes: Vec<Option<Value<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, name: &str) -> Option<&Value<T>> {
        self.params.get(name)
    }

    pub fn real(&self, name: &str) -> Result<&Tensor<T>> {
        self.param(name)
            .ok_or_else(|| Error::invalid(format!("no parameter named `{name}`")))?
            .as_real()
    }

    pub fn params(&self) -> &BTreeMap<String, Value<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Value<T>> {
        self.params
    }

    /// Gradient of any node (zero-shaped `None` when unreachable).
    pub fn node(&self, id: NodeId) -> Option<&Value<T>> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }
}
