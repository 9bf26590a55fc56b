//! Deterministic graph evaluation.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::graph::{LayerKind, Model, Node, INPUT};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    /// Outputs of the requested tap nodes, keyed by node name.
    pub tapped: BTreeMap<String, Tensor>,
}

/// Operand slots of each node and the last node that reads each output, so
/// intermediate activations can be dropped as soon as they are dead.
pub(crate) struct Schedule {
    /// `None` is the graph input.
    pub operands: Vec<Vec<Option<usize>>>,
    pub last_use: Vec<usize>,
    pub output: usize,
}

impl Schedule {
    pub fn new(model: &Model) -> Result<Self> {
        let g = &model.graph;
        let mut operands = Vec::with_capacity(g.nodes.len());
        let mut last_use: Vec<usize> = (0..g.nodes.len()).collect();
        for (i, node) in g.nodes.iter().enumerate() {
            let mut ops = Vec::new();
            for name in &node.inputs {
                if name == INPUT {
                    ops.push(None);
                } else {
                    let j = g.node_index(name).filter(|&j| j < i).ok_or_else(|| {
                        Error::Graph(format!("node `{}` consumes unknown `{name}`", node.name))
                    })?;
                    last_use[j] = i;
                    ops.push(Some(j));
                }
            }
            operands.push(ops);
        }
        let output = g
            .node_index(&g.output)
            .ok_or_else(|| Error::UnknownNode(g.output.clone()))?;
        last_use[output] = usize::MAX;
        Ok(Self { operands, last_use, output })
    }
}

/// Checks that a batch is `(N, C, H, W)` with the model's per-sample dims.
pub fn check_batch(model: &Model, batch: &Tensor) -> Result<()> {
    let d = batch.dims();
    if d.len() != 4 || d[1..] != model.graph.input_dims[..] {
        return Err(Error::Shape {
            node: INPUT.into(),
            detail: format!("batch dims {d:?} do not match model input {:?}", model.graph.input_dims),
        });
    }
    Ok(())
}

/// Evaluates a single node on already-computed operands.
pub fn eval_node(model: &Model, node: &Node, inputs: &[&Tensor]) -> Result<Tensor> {
    let named = |e: Error| match e {
        Error::InvalidTensor(detail) => Error::Shape { node: node.name.clone(), detail },
        other => other,
    };
    let x = inputs[0];
    let out = match &node.kind {
        LayerKind::Conv2d { weight, bias, stride, padding } => {
            let b = bias.as_deref().map(|b| model.tensor(b)).transpose()?;
            ops::conv2d_forward(x, model.tensor(weight)?, b.map(|t| t.data()), *stride, *padding)
        }
        LayerKind::Batchnorm2d { weight, bias, running_mean, running_var, eps } => {
            ops::batchnorm_forward(
                x,
                model.tensor(weight)?.data(),
                model.tensor(bias)?.data(),
                model.tensor(running_mean)?.data(),
                model.tensor(running_var)?.data(),
                *eps,
            )
        }
        LayerKind::Relu => Ok(ops::relu(x)),
        LayerKind::Maxpool2d { kernel, stride, padding } => ops::maxpool2d(x, *kernel, *stride, *padding),
        LayerKind::Avgpool2d { kernel, stride, padding } => ops::avgpool2d(x, *kernel, *stride, *padding),
        LayerKind::Globalavgpool => ops::global_avg_pool(x),
        LayerKind::Add => ops::add(x, inputs[1]),
        LayerKind::Flatten => ops::flatten(x),
        LayerKind::Linear { weight, bias } => {
            let b = bias.as_deref().map(|b| model.tensor(b)).transpose()?;
            ops::linear_forward(x, model.tensor(weight)?, b.map(|t| t.data()))
        }
    };
    out.map_err(named)
}

/// Runs the graph, calling `visit(index, node, output)` after each node.
pub(crate) fn walk(
    model: &Model,
    batch: &Tensor,
    mut visit: impl FnMut(usize, &Node, &Tensor) -> Result<()>,
) -> Result<Tensor> {
    check_batch(model, batch)?;
    let sched = Schedule::new(model)?;
    let mut slots: Vec<Option<Tensor>> = vec![None; model.graph.nodes.len()];
    for (i, node) in model.graph.nodes.iter().enumerate() {
        let inputs: Vec<&Tensor> = sched.operands[i]
            .iter()
            .map(|op| match op {
                None => batch,
                Some(j) => slots[*j].as_ref().expect("operand evaluated"),
            })
            .collect();
        let out = eval_node(model, node, &inputs)?;
        visit(i, node, &out)?;
        for j in sched.operands[i].iter().flatten() {
            if sched.last_use[*j] == i {
                slots[*j] = None;
            }
        }
        slots[i] = Some(out);
    }
    let out = slots[sched.output].take().expect("output evaluated");
    let n = batch.batch();
    out.reshape(vec![n, model.graph.num_classes])
}

/// Evaluates the model on `batch`, returning logits plus the outputs of the
/// tap nodes (conv taps are pre-BN activations).
pub fn forward(model: &Model, batch: &Tensor, taps: &[&str]) -> Result<ForwardOutput> {
    for t in taps {
        if model.graph.node(t).is_none() {
            return Err(Error::UnknownNode(t.to_string()));
        }
    }
    let wanted: HashSet<&str> = taps.iter().copied().collect();
    let mut tapped = BTreeMap::new();
    let logits = walk(model, batch, |_, node, out| {
        if wanted.contains(node.name.as_str()) {
            tapped.insert(node.name.clone(), out.clone());
        }
        Ok(())
    })?;
    Ok(ForwardOutput { logits, tapped })
}

/// Logits only.
pub fn predict(model: &Model, batch: &Tensor) -> Result<Tensor> {
    walk(model, batch, |_, _, _| Ok(()))
}
