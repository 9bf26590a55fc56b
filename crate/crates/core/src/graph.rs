//! Model graph description and validation.
//!
//! A [`ModelGraph`] is a topologically ordered list of [`Node`]s. The graph
//! input is the reserved name [`INPUT`]; every other node consumes earlier
//! nodes by name. Weights live beside the graph in a [`Model`], keyed by the
//! tensor names the nodes reference.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reserved name of the graph input.
pub const INPUT: &str = "input";

/// Suffix of the 0/1 mask tensor stored next to a pruned weight.
pub const MASK_SUFFIX: &str = ".mask";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d {
        weight: String,
        #[serde(default)]
        bias: Option<String>,
        stride: usize,
        padding: usize,
    },
    Batchnorm2d {
        weight: String,
        bias: String,
        running_mean: String,
        running_var: String,
        eps: f64,
    },
    Relu,
    Maxpool2d {
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    /// Average pooling; padded positions count toward the divisor.
    Avgpool2d {
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Globalavgpool,
    Add,
    Flatten,
    Linear {
        weight: String,
        #[serde(default)]
        bias: Option<String>,
    },
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Batchnorm2d { .. } => "batchnorm2d",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool2d { .. } => "maxpool2d",
            LayerKind::Avgpool2d { .. } => "avgpool2d",
            LayerKind::Globalavgpool => "globalavgpool",
            LayerKind::Add => "add",
            LayerKind::Flatten => "flatten",
            LayerKind::Linear { .. } => "linear",
        }
    }

    /// Names of every tensor this node reads from the weight store.
    pub fn weight_refs(&self) -> Vec<&str> {
        match self {
            LayerKind::Conv2d { weight, bias, .. } | LayerKind::Linear { weight, bias } => {
                std::iter::once(weight.as_str()).chain(bias.as_deref()).collect()
            }
            LayerKind::Batchnorm2d { weight, bias, running_mean, running_var, .. } => {
                vec![weight, bias, running_mean, running_var]
            }
            _ => Vec::new(),
        }
    }

    fn arity(&self) -> usize {
        if matches!(self, LayerKind::Add) {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub inputs: Vec<String>,
    #[serde(flatten)]
    pub kind: LayerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub arch: String,
    pub num_classes: usize,
    /// Per-sample input extent, (C, H, W).
    pub input_dims: Vec<usize>,
    pub output: String,
    pub nodes: Vec<Node>,
}

impl ModelGraph {
    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Conv nodes in topological order.
    pub fn conv_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| matches!(n.kind, LayerKind::Conv2d { .. }))
    }

    pub fn bn_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| matches!(n.kind, LayerKind::Batchnorm2d { .. }))
    }

    /// Weight tensors subject to pruning: every conv and linear weight, in node order.
    pub fn prunable_weights(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                LayerKind::Conv2d { weight, .. } | LayerKind::Linear { weight, .. } => {
                    Some(weight.as_str())
                }
                _ => None,
            })
            .collect()
    }

    /// Whether two graphs have the same structure, ignoring arch/metadata and
    /// optional biases (repair may insert a conv bias).
    pub fn same_topology(&self, other: &ModelGraph) -> bool {
        self.input_dims == other.input_dims
            && self.output == other.output
            && self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| {
                a.name == b.name && a.inputs == b.inputs && a.kind.tag() == b.kind.tag()
            })
    }

    /// Per-sample output dims of every node, checking arity and shape rules.
    pub fn infer_shapes(&self, weights: &BTreeMap<String, Tensor>) -> Result<Vec<Vec<usize>>> {
        if self.nodes.is_empty() {
            return Err(Error::Graph("graph has no nodes".into()));
        }
        if self.input_dims.len() != 3 || self.input_dims.contains(&0) {
            return Err(Error::Graph(format!(
                "input dims must be (C, H, W) with positive extents, got {:?}",
                self.input_dims
            )));
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if node.name == INPUT || seen.contains_key(node.name.as_str()) {
                return Err(Error::Graph(format!("duplicate or reserved node name `{}`", node.name)));
            }
            if node.inputs.len() != node.kind.arity() {
                return Err(Error::Graph(format!(
                    "node `{}` ({}) expects {} input(s), has {}",
                    node.name,
                    node.kind.tag(),
                    node.kind.arity(),
                    node.inputs.len()
                )));
            }
            let mut in_shapes = Vec::new();
            for input in &node.inputs {
                if input == INPUT {
                    in_shapes.push(self.input_dims.clone());
                } else {
                    let j = seen.get(input.as_str()).ok_or_else(|| {
                        Error::Graph(format!(
                            "node `{}` consumes `{input}` which is not an earlier node",
                            node.name
                        ))
                    })?;
                    in_shapes.push(shapes[*j].clone());
                }
            }
            for r in node.kind.weight_refs() {
                if !weights.contains_key(r) {
                    return Err(Error::MissingTensor(r.to_string()));
                }
            }
            let out = node_shape(node, &in_shapes, weights)?;
            seen.insert(&node.name, i);
            shapes.push(out);
        }
        let out_idx = *seen
            .get(self.output.as_str())
            .ok_or_else(|| Error::Graph(format!("output node `{}` not found", self.output)))?;
        if shapes[out_idx] != [self.num_classes] {
            return Err(Error::Graph(format!(
                "output `{}` has per-sample dims {:?}, expected [{}]",
                self.output, shapes[out_idx], self.num_classes
            )));
        }
        Ok(shapes)
    }
}

fn shape_err(node: &Node, detail: String) -> Error {
    Error::Shape { node: node.name.clone(), detail }
}

fn pooled(node: &Node, extent: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 || extent + 2 * pad < kernel {
        return Err(shape_err(
            node,
            format!("window {kernel} stride {stride} pad {pad} does not fit extent {extent}"),
        ));
    }
    Ok((extent + 2 * pad - kernel) / stride + 1)
}

fn node_shape(node: &Node, ins: &[Vec<usize>], w: &BTreeMap<String, Tensor>) -> Result<Vec<usize>> {
    let x = &ins[0];
    let need_chw = |x: &Vec<usize>| {
        if x.len() == 3 {
            Ok(())
        } else {
            Err(shape_err(node, format!("expects a (C, H, W) input, got {x:?}")))
        }
    };
    match &node.kind {
        LayerKind::Conv2d { weight, bias, stride, padding } => {
            need_chw(x)?;
            let wd = w[weight].dims();
            if wd.len() != 4 {
                return Err(shape_err(node, format!("conv weight must be OIHW, got {wd:?}")));
            }
            if wd[1] != x[0] {
                return Err(shape_err(
                    node,
                    format!("weight expects {} input channels, input has {}", wd[1], x[0]),
                ));
            }
            check_vec(node, bias.as_deref(), wd[0], w)?;
            let oh = pooled(node, x[1], wd[2], *stride, *padding)?;
            let ow = pooled(node, x[2], wd[3], *stride, *padding)?;
            Ok(vec![wd[0], oh, ow])
        }
        LayerKind::Batchnorm2d { weight, bias, running_mean, running_var, eps } => {
            need_chw(x)?;
            if !(*eps > 0.0) {
                return Err(shape_err(node, format!("eps must be positive, got {eps}")));
            }
            for r in [weight, bias, running_mean, running_var] {
                check_vec(node, Some(r), x[0], w)?;
            }
            Ok(x.clone())
        }
        LayerKind::Relu => Ok(x.clone()),
        LayerKind::Maxpool2d { kernel, stride, padding }
        | LayerKind::Avgpool2d { kernel, stride, padding } => {
            need_chw(x)?;
            if *padding * 2 > *kernel {
                return Err(shape_err(node, "padding exceeds half the kernel".into()));
            }
            Ok(vec![
                x[0],
                pooled(node, x[1], *kernel, *stride, *padding)?,
                pooled(node, x[2], *kernel, *stride, *padding)?,
            ])
        }
        LayerKind::Globalavgpool => {
            need_chw(x)?;
            Ok(vec![x[0], 1, 1])
        }
        LayerKind::Add => {
            if ins[0] != ins[1] {
                return Err(shape_err(node, format!("add operands differ: {:?} vs {:?}", ins[0], ins[1])));
            }
            Ok(x.clone())
        }
        LayerKind::Flatten => Ok(vec![x.iter().product()]),
        LayerKind::Linear { weight, bias } => {
            let wd = w[weight].dims();
            if wd.len() != 2 {
                return Err(shape_err(node, format!("linear weight must be (out, in), got {wd:?}")));
            }
            if x.len() != 1 || x[0] != wd[1] {
                return Err(shape_err(node, format!("linear expects [{}] input, got {x:?}", wd[1])));
            }
            check_vec(node, bias.as_deref(), wd[0], w)?;
            Ok(vec![wd[0]])
        }
    }
}

fn check_vec(node: &Node, name: Option<&str>, len: usize, w: &BTreeMap<String, Tensor>) -> Result<()> {
    if let Some(name) = name {
        let d = w[name].dims();
        if d != [len] {
            return Err(shape_err(node, format!("`{name}` has dims {d:?}, expected [{len}]")));
        }
    }
    Ok(())
}

/// A graph together with its named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub graph: ModelGraph,
    pub weights: BTreeMap<String, Tensor>,
}

impl Model {
    /// Builds a model, rejecting graphs that fail validation.
    pub fn new(graph: ModelGraph, weights: BTreeMap<String, Tensor>) -> Result<Self> {
        let model = Self { graph, weights };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.infer_shapes(&self.weights)?;
        let referenced: HashSet<&str> =
            self.graph.nodes.iter().flat_map(|n| n.kind.weight_refs()).collect();
        for (name, t) in &self.weights {
            if let Some(base) = name.strip_suffix(MASK_SUFFIX) {
                let w = self
                    .weights
                    .get(base)
                    .ok_or_else(|| Error::Graph(format!("mask `{name}` has no weight `{base}`")))?;
                if w.dims() != t.dims() {
                    return Err(Error::Graph(format!("mask `{name}` dims differ from its weight")));
                }
            } else if !referenced.contains(name.as_str()) {
                return Err(Error::Graph(format!("tensor `{name}` is not referenced by any node")));
            }
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.weights.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.weights.get_mut(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn mask(&self, weight: &str) -> Option<&Tensor> {
        self.weights.get(&format!("{weight}{MASK_SUFFIX}"))
    }

    /// Total and zero counts over the prunable weights.
    pub fn sparsity_counts(&self) -> (usize, usize) {
        self.graph.prunable_weights().iter().fold((0, 0), |(n, z), w| {
            let t = &self.weights[*w];
            (n + t.numel(), z + t.data().iter().filter(|&&x| x == 0.0).count())
        })
    }

    pub fn global_sparsity(&self) -> f64 {
        let (n, z) = self.sparsity_counts();
        z as f64 / n as f64
    }
}
