//! Sparsity allocation and unstructured magnitude pruning.
//!
//! Every conv and linear weight is prunable; biases and BatchNorm parameters
//! never are. A target sparsity `s` removes exactly `ceil(s * N)` of the `N`
//! prunable weights under every allocation rule.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::graph::{Model, MASK_SUFFIX};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Allocation {
    /// Erdős–Rényi-Kernel: density proportional to a shape-only score.
    Erk,
    /// Layer-adaptive magnitude scores under one global threshold.
    Lamp,
    Uniform,
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Allocation::Erk => "ERK",
            Allocation::Lamp => "LAMP",
            Allocation::Uniform => "UNIFORM",
        })
    }
}

impl FromStr for Allocation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "erk" => Ok(Allocation::Erk),
            "lamp" => Ok(Allocation::Lamp),
            "uniform" => Ok(Allocation::Uniform),
            other => invalid(format!("unknown allocation `{other}` (expected erk, lamp or uniform)")),
        }
    }
}

/// Per-layer density budget at a target global sparsity.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub allocation: Allocation,
    pub sparsity: f64,
    /// Prunable weight names, in graph order.
    pub layers: Vec<String>,
    /// Continuous densities in `(0, 1]` (LAMP: realized densities).
    pub densities: Vec<f64>,
    /// Integer keep counts summing to `N - ceil(s * N)`.
    pub keep: Vec<usize>,
}

/// Per-tensor 0/1 masks keyed by weight name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparsityMask {
    pub masks: BTreeMap<String, Tensor>,
}

impl SparsityMask {
    pub fn zeros(&self) -> usize {
        self.masks.values().map(|m| m.data().iter().filter(|&&v| v == 0.0).count()).sum()
    }

    pub fn total(&self) -> usize {
        self.masks.values().map(Tensor::numel).sum()
    }
}

pub(crate) fn check_sparsity(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return invalid(format!("sparsity must lie in (0, 1), got {s}"));
    }
    Ok(())
}

/// Number of weights to remove: `ceil(s * n)`, ignoring float noise in `s * n`.
pub fn prune_count(n: usize, s: f64) -> usize {
    let exact = s * n as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 * n.max(1) as f64 {
        rounded as usize
    } else {
        exact.ceil() as usize
    }
    .min(n)
}

/// Shape-only ERK score: `(sum of dims) / (product of dims)`.
pub fn erk_score(dims: &[usize]) -> f64 {
    let sum: usize = dims.iter().sum();
    let prod: usize = dims.iter().product();
    sum as f64 / prod as f64
}

/// ERK densities by water-filling: `d = min(1, c * score)` with the single
/// scale `c` chosen so that `sum d * n = (1 - s) * N`.
pub fn erk_densities(shapes: &[Vec<usize>], s: f64) -> Result<Vec<f64>> {
    check_sparsity(s)?;
    if shapes.is_empty() {
        return invalid("ERK needs at least one prunable layer");
    }
    let sizes: Vec<f64> = shapes.iter().map(|d| d.iter().product::<usize>() as f64).collect();
    let scores: Vec<f64> = shapes.iter().map(|d| erk_score(d)).collect();
    let budget = (1.0 - s) * sizes.iter().sum::<f64>();
    let mut capped = vec![false; shapes.len()];
    // Capping only raises the scale for the remaining layers, so each round
    // caps at least one new layer or terminates.
    for _ in 0..=shapes.len() {
        let rest: f64 = budget - (0..shapes.len()).filter(|&i| capped[i]).map(|i| sizes[i]).sum::<f64>();
        let denom: f64 = (0..shapes.len()).filter(|&i| !capped[i]).map(|i| scores[i] * sizes[i]).sum();
        if denom == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "ERK budget infeasible: every layer is dense and {rest} weights remain unassigned"
            )));
        }
        let c = rest / denom;
        let over: Vec<usize> =
            (0..shapes.len()).filter(|&i| !capped[i] && c * scores[i] > 1.0).collect();
        if over.is_empty() {
            return Ok((0..shapes.len()).map(|i| if capped[i] { 1.0 } else { c * scores[i] }).collect());
        }
        for i in over {
            capped[i] = true;
        }
    }
    unreachable!("water-filling caps one layer per round")
}

/// Integer keep counts: round each `d * n` half-up, then move the residual
/// onto the largest layers so the total is exactly `N - ceil(s * N)`.
pub fn keep_counts(densities: &[f64], sizes: &[usize], s: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = total - prune_count(total, s);
    let mut keep: Vec<usize> = densities
        .iter()
        .zip(sizes)
        .map(|(&d, &n)| ((d * n as f64 + 0.5).floor() as usize).min(n))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut have: usize = keep.iter().sum();
    for i in order {
        if have == target {
            break;
        }
        if have < target {
            let add = (target - have).min(sizes[i] - keep[i]);
            keep[i] += add;
            have += add;
        } else {
            let sub = (have - target).min(keep[i]);
            keep[i] -= sub;
            have -= sub;
        }
    }
    keep
}

fn prunable_layers(model: &Model) -> Result<Vec<(String, &Tensor)>> {
    model
        .graph
        .prunable_weights()
        .into_iter()
        .map(|w| Ok((w.to_string(), model.tensor(w)?)))
        .collect()
}

/// ERK plan for the prunable layers of `model`.
pub fn erk_allocation(layers: &[(String, Vec<usize>)], s: f64) -> Result<AllocationPlan> {
    let shapes: Vec<Vec<usize>> = layers.iter().map(|(_, d)| d.clone()).collect();
    let densities = erk_densities(&shapes, s)?;
    let sizes: Vec<usize> = shapes.iter().map(|d| d.iter().product()).collect();
    Ok(AllocationPlan {
        allocation: Allocation::Erk,
        sparsity: s,
        layers: layers.iter().map(|(n, _)| n.clone()).collect(),
        keep: keep_counts(&densities, &sizes, s),
        densities,
    })
}

pub fn uniform_allocation(layers: &[(String, Vec<usize>)], s: f64) -> Result<AllocationPlan> {
    check_sparsity(s)?;
    if layers.is_empty() {
        return invalid("allocation needs at least one prunable layer");
    }
    let sizes: Vec<usize> = layers.iter().map(|(_, d)| d.iter().product()).collect();
    let densities = vec![1.0 - s; layers.len()];
    Ok(AllocationPlan {
        allocation: Allocation::Uniform,
        sparsity: s,
        layers: layers.iter().map(|(n, _)| n.clone()).collect(),
        keep: keep_counts(&densities, &sizes, s),
        densities,
    })
}

/// Keeps the `keep` largest-magnitude entries; among equal magnitudes the
/// lower flat index is kept first.
pub fn magnitude_keep_mask(weights: &Tensor, keep: usize) -> Tensor {
    let w = weights.data();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    let mut mask = vec![0f32; w.len()];
    for &i in order.iter().take(keep) {
        mask[i] = 1.0;
    }
    Tensor::new(weights.dims().to_vec(), mask).expect("mask matches weight dims")
}

/// Realizes a plan as per-layer magnitude masks.
pub fn magnitude_mask(weights: &BTreeMap<String, Tensor>, plan: &AllocationPlan) -> Result<SparsityMask> {
    let mut masks = BTreeMap::new();
    for (name, &keep) in plan.layers.iter().zip(&plan.keep) {
        let w = weights.get(name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if keep > w.numel() {
            return invalid(format!("plan keeps {keep} of {} weights in `{name}`", w.numel()));
        }
        masks.insert(name.clone(), magnitude_keep_mask(w, keep));
    }
    Ok(SparsityMask { masks })
}

/// LAMP score of every weight in one layer:
/// `w^2 / sum { v^2 : |v| >= |w| }`, with 0 for an all-zero suffix.
pub fn lamp_scores(weights: &[f32]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[a].abs().total_cmp(&weights[b].abs()));
    let sq: Vec<f64> = order.iter().map(|&i| (weights[i] as f64).powi(2)).collect();
    let mut suffix = vec![0f64; sq.len() + 1];
    for i in (0..sq.len()).rev() {
        suffix[i] = suffix[i + 1] + sq[i];
    }
    let mut scores = vec![0f64; weights.len()];
    let mut group_start = 0;
    for k in 0..order.len() {
        if k > 0 && weights[order[k]].abs() != weights[order[k - 1]].abs() {
            group_start = k;
        }
        let denom = suffix[group_start];
        scores[order[k]] = if denom > 0.0 { sq[k] / denom } else { 0.0 };
    }
    scores
}

/// Globally prunes the `ceil(s * N)` lowest LAMP scores across `layers`.
/// Equal scores are pruned in (layer, flat index) order.
pub fn lamp_masks(layers: &[&Tensor], s: f64) -> Result<Vec<Tensor>> {
    check_sparsity(s)?;
    if layers.is_empty() {
        return invalid("LAMP needs at least one prunable layer");
    }
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (l, w) in layers.iter().enumerate() {
        all.extend(lamp_scores(w.data()).into_iter().enumerate().map(|(i, sc)| (sc, l, i)));
    }
    let drop = prune_count(all.len(), s);
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut masks: Vec<Vec<f32>> = layers.iter().map(|w| vec![1.0; w.numel()]).collect();
    for &(_, l, i) in &all[..drop] {
        masks[l][i] = 0.0;
    }
    Ok(masks
        .into_iter()
        .zip(layers)
        .map(|(m, w)| Tensor::new(w.dims().to_vec(), m).expect("mask matches weight dims"))
        .collect())
}

/// Elementwise `weights * mask`.
pub fn apply_mask(weights: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if weights.dims() != mask.dims() {
        return invalid(format!("mask dims {:?} differ from weight dims {:?}", mask.dims(), weights.dims()));
    }
    let data = weights.data().iter().zip(mask.data()).map(|(w, m)| w * m).collect();
    Tensor::new(weights.dims().to_vec(), data)
}

/// Builds the allocation plan and masks for `model` at sparsity `s`.
pub fn allocate(model: &Model, allocation: Allocation, s: f64) -> Result<(AllocationPlan, SparsityMask)> {
    let layers = prunable_layers(model)?;
    let shapes: Vec<(String, Vec<usize>)> =
        layers.iter().map(|(n, t)| (n.clone(), t.dims().to_vec())).collect();
    match allocation {
        Allocation::Erk | Allocation::Uniform => {
            let plan = if allocation == Allocation::Erk {
                erk_allocation(&shapes, s)?
            } else {
                uniform_allocation(&shapes, s)?
            };
            let mask = magnitude_mask(&model.weights, &plan)?;
            Ok((plan, mask))
        }
        Allocation::Lamp => {
            let tensors: Vec<&Tensor> = layers.iter().map(|(_, t)| *t).collect();
            let masks = lamp_masks(&tensors, s)?;
            let keep: Vec<usize> =
                masks.iter().map(|m| m.data().iter().filter(|&&v| v != 0.0).count()).collect();
            let plan = AllocationPlan {
                allocation,
                sparsity: s,
                layers: shapes.iter().map(|(n, _)| n.clone()).collect(),
                densities: keep.iter().zip(&masks).map(|(&k, m)| k as f64 / m.numel() as f64).collect(),
                keep,
            };
            let masks = plan.layers.iter().cloned().zip(masks).collect();
            Ok((plan, SparsityMask { masks }))
        }
    }
}

/// Applies `mask` to `model`, storing each mask as `<weight>.mask`.
pub fn apply_sparsity(model: &Model, mask: &SparsityMask) -> Result<Model> {
    let mut out = model.clone();
    for (name, m) in &mask.masks {
        let pruned = apply_mask(model.tensor(name)?, m)?;
        out.weights.insert(name.clone(), pruned);
        out.weights.insert(format!("{name}{MASK_SUFFIX}"), m.clone());
    }
    Ok(out)
}

/// Allocates, masks and prunes in one step.
pub fn prune(model: &Model, allocation: Allocation, s: f64) -> Result<(Model, AllocationPlan)> {
    let (plan, mask) = allocate(model, allocation, s)?;
    Ok((apply_sparsity(model, &mask)?, plan))
}
