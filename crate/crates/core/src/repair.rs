//! Label-free repair of a pruned model from calibration statistics.
//!
//! Every weight-modifying variant reduces to a per-channel affine map on a
//! conv output, realized by scaling the channel's weights by `gamma` and
//! setting its bias to `gamma * b + mu_dense - gamma * mu_pruned`:
//!
//! | variant     | gamma                                  |
//! |-------------|----------------------------------------|
//! | `bias_bn`   | 1                                      |
//! | `affine_bn` | least-squares slope of dense on pruned |
//! | `asr_q50`   | median-shrunk variance ratio           |
//! | `asr_clip`  | shrunk ratio clamped to `[lo, hi]`     |
//!
//! Each is followed by BatchNorm recalibration. No function here accepts
//! labels, and nothing computes a gradient.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::forward::{check_batch, eval_node, Schedule};
use crate::graph::{LayerKind, Model, INPUT};
use crate::stats::{paired_stats, CalibrationSet, ChannelStats, MomentAccumulator, PairedMoments};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RepairVariant {
    None,
    BnOnly,
    BiasBn,
    AffineBn,
    AsrQ50,
    AsrClip,
}

impl RepairVariant {
    pub const ALL: [RepairVariant; 6] = [
        RepairVariant::None,
        RepairVariant::BnOnly,
        RepairVariant::BiasBn,
        RepairVariant::AffineBn,
        RepairVariant::AsrQ50,
        RepairVariant::AsrClip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RepairVariant::None => "none",
            RepairVariant::BnOnly => "bn_only",
            RepairVariant::BiasBn => "bias_bn",
            RepairVariant::AffineBn => "affine_bn",
            RepairVariant::AsrQ50 => "asr_q50",
            RepairVariant::AsrClip => "asr_clip",
        }
    }

    fn rewrites_convs(self) -> bool {
        !matches!(self, RepairVariant::None | RepairVariant::BnOnly)
    }
}

impl fmt::Display for RepairVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RepairVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown repair variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairConfig {
    pub variant: RepairVariant,
    pub eps: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub bn_recal_batches: usize,
    /// Mini-batch size for statistics and BN recalibration.
    pub batch_size: usize,
    /// Re-measure pruned statistics after each conv is repaired.
    pub sequential: bool,
    pub bn_update: BnUpdate,
}

/// How BN recalibration turns batch statistics into running statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BnUpdate {
    /// Exact aggregate over all recalibration batches.
    Exact,
    /// Exponential moving average `r <- (1 - m) r + m * batch`, starting from
    /// the stored statistics, with each BN normalizing by its batch
    /// statistics during the pass (training-mode semantics).
    Momentum(f64),
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            variant: RepairVariant::AsrQ50,
            eps: 1e-8,
            clip_lo: 0.5,
            clip_hi: 2.0,
            bn_recal_batches: 20,
            batch_size: 32,
            sequential: false,
            bn_update: BnUpdate::Exact,
        }
    }
}

impl RepairConfig {
    pub fn with_variant(variant: RepairVariant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return invalid(format!("eps must be positive, got {}", self.eps));
        }
        check_clip_bounds(self.clip_lo, self.clip_hi)?;
        if let BnUpdate::Momentum(m) = self.bn_update {
            if !(m > 0.0 && m <= 1.0) {
                return invalid(format!("BN momentum must lie in (0, 1], got {m}"));
            }
        }
        if self.bn_recal_batches == 0 || self.batch_size == 0 {
            return invalid("BN recalibration needs at least one batch of at least one image");
        }
        Ok(())
    }
}

pub fn check_clip_bounds(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
        return invalid(format!("clip bounds must satisfy 0 < lo <= 1 <= hi, got [{lo}, {hi}]"));
    }
    Ok(())
}

/// Variance-matching scale `sqrt(var_dense / (var_pruned + eps))`.
pub fn gamma_raw(var_dense: f64, var_pruned: f64, eps: f64) -> Result<f64> {
    if var_dense < 0.0 || var_pruned < 0.0 || var_dense.is_nan() || var_pruned.is_nan() {
        return invalid(format!("variances must be non-negative, got {var_dense} and {var_pruned}"));
    }
    if !(eps > 0.0) {
        return invalid(format!("eps must be positive, got {eps}"));
    }
    Ok((var_dense / (var_pruned + eps)).sqrt())
}

/// Median; the mean of the two middle values for an even count.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Shrinkage weight `var_p / (var_p + lambda)`. A collapsed channel under a
/// collapsed median (`var_p = lambda = 0`) gets 0: no correction.
pub fn shrink_weight(var_pruned: f64, lambda: f64) -> f64 {
    let denom = var_pruned + lambda;
    if denom > 0.0 {
        var_pruned / denom
    } else {
        0.0
    }
}

/// Shrunk scale `rho * gamma_raw + (1 - rho)`.
pub fn gamma_q50(gamma_raw: f64, rho: f64) -> f64 {
    rho * gamma_raw + (1.0 - rho)
}

pub fn clip_gamma(gamma: f64, lo: f64, hi: f64) -> f64 {
    gamma.clamp(lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shrinkage {
    /// Median pruned variance over the node's channels.
    pub lambda: f64,
    pub rho: Vec<f64>,
    pub gamma_q50: Vec<f64>,
}

/// Median-variance shrinkage of one node's raw scales.
pub fn shrink_q50(gamma_raw: &[f64], var_pruned: &[f64]) -> Result<Shrinkage> {
    if gamma_raw.is_empty() || gamma_raw.len() != var_pruned.len() {
        return invalid(format!(
            "shrinkage needs matching non-empty inputs, got {} scales and {} variances",
            gamma_raw.len(),
            var_pruned.len()
        ));
    }
    let lambda = median(var_pruned);
    let rho: Vec<f64> = var_pruned.iter().map(|&v| shrink_weight(v, lambda)).collect();
    let gamma_q50 = gamma_raw.iter().zip(&rho).map(|(&g, &r)| gamma_q50(g, r)).collect();
    Ok(Shrinkage { lambda, rho, gamma_q50 })
}

/// Least-squares fit `dense ~ a * pruned + b` from paired moments.
/// Constant pruned activations give `a = 0, b = mean_dense`.
pub fn affine_fit(covariance: f64, var_pruned: f64, mean_dense: f64, mean_pruned: f64, eps: f64) -> (f64, f64) {
    if var_pruned <= 0.0 {
        return (0.0, mean_dense);
    }
    let a = covariance / (var_pruned + eps);
    (a, mean_dense - a * mean_pruned)
}

/// Per-channel affine calibration for one node.
pub fn affine_calibration(m: &PairedMoments, eps: f64) -> Vec<(f64, f64)> {
    (0..m.channels())
        .map(|c| affine_fit(m.covariance[c], m.pruned.var[c], m.dense.mean[c], m.pruned.mean[c], eps))
        .collect()
}

/// Per-channel mean shifts `mu_dense - mu_pruned`.
pub fn bias_correction(stats: &ChannelStats) -> BTreeMap<String, Vec<f64>> {
    stats
        .nodes
        .iter()
        .map(|(k, m)| (k.clone(), m.dense.mean.iter().zip(&m.pruned.mean).map(|(d, p)| d - p).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRepair {
    pub gamma_raw: f64,
    pub rho: f64,
    pub gamma_q50: f64,
    /// Scale actually applied.
    pub gamma: f64,
    /// Additive term `mu_dense - gamma * mu_pruned`.
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRepair {
    pub node: String,
    pub lambda: f64,
    pub channels: Vec<ChannelRepair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairPlan {
    pub variant: RepairVariant,
    pub nodes: Vec<NodeRepair>,
}

impl RepairPlan {
    /// Tab-separated dump of the per-channel scales.
    pub fn to_text(&self) -> String {
        let mut out = String::from("node\tchannel\tgamma_raw\trho\tgamma_q50\tgamma_final\n");
        for n in &self.nodes {
            for (c, ch) in n.channels.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{c}\t{:e}\t{:e}\t{:e}\t{:e}",
                    n.node, ch.gamma_raw, ch.rho, ch.gamma_q50, ch.gamma
                );
            }
        }
        out
    }
}

/// Per-channel scales and shifts for one node under `config.variant`.
pub fn plan_node(node: &str, m: &PairedMoments, config: &RepairConfig) -> Result<NodeRepair> {
    let raw = m
        .dense
        .var
        .iter()
        .zip(&m.pruned.var)
        .map(|(&d, &p)| gamma_raw(d, p, config.eps))
        .collect::<Result<Vec<_>>>()?;
    let shrunk = shrink_q50(&raw, &m.pruned.var)?;
    let affine = affine_calibration(m, config.eps);
    let channels = (0..m.channels())
        .map(|c| {
            let gamma = match config.variant {
                RepairVariant::AsrQ50 => shrunk.gamma_q50[c],
                RepairVariant::AsrClip => clip_gamma(shrunk.gamma_q50[c], config.clip_lo, config.clip_hi),
                RepairVariant::AffineBn => affine[c].0,
                _ => 1.0,
            };
            ChannelRepair {
                gamma_raw: raw[c],
                rho: shrunk.rho[c],
                gamma_q50: shrunk.gamma_q50[c],
                gamma,
                shift: m.dense.mean[c] - gamma * m.pruned.mean[c],
            }
        })
        .collect();
    Ok(NodeRepair { node: node.into(), lambda: shrunk.lambda, channels })
}

/// Scales each output channel of an OIHW (or `(out, in)`) weight by its
/// gamma and returns the adjusted bias `gamma * b + shift` (`b = 0` when
/// absent). Zero weights stay zero.
pub fn apply_channel_repair(
    weight: &Tensor,
    bias: Option<&Tensor>,
    channels: &[ChannelRepair],
) -> Result<(Tensor, Tensor)> {
    let oc = weight.dims()[0];
    if channels.len() != oc {
        return invalid(format!("plan has {} channels, weight has {oc} output channels", channels.len()));
    }
    if let Some(b) = bias {
        if b.numel() != oc {
            return invalid(format!("bias has {} entries for {oc} channels", b.numel()));
        }
    }
    let per = weight.numel() / oc;
    let mut w = weight.clone();
    for (chunk, ch) in w.data_mut().chunks_mut(per).zip(channels) {
        for v in chunk {
            *v = (*v as f64 * ch.gamma) as f32;
        }
    }
    let b: Vec<f32> = channels
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            let old = bias.map_or(0.0, |b| b.data()[c] as f64);
            (ch.gamma * old + ch.shift) as f32
        })
        .collect();
    Ok((w, Tensor::new(vec![oc], b)?))
}

/// Writes a node repair into `model`, inserting a conv bias if needed.
pub fn apply_node_repair(model: &mut Model, repair: &NodeRepair) -> Result<()> {
    let idx = model.graph.node_index(&repair.node).ok_or_else(|| Error::UnknownNode(repair.node.clone()))?;
    let (weight, bias) = match &model.graph.nodes[idx].kind {
        LayerKind::Conv2d { weight, bias, .. } => (weight.clone(), bias.clone()),
        other => return invalid(format!("node `{}` is {}, not conv2d", repair.node, other.tag())),
    };
    let old_bias = bias.as_deref().map(|b| model.tensor(b)).transpose()?;
    let (w, b) = apply_channel_repair(model.tensor(&weight)?, old_bias, &repair.channels)?;
    let bias_name = match bias {
        Some(b) => b,
        None => {
            let mut name = format!("{}.bias", repair.node);
            while model.weights.contains_key(&name) {
                name.push('_');
            }
            if let LayerKind::Conv2d { bias, .. } = &mut model.graph.nodes[idx].kind {
                *bias = Some(name.clone());
            }
            name
        }
    };
    model.weights.insert(weight, w);
    model.weights.insert(bias_name, b);
    Ok(())
}

/// The recalibration stream: `num_batches` batches of `batch_size` images
/// drawn from the calibration set in order, wrapping around as needed.
fn recal_batches(calib: &CalibrationSet, num_batches: usize, batch_size: usize) -> Result<Vec<Tensor>> {
    let n = calib.len();
    if num_batches == 0 || batch_size == 0 {
        return invalid("BN recalibration needs at least one non-empty batch");
    }
    if n < batch_size {
        return invalid(format!("{n} calibration images cannot fill one batch of {batch_size}"));
    }
    (0..num_batches)
        .map(|k| {
            let rows: Vec<usize> = (0..batch_size).map(|j| (k * batch_size + j) % n).collect();
            calib.images().gather_batch(&rows)
        })
        .collect()
}

/// Recomputes every BatchNorm's running mean and variance from the
/// recalibration batches, leaving scale and shift untouched. BNs are visited
/// in graph order, so each one sees inputs produced by already-recalibrated
/// predecessors.
///
/// With [`BnUpdate::Exact`] the new statistics are the aggregate mean and
/// population variance of the BN input over all batches.
pub fn bn_recalibrate(
    model: &Model,
    calib: &CalibrationSet,
    num_batches: usize,
    batch_size: usize,
    update: BnUpdate,
) -> Result<Model> {
    if model.graph.bn_nodes().next().is_none() {
        return invalid("model has no BatchNorm layers to recalibrate");
    }
    let batches = recal_batches(calib, num_batches, batch_size)?;
    for b in &batches {
        check_batch(model, b)?;
    }
    let mut out = model.clone();
    let sched = Schedule::new(&out)?;
    let mut slots: Vec<Option<Vec<Tensor>>> = vec![None; out.graph.nodes.len()];
    for i in 0..out.graph.nodes.len() {
        let node = out.graph.nodes[i].clone();
        let inputs = |k: usize, slots: &[Option<Vec<Tensor>>]| -> Vec<Tensor> {
            sched.operands[i]
                .iter()
                .map(|op| match op {
                    None => batches[k].clone(),
                    Some(j) => slots[*j].as_ref().expect("operand evaluated")[k].clone(),
                })
                .collect()
        };
        let mut outputs = Vec::with_capacity(batches.len());
        if let LayerKind::Batchnorm2d { weight, bias, running_mean, running_var, eps } = &node.kind {
            let tag = if node.inputs[0] == INPUT { node.name.as_str() } else { node.inputs[0].as_str() };
            let c = out.tensor(running_mean)?.numel();
            match update {
                BnUpdate::Exact => {
                    let mut acc = MomentAccumulator::new(c);
                    for k in 0..batches.len() {
                        acc.push(tag, &inputs(k, &slots)[0])?;
                    }
                    let m = acc.finish();
                    set_running(&mut out, running_mean, running_var, &m.mean, &m.var)?;
                    for k in 0..batches.len() {
                        outputs.push(eval_node(&out, &node, &[&inputs(k, &slots)[0]])?);
                    }
                }
                BnUpdate::Momentum(momentum) => {
                    let mut mean: Vec<f64> = out.tensor(running_mean)?.data().iter().map(|&v| v as f64).collect();
                    let mut var: Vec<f64> = out.tensor(running_var)?.data().iter().map(|&v| v as f64).collect();
                    for k in 0..batches.len() {
                        let x = &inputs(k, &slots)[0];
                        let mut acc = MomentAccumulator::new(c);
                        acc.push(tag, x)?;
                        let m = acc.finish();
                        for ch in 0..c {
                            mean[ch] = (1.0 - momentum) * mean[ch] + momentum * m.mean[ch];
                            var[ch] = (1.0 - momentum) * var[ch] + momentum * m.var[ch];
                        }
                        let bm: Vec<f32> = m.mean.iter().map(|&v| v as f32).collect();
                        let bv: Vec<f32> = m.var.iter().map(|&v| v as f32).collect();
                        outputs.push(crate::ops::batchnorm_forward(
                            x,
                            out.tensor(weight)?.data(),
                            out.tensor(bias)?.data(),
                            &bm,
                            &bv,
                            *eps,
                        )?);
                    }
                    set_running(&mut out, running_mean, running_var, &mean, &var)?;
                }
            }
        } else {
            for k in 0..batches.len() {
                let ins = inputs(k, &slots);
                let refs: Vec<&Tensor> = ins.iter().collect();
                outputs.push(eval_node(&out, &node, &refs)?);
            }
        }
        for j in sched.operands[i].iter().flatten() {
            if sched.last_use[*j] == i {
                slots[*j] = None;
            }
        }
        slots[i] = Some(outputs);
    }
    Ok(out)
}

fn set_running(model: &mut Model, mean_name: &str, var_name: &str, mean: &[f64], var: &[f64]) -> Result<()> {
    let c = mean.len();
    *model.tensor_mut(mean_name)? = Tensor::new(vec![c], mean.iter().map(|&v| v as f32).collect())?;
    *model.tensor_mut(var_name)? = Tensor::new(vec![c], var.iter().map(|&v| v as f32).collect())?;
    Ok(())
}

/// Result of a repair run.
#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub model: Model,
    /// Channel plan for variants that rewrite conv layers.
    pub plan: Option<RepairPlan>,
}

/// Repairs `pruned` against `dense` using only `calib`.
pub fn repair(dense: &Model, pruned: &Model, calib: &CalibrationSet, config: &RepairConfig) -> Result<RepairOutcome> {
    config.validate()?;
    if !dense.graph.same_topology(&pruned.graph) {
        return Err(Error::Topology("dense and pruned graphs differ".into()));
    }
    let variant = config.variant;
    if variant == RepairVariant::None {
        return Ok(RepairOutcome { model: pruned.clone(), plan: None });
    }
    let mut model = pruned.clone();
    let mut plan = None;
    if variant.rewrites_convs() {
        let mut nodes = Vec::new();
        if config.sequential {
            let convs: Vec<String> = pruned.graph.conv_nodes().map(|n| n.name.clone()).collect();
            for name in convs {
                let stats = paired_stats(dense, &model, calib, config.batch_size, Some(std::slice::from_ref(&name)))?;
                let nr = plan_node(&name, &stats.nodes[&name], config)?;
                apply_node_repair(&mut model, &nr)?;
                nodes.push(nr);
            }
        } else {
            let stats = paired_stats(dense, pruned, calib, config.batch_size, None)?;
            for node in pruned.graph.conv_nodes() {
                let nr = plan_node(&node.name, &stats.nodes[&node.name], config)?;
                nodes.push(nr);
            }
            for nr in &nodes {
                apply_node_repair(&mut model, nr)?;
            }
        }
        plan = Some(RepairPlan { variant, nodes });
    }
    if model.graph.bn_nodes().next().is_some() {
        model = bn_recalibrate(&model, calib, config.bn_recal_batches, config.batch_size, config.bn_update)?;
    }
    Ok(RepairOutcome { model, plan })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn gamma_raw_examples() {
        assert!(close(gamma_raw(4.0, 1.0, 1e-300).unwrap(), 2.0, 1e-12));
        assert!(close(gamma_raw(3.0, 3.0, 1e-8).unwrap(), 1.0, 1e-8));
        assert!(close(gamma_raw(1.0, 0.0, 1e-8).unwrap(), 1e4, 1e-12));
        assert!(gamma_raw(-1.0, 1.0, 1e-8).is_err());
        assert!(gamma_raw(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn shrinkage_examples() {
        let s = shrink_q50(&[3.0, 2.0, 1.5], &[1.0, 4.0, 9.0]).unwrap();
        assert_eq!(s.lambda, 4.0);
        for (got, want) in s.rho.iter().zip([0.2, 0.5, 9.0 / 13.0]) {
            assert!(close(*got, want, 1e-15));
        }
        for (got, want) in s.gamma_q50.iter().zip([1.4, 1.5, 17.5 / 13.0]) {
            assert!(close(*got, want, 1e-15));
        }
        let mid = shrink_q50(&[3.0, 5.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mid.rho[1], 0.5);
        assert_eq!(mid.gamma_q50[1], 3.0);
    }

    #[test]
    fn collapsed_channels_get_no_correction() {
        let s = shrink_q50(&[1e4, 1e4, 2.0], &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(s.lambda, 0.0);
        assert_eq!(&s.gamma_q50[..2], &[1.0, 1.0]);
        let tiny = shrink_q50(&[1e3, 1.0], &[1e-12, 1.0]).unwrap();
        assert!((tiny.gamma_q50[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn even_median() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[5.0]), 5.0);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_gamma(3.5, 0.5, 2.0), 2.0);
        assert_eq!(clip_gamma(0.3, 0.5, 2.0), 0.5);
        assert_eq!(clip_gamma(1.2, 0.5, 2.0), 1.2);
        assert!(check_clip_bounds(1.0, 1.0).is_ok());
        assert!(check_clip_bounds(1.5, 2.0).is_err());
        assert!(check_clip_bounds(0.0, 2.0).is_err());
    }

    #[test]
    fn bias_arithmetic() {
        let w = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new(vec![1], vec![0.1]).unwrap();
        let ch = ChannelRepair { gamma_raw: 2.0, rho: 1.0, gamma_q50: 2.0, gamma: 2.0, shift: 0.5 - 2.0 * 0.3 };
        let (w2, b2) = apply_channel_repair(&w, Some(&b), &[ch]).unwrap();
        assert_eq!(w2.data(), &[2.0, 0.0]);
        assert!((b2.data()[0] - 0.1).abs() < 1e-7);

        let id = ChannelRepair { gamma_raw: 1.0, rho: 0.5, gamma_q50: 1.0, gamma: 1.0, shift: 0.0 };
        let (w3, b3) = apply_channel_repair(&w, Some(&b), &[id.clone()]).unwrap();
        assert_eq!((w3, b3), (w.clone(), b.clone()));
        assert!(apply_channel_repair(&w, None, &[id.clone(), id]).is_err());
    }

    #[test]
    fn affine_fit_cases() {
        assert_eq!(affine_fit(0.0, 0.0, 3.0, 1.0, 1e-8), (0.0, 3.0));
        let (a, b) = affine_fit(2.0, 1.0, 5.0, 1.0, 0.0);
        assert_eq!((a, b), (2.0, 3.0));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in RepairVariant::ALL {
            assert_eq!(v.as_str().parse::<RepairVariant>().unwrap(), v);
        }
        assert!("asr".parse::<RepairVariant>().is_err());
    }
}
