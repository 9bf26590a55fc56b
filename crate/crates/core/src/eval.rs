//! Accuracy evaluation and the allocation x sparsity x repair grid.

use std::time::Instant;

use rayon::prelude::*;

use crate::allocate::{check_sparsity, prune, Allocation};
use crate::error::{invalid, Result};
use crate::forward::predict;
use crate::graph::Model;
use crate::io::check_pairing;
use crate::repair::{check_clip_bounds, repair, RepairConfig, RepairVariant};
use crate::stats::CalibrationSet;
use crate::tensor::Tensor;

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy in percent.
pub fn evaluate(model: &Model, images: &Tensor, labels: &[u32], batch_size: usize) -> Result<f64> {
    check_pairing(images, labels)?;
    let n = images.batch();
    let bs = batch_size.max(1);
    let mut correct = 0usize;
    for start in (0..n).step_by(bs) {
        let len = bs.min(n - start);
        let logits = predict(model, &images.slice_batch(start, len)?)?;
        let k = logits.item_len();
        for (row, &label) in logits.data().chunks(k).zip(&labels[start..start + len]) {
            correct += (argmax(row) == label as usize) as usize;
        }
    }
    Ok(100.0 * correct as f64 / n as f64)
}

/// One evaluated (allocation, sparsity, variant) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub arch: String,
    pub dataset: String,
    pub sparsity: f64,
    pub allocation: Allocation,
    pub variant: RepairVariant,
    /// Clip bounds, reported for the clipped variant only.
    pub clip: Option<(f64, f64)>,
    /// Top-1 percent, or the error that stopped the cell.
    pub accuracy: std::result::Result<f64, String>,
    pub seed: u64,
    pub runtime_ms: u64,
}

pub const CSV_HEADER: &str = "arch,dataset,sparsity,alloc,variant,clip_lo,clip_hi,accuracy,seed,runtime_ms";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl RunReport {
    pub fn csv_row(&self) -> String {
        let (lo, hi) = self.clip.map_or((String::new(), String::new()), |(l, h)| (format!("{l}"), format!("{h}")));
        let acc = match &self.accuracy {
            Ok(a) => format!("{a:.2}"),
            Err(e) => format!("error: {e}"),
        };
        [
            csv_field(&self.arch),
            csv_field(&self.dataset),
            format!("{}", self.sparsity),
            self.allocation.to_string(),
            self.variant.to_string(),
            lo,
            hi,
            csv_field(&acc),
            self.seed.to_string(),
            self.runtime_ms.to_string(),
        ]
        .join(",")
    }
}

pub fn to_csv(rows: &[RunReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// The four clip-bound configurations of the sensitivity sweep.
pub const DEFAULT_CLIP_BOUNDS: [(f64, f64); 4] = [(0.25, 4.0), (0.5, 2.0), (0.67, 1.5), (0.8, 1.25)];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub sparsities: Vec<f64>,
    pub allocations: Vec<Allocation>,
    pub variants: Vec<RepairVariant>,
    pub clip_bounds: Vec<(f64, f64)>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sparsities.is_empty() || self.allocations.is_empty() || self.variants.is_empty() {
            return invalid("sweep needs at least one sparsity, allocation and variant");
        }
        for &s in &self.sparsities {
            check_sparsity(s)?;
        }
        for &(lo, hi) in &self.clip_bounds {
            check_clip_bounds(lo, hi)?;
        }
        Ok(())
    }
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            sparsities: vec![0.9, 0.925, 0.95],
            allocations: vec![Allocation::Erk, Allocation::Lamp],
            variants: RepairVariant::ALL.to_vec(),
            clip_bounds: DEFAULT_CLIP_BOUNDS.to_vec(),
        }
    }
}

/// Inputs shared by every cell of a grid.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub dense: Model,
    pub calib: CalibrationSet,
    pub test_images: Tensor,
    pub test_labels: Vec<u32>,
    pub dataset: String,
    pub seed: u64,
    pub eval_batch: usize,
    /// Base repair settings; the grid overrides the variant (and clip bounds
    /// in the sweep).
    pub repair: RepairConfig,
    /// Record wall time per cell. Off by default so reruns are byte-identical.
    pub timing: bool,
}

impl Experiment {
    fn cell(&self, pruned: &std::result::Result<Model, String>, s: f64, alloc: Allocation, config: RepairConfig) -> RunReport {
        let start = Instant::now();
        let accuracy = pruned.clone().and_then(|p| {
            repair(&self.dense, &p, &self.calib, &config)
                .and_then(|out| evaluate(&out.model, &self.test_images, &self.test_labels, self.eval_batch))
                .map_err(|e| e.to_string())
        });
        RunReport {
            arch: self.dense.graph.arch.clone(),
            dataset: self.dataset.clone(),
            sparsity: s,
            allocation: alloc,
            variant: config.variant,
            clip: (config.variant == RepairVariant::AsrClip).then_some((config.clip_lo, config.clip_hi)),
            accuracy,
            seed: self.seed,
            runtime_ms: if self.timing { start.elapsed().as_millis() as u64 } else { 0 },
        }
    }

    fn pruned(&self, alloc: Allocation, s: f64) -> std::result::Result<Model, String> {
        prune(&self.dense, alloc, s).map(|(m, _)| m).map_err(|e| e.to_string())
    }

    /// One row per (allocation, sparsity, variant), in that nesting order.
    /// A failing cell yields an error row and the grid continues.
    pub fn run_grid(&self, spec: &SweepSpec) -> Result<Vec<RunReport>> {
        spec.validate()?;
        check_pairing(&self.test_images, &self.test_labels)?;
        let mut rows = Vec::new();
        for &alloc in &spec.allocations {
            for &s in &spec.sparsities {
                let pruned = self.pruned(alloc, s);
                let cells: Vec<RunReport> = spec
                    .variants
                    .par_iter()
                    .map(|&v| self.cell(&pruned, s, alloc, RepairConfig { variant: v, ..self.repair.clone() }))
                    .collect();
                rows.extend(cells);
            }
        }
        Ok(rows)
    }

    /// Clipped repair at each bound configuration; one row per
    /// (bounds, allocation, sparsity).
    pub fn clip_sensitivity(&self, allocations: &[Allocation], sparsities: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<RunReport>> {
        if bounds.is_empty() {
            return invalid("clip sensitivity needs at least one bound configuration");
        }
        let spec = SweepSpec {
            sparsities: sparsities.to_vec(),
            allocations: allocations.to_vec(),
            variants: vec![RepairVariant::AsrClip],
            clip_bounds: bounds.to_vec(),
        };
        spec.validate()?;
        let mut pruned = Vec::new();
        for &alloc in allocations {
            for &s in sparsities {
                pruned.push((alloc, s, self.pruned(alloc, s)));
            }
        }
        let cells: Vec<(f64, f64, usize)> = bounds
            .iter()
            .flat_map(|&(lo, hi)| (0..pruned.len()).map(move |i| (lo, hi, i)))
            .collect();
        Ok(cells
            .par_iter()
            .map(|&(lo, hi, i)| {
                let (alloc, s, ref p) = pruned[i];
                let config = RepairConfig { variant: RepairVariant::AsrClip, clip_lo: lo, clip_hi: hi, ..self.repair.clone() };
                self.cell(p, s, alloc, config)
            })
            .collect())
    }
}
