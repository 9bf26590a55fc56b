//! Per-channel activation moments over a calibration set.
//!
//! Moments pool every (image, spatial position) of a channel and use the
//! population variance. Sums are taken in f64 around a per-channel shift (the
//! first observed value) in image order, so the result does not depend on
//! how the calibration set is split into batches.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::forward::forward;
use crate::graph::Model;
use crate::tensor::Tensor;

/// Unlabeled calibration images `(n, C, H, W)`, `n >= 2`.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    images: Tensor,
}

impl CalibrationSet {
    pub fn new(images: Tensor) -> Result<Self> {
        if images.dims().len() != 4 {
            return invalid(format!("calibration images must be NCHW, got {:?}", images.dims()));
        }
        if images.batch() < 2 {
            return invalid(format!("calibration needs at least 2 images, got {}", images.batch()));
        }
        Ok(Self { images })
    }

    /// Draws `n` images from `pool` in a seeded random order.
    pub fn sample(pool: &Tensor, n: usize, seed: u64) -> Result<Self> {
        if n > pool.batch() {
            return invalid(format!("requested {n} calibration images but the pool has {}", pool.batch()));
        }
        let mut idx: Vec<usize> = (0..pool.batch()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        Self::new(pool.gather_batch(&idx)?)
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    /// Consecutive batches of at most `batch_size` images.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = Tensor> + '_ {
        let n = self.len();
        let bs = batch_size.max(1);
        (0..n).step_by(bs).map(move |start| {
            self.images.slice_batch(start, bs.min(n - start)).expect("slice within range")
        })
    }
}

/// Mean and population variance per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Samples per channel.
    pub count: u64,
}

/// Streaming per-channel first and second moments.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    shift: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    count: u64,
}

impl MomentAccumulator {
    pub fn new(channels: usize) -> Self {
        Self { shift: vec![f64::NAN; channels], s1: vec![0.0; channels], s2: vec![0.0; channels], count: 0 }
    }

    /// Adds an `(N, C, ...)` activation batch.
    pub fn push(&mut self, node: &str, acts: &Tensor) -> Result<()> {
        let c = self.s1.len();
        if acts.dims().len() < 2 || acts.dims()[1] != c {
            return Err(Error::Shape {
                node: node.into(),
                detail: format!("expected {c} channels, got dims {:?}", acts.dims()),
            });
        }
        let plane: usize = acts.dims()[2..].iter().product();
        for (idx, chunk) in acts.data().chunks(plane).enumerate() {
            let ch = idx % c;
            if self.shift[ch].is_nan() {
                self.shift[ch] = chunk[0] as f64;
            }
            let k = self.shift[ch];
            let (mut a, mut b) = (self.s1[ch], self.s2[ch]);
            for &v in chunk {
                if !v.is_finite() {
                    return Err(Error::NonFinite(node.into()));
                }
                let d = v as f64 - k;
                a += d;
                b += d * d;
            }
            self.s1[ch] = a;
            self.s2[ch] = b;
        }
        self.count += (acts.batch() * plane) as u64;
        Ok(())
    }

    pub fn finish(&self) -> NodeMoments {
        let n = self.count as f64;
        let mean = self.s1.iter().zip(&self.shift).map(|(s, k)| k + s / n).collect();
        let var = self
            .s1
            .iter()
            .zip(&self.s2)
            .map(|(s1, s2)| ((s2 - s1 * s1 / n) / n).max(0.0))
            .collect();
        NodeMoments { mean, var, count: self.count }
    }
}

/// Streaming per-channel cross moment of two paired activation tensors.
#[derive(Debug, Clone)]
struct CrossAccumulator {
    shift: Vec<(f64, f64)>,
    sx: Vec<f64>,
    sy: Vec<f64>,
    sxy: Vec<f64>,
    count: u64,
}

impl CrossAccumulator {
    fn new(channels: usize) -> Self {
        Self {
            shift: vec![(f64::NAN, f64::NAN); channels],
            sx: vec![0.0; channels],
            sy: vec![0.0; channels],
            sxy: vec![0.0; channels],
            count: 0,
        }
    }

    fn push(&mut self, x: &Tensor, y: &Tensor) {
        let c = self.sx.len();
        let plane: usize = x.dims()[2..].iter().product();
        for (idx, (cx, cy)) in x.data().chunks(plane).zip(y.data().chunks(plane)).enumerate() {
            let ch = idx % c;
            if self.shift[ch].0.is_nan() {
                self.shift[ch] = (cx[0] as f64, cy[0] as f64);
            }
            let (kx, ky) = self.shift[ch];
            for (&a, &b) in cx.iter().zip(cy) {
                let (dx, dy) = (a as f64 - kx, b as f64 - ky);
                self.sx[ch] += dx;
                self.sy[ch] += dy;
                self.sxy[ch] += dx * dy;
            }
        }
        self.count += (x.batch() * plane) as u64;
    }

    fn covariance(&self) -> Vec<f64> {
        let n = self.count as f64;
        (0..self.sx.len()).map(|c| (self.sxy[c] - self.sx[c] * self.sy[c] / n) / n).collect()
    }
}

/// Names of every conv node, the default tap set.
pub fn conv_taps(model: &Model) -> Vec<String> {
    model.graph.conv_nodes().map(|n| n.name.clone()).collect()
}

fn channels_of(acts: &Tensor) -> usize {
    acts.dims().get(1).copied().unwrap_or(1)
}

/// Per-channel moments of the tapped node outputs over `calib`.
pub fn collect_stats(
    model: &Model,
    calib: &CalibrationSet,
    batch_size: usize,
    taps: &[String],
) -> Result<BTreeMap<String, NodeMoments>> {
    let names: Vec<&str> = taps.iter().map(String::as_str).collect();
    let mut acc: BTreeMap<String, MomentAccumulator> = BTreeMap::new();
    for batch in calib.batches(batch_size) {
        let out = forward(model, &batch, &names)?;
        for (name, acts) in &out.tapped {
            acc.entry(name.clone())
                .or_insert_with(|| MomentAccumulator::new(channels_of(acts)))
                .push(name, acts)?;
        }
    }
    Ok(acc.into_iter().map(|(k, a)| (k, a.finish())).collect())
}

/// Dense and pruned moments for one node, plus their per-channel covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedMoments {
    pub dense: NodeMoments,
    pub pruned: NodeMoments,
    /// `Cov(pruned, dense)` per channel.
    pub covariance: Vec<f64>,
}

impl PairedMoments {
    pub fn channels(&self) -> usize {
        self.dense.mean.len()
    }
}

/// Paired statistics keyed by node name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelStats {
    pub nodes: BTreeMap<String, PairedMoments>,
}

impl ChannelStats {
    /// Tab-separated dump: node, channel, dense mean/var, pruned mean/var.
    pub fn to_text(&self) -> String {
        let mut out = String::from("node\tchannel\tmu_dense\tvar_dense\tmu_pruned\tvar_pruned\n");
        for (node, m) in &self.nodes {
            for c in 0..m.channels() {
                let _ = writeln!(
                    out,
                    "{node}\t{c}\t{:e}\t{:e}\t{:e}\t{:e}",
                    m.dense.mean[c], m.dense.var[c], m.pruned.mean[c], m.pruned.var[c]
                );
            }
        }
        out
    }

    /// Fraction of channels whose pruned variance does not exceed the dense one.
    pub fn fraction_var_reduced(&self) -> f64 {
        let (mut below, mut total) = (0usize, 0usize);
        for m in self.nodes.values() {
            for (p, d) in m.pruned.var.iter().zip(&m.dense.var) {
                total += 1;
                below += (p <= d) as usize;
            }
        }
        below as f64 / total.max(1) as f64
    }
}

/// Runs dense and pruned models over the same calibration batches and merges
/// their moments at `taps` (every conv node when `None`).
pub fn paired_stats(
    dense: &Model,
    pruned: &Model,
    calib: &CalibrationSet,
    batch_size: usize,
    taps: Option<&[String]>,
) -> Result<ChannelStats> {
    if !dense.graph.same_topology(&pruned.graph) {
        return Err(Error::Topology("dense and pruned graphs differ".into()));
    }
    let taps: Vec<String> = taps.map_or_else(|| conv_taps(dense), <[String]>::to_vec);
    let names: Vec<&str> = taps.iter().map(String::as_str).collect();
    let mut acc: BTreeMap<String, (MomentAccumulator, MomentAccumulator, CrossAccumulator)> =
        BTreeMap::new();
    for batch in calib.batches(batch_size) {
        let d = forward(dense, &batch, &names)?;
        let p = forward(pruned, &batch, &names)?;
        for (name, da) in &d.tapped {
            let pa = &p.tapped[name];
            if da.dims() != pa.dims() {
                return Err(Error::Topology(format!("node `{name}` output dims differ")));
            }
            let c = channels_of(da);
            let e = acc.entry(name.clone()).or_insert_with(|| {
                (MomentAccumulator::new(c), MomentAccumulator::new(c), CrossAccumulator::new(c))
            });
            e.0.push(name, da)?;
            e.1.push(name, pa)?;
            e.2.push(pa, da);
        }
    }
    let nodes = acc
        .into_iter()
        .map(|(k, (d, p, x))| {
            (k, PairedMoments { dense: d.finish(), pruned: p.finish(), covariance: x.covariance() })
        })
        .collect();
    Ok(ChannelStats { nodes })
}
