#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use sparse_repair::graph::{LayerKind, Model, ModelGraph, Node, INPUT};
use sparse_repair::{io, CalibrationSet, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>, scale: f32) -> Tensor {
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0f32) * scale).collect();
    Tensor::new(dims, data).unwrap()
}

/// Incremental graph construction for tests.
pub struct Builder {
    pub graph: ModelGraph,
    pub weights: BTreeMap<String, Tensor>,
    pub rng: ChaCha8Rng,
    last: String,
}

impl Builder {
    pub fn new(input_dims: Vec<usize>, seed: u64) -> Self {
        Self {
            graph: ModelGraph {
                arch: "test".into(),
                num_classes: 0,
                input_dims,
                output: String::new(),
                nodes: Vec::new(),
            },
            weights: BTreeMap::new(),
            rng: rng(seed),
            last: INPUT.into(),
        }
    }

    pub fn last(&self) -> String {
        self.last.clone()
    }

    fn push(&mut self, name: &str, inputs: Vec<String>, kind: LayerKind) -> String {
        self.graph.nodes.push(Node { name: name.into(), inputs, kind });
        self.last = name.into();
        name.into()
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> String {
        let scale = (2.0 / (cin * k * k) as f32).sqrt();
        let w = random_tensor(&mut self.rng, vec![cout, cin, k, k], scale);
        self.weights.insert(format!("{name}.weight"), w);
        let bias = bias.then(|| {
            let b = random_tensor(&mut self.rng, vec![cout], 0.1);
            self.weights.insert(format!("{name}.bias"), b);
            format!("{name}.bias")
        });
        let input = self.last();
        self.push(
            name,
            vec![input],
            LayerKind::Conv2d { weight: format!("{name}.weight"), bias, stride, padding: pad },
        )
    }

    pub fn bn(&mut self, name: &str, c: usize) -> String {
        let r = &mut self.rng;
        let scale = (0..c).map(|_| r.gen_range(0.5..1.5f32)).collect();
        let shift = (0..c).map(|_| r.gen_range(-0.2..0.2f32)).collect();
        let mean = (0..c).map(|_| r.gen_range(-0.3..0.3f32)).collect();
        let var = (0..c).map(|_| r.gen_range(0.5..2.0f32)).collect();
        for (suffix, data) in [("weight", scale), ("bias", shift), ("running_mean", mean), ("running_var", var)] {
            self.weights.insert(format!("{name}.{suffix}"), Tensor::new(vec![c], data).unwrap());
        }
        let input = self.last();
        self.push(
            name,
            vec![input],
            LayerKind::Batchnorm2d {
                weight: format!("{name}.weight"),
                bias: format!("{name}.bias"),
                running_mean: format!("{name}.running_mean"),
                running_var: format!("{name}.running_var"),
                eps: 1e-5,
            },
        )
    }

    pub fn simple(&mut self, name: &str, kind: LayerKind) -> String {
        let input = self.last();
        self.push(name, vec![input], kind)
    }

    pub fn add(&mut self, name: &str, a: &str, b: &str) -> String {
        self.push(name, vec![a.into(), b.into()], LayerKind::Add)
    }

    pub fn linear(&mut self, name: &str, fin: usize, fout: usize) -> String {
        let w = random_tensor(&mut self.rng, vec![fout, fin], (1.0 / fin as f32).sqrt());
        let b = random_tensor(&mut self.rng, vec![fout], 0.1);
        self.weights.insert(format!("{name}.weight"), w);
        self.weights.insert(format!("{name}.bias"), b);
        let input = self.last();
        self.push(
            name,
            vec![input],
            LayerKind::Linear { weight: format!("{name}.weight"), bias: Some(format!("{name}.bias")) },
        )
    }

    pub fn finish(mut self, num_classes: usize) -> Model {
        self.graph.num_classes = num_classes;
        self.graph.output = self.last.clone();
        Model::new(self.graph, self.weights).unwrap()
    }
}

/// conv-BN-ReLU, conv-BN-ReLU with a residual add, global pool, linear.
pub fn small_resnet(seed: u64, cin: usize, width: usize, side: usize, classes: usize) -> Model {
    let mut b = Builder::new(vec![cin, side, side], seed);
    b.conv("conv1", cin, width, 3, 1, 1, false);
    b.bn("bn1", width);
    let stem = b.simple("relu1", LayerKind::Relu);
    b.conv("conv2", width, width, 3, 1, 1, false);
    b.bn("bn2", width);
    let branch = b.last();
    b.add("add", &stem, &branch);
    b.simple("relu2", LayerKind::Relu);
    b.simple("pool", LayerKind::Maxpool2d { kernel: 2, stride: 2, padding: 0 });
    b.conv("conv3", width, 2 * width, 3, 1, 1, true);
    b.bn("bn3", 2 * width);
    b.simple("relu3", LayerKind::Relu);
    b.simple("gap", LayerKind::Globalavgpool);
    b.simple("flat", LayerKind::Flatten);
    b.linear("fc", 2 * width, classes);
    b.finish(classes)
}

pub fn random_images(seed: u64, n: usize, dims: &[usize]) -> Tensor {
    let mut all = vec![n];
    all.extend_from_slice(dims);
    random_tensor(&mut rng(seed), all, 1.5)
}

pub fn random_calib(seed: u64, n: usize, model: &Model) -> CalibrationSet {
    CalibrationSet::new(random_images(seed, n, &model.graph.input_dims)).unwrap()
}

// ---------------------------------------------------------------------------
// Naive reference forward: nested loops over f64 arrays, no shared code with
// the engine's kernels.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Arr {
    pub dims: Vec<usize>,
    pub v: Vec<f64>,
}

impl Arr {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self { dims: t.dims().to_vec(), v: t.data().iter().map(|&x| x as f64).collect() }
    }

    fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let d = &self.dims;
        self.v[((n * d[1] + c) * d[2] + y) * d[3] + x]
    }
}

pub fn naive_conv(x: &Arr, w: &Arr, b: Option<&Arr>, stride: usize, pad: usize) -> Arr {
    let (n, c, h, wd) = (x.dims[0], x.dims[1], x.dims[2], x.dims[3]);
    let (o, kh, kw) = (w.dims[0], w.dims[2], w.dims[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    for bi in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b.map_or(0.0, |b| b.v[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += w.at4(oc, ic, ky, kx) * x.at4(bi, ic, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    Arr { dims: vec![n, o, oh, ow], v: out }
}

fn naive_pool(x: &Arr, k: usize, s: usize, p: usize, max: bool) -> Arr {
    let (n, c, h, w) = (x.dims[0], x.dims[1], x.dims[2], x.dims[3]);
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut out = Vec::new();
    for bi in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut vals = Vec::new();
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as i64 - p as i64;
                            let ix = (ox * s + kx) as i64 - p as i64;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                vals.push(x.at4(bi, ch, iy as usize, ix as usize));
                            }
                        }
                    }
                    out.push(if max {
                        vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    } else {
                        vals.iter().sum::<f64>() / (k * k) as f64
                    });
                }
            }
        }
    }
    Arr { dims: vec![n, c, oh, ow], v: out }
}

/// Evaluates one node with the naive reference kernels.
pub fn naive_node(model: &Model, node: &Node, ins: &[&Arr]) -> Arr {
    let wt = |name: &str| Arr::from_tensor(&model.weights[name]);
    let x = ins[0];
    match &node.kind {
        LayerKind::Conv2d { weight, bias, stride, padding } => {
            naive_conv(x, &wt(weight), bias.as_deref().map(wt).as_ref(), *stride, *padding)
        }
        LayerKind::Batchnorm2d { weight, bias, running_mean, running_var, eps } => {
            let (g, b, m, v) = (wt(weight), wt(bias), wt(running_mean), wt(running_var));
            let (c, plane) = (x.dims[1], x.dims[2] * x.dims[3]);
            let out = x
                .v
                .iter()
                .enumerate()
                .map(|(i, &val)| {
                    let ch = (i / plane) % c;
                    (val - m.v[ch]) / (v.v[ch] + eps).sqrt() * g.v[ch] + b.v[ch]
                })
                .collect();
            Arr { dims: x.dims.clone(), v: out }
        }
        LayerKind::Relu => Arr { dims: x.dims.clone(), v: x.v.iter().map(|&a| a.max(0.0)).collect() },
        LayerKind::Maxpool2d { kernel, stride, padding } => naive_pool(x, *kernel, *stride, *padding, true),
        LayerKind::Avgpool2d { kernel, stride, padding } => naive_pool(x, *kernel, *stride, *padding, false),
        LayerKind::Globalavgpool => {
            let plane = x.dims[2] * x.dims[3];
            let v = x.v.chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
            Arr { dims: vec![x.dims[0], x.dims[1], 1, 1], v }
        }
        LayerKind::Add => Arr { dims: x.dims.clone(), v: x.v.iter().zip(&ins[1].v).map(|(a, b)| a + b).collect() },
        LayerKind::Flatten => Arr { dims: vec![x.dims[0], x.dims[1..].iter().product()], v: x.v.clone() },
        LayerKind::Linear { weight, bias } => {
            let w = wt(weight);
            let (o, f) = (w.dims[0], w.dims[1]);
            let b = bias.as_deref().map(wt);
            let mut v = Vec::new();
            for row in x.v.chunks(f) {
                for oi in 0..o {
                    let mut s = b.as_ref().map_or(0.0, |b| b.v[oi]);
                    for j in 0..f {
                        s += w.v[oi * f + j] * row[j];
                    }
                    v.push(s);
                }
            }
            Arr { dims: vec![x.dims[0], o], v }
        }
    }
}

/// Whole-graph naive forward; returns every node's output by name.
pub fn naive_forward(model: &Model, batch: &Tensor) -> BTreeMap<String, Arr> {
    let mut outs: BTreeMap<String, Arr> = BTreeMap::new();
    let input = Arr::from_tensor(batch);
    for node in &model.graph.nodes {
        let ins: Vec<Arr> = node
            .inputs
            .iter()
            .map(|n| if n == INPUT { input.clone() } else { outs[n].clone() })
            .collect();
        let refs: Vec<&Arr> = ins.iter().collect();
        let out = naive_node(model, node, &refs);
        outs.insert(node.name.clone(), out);
    }
    outs
}

/// Largest `|got - want| / max(|want|, floor)`.
pub fn max_rel_err(got: &[f32], want: &[f64], floor: f64) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(&g, &w)| (g as f64 - w).abs() / w.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Relative error with the floor set to 5% of the largest reference
/// magnitude, so near-cancelling sums are judged against their operand scale.
pub fn scaled_rel_err(got: &[f32], want: &[f64]) -> f64 {
    let peak = want.iter().fold(0f64, |m, v| m.max(v.abs()));
    max_rel_err(got, want, (0.05 * peak).max(1e-12))
}

// ---------------------------------------------------------------------------
// Committed fixture
// ---------------------------------------------------------------------------

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub struct Fixture {
    pub model: Model,
    pub calib: Tensor,
    pub test_images: Tensor,
    pub test_labels: Vec<u32>,
    pub sidecar: Value,
}

pub fn fixture() -> Fixture {
    let d = fixture_dir();
    Fixture {
        model: io::load_model(d.join("fixture.spm")).unwrap(),
        calib: io::load_images(d.join("calib.tns")).unwrap(),
        test_images: io::load_images(d.join("test_images.tns")).unwrap(),
        test_labels: io::load_labels(d.join("test_labels.tns")).unwrap(),
        sidecar: serde_json::from_str(&std::fs::read_to_string(d.join("fixture.json")).unwrap()).unwrap(),
    }
}
