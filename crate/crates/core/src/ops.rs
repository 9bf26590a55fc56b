//! Layer kernels. Sums accumulate in f64 in a fixed order per output element
//! and are stored back as f32, so results do not depend on thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn nchw(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.dims() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref d => Err(Error::InvalidTensor(format!("{what} must be NCHW, got {d:?}"))),
    }
}

fn out_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 || extent + 2 * pad < kernel {
        return Err(Error::InvalidTensor(format!(
            "window {kernel} (stride {stride}, pad {pad}) gives no output on extent {extent}"
        )));
    }
    Ok((extent + 2 * pad - kernel) / stride + 1)
}

/// Cross-correlation over an NCHW batch with an OIHW weight.
///
/// Zero weights are skipped, which leaves every finite result unchanged and
/// makes pruned models proportionally cheaper to evaluate.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = nchw(input, "conv input")?;
    let (oc, ic, kh, kw) = match *weight.dims() {
        [o, i, kh, kw] => (o, i, kh, kw),
        ref d => return Err(Error::InvalidTensor(format!("conv weight must be OIHW, got {d:?}"))),
    };
    if ic != c {
        return Err(Error::InvalidTensor(format!(
            "conv weight expects {ic} input channels, input has {c}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != oc {
            return Err(Error::InvalidTensor(format!("conv bias has {} entries for {oc} channels", b.len())));
        }
    }
    let oh = out_extent(h, kh, stride, padding)?;
    let ow = out_extent(w, kw, stride, padding)?;
    let plane = oh * ow;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0f32; n * oc * plane];

    out.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (b, o) = (idx / oc, idx % oc);
        let mut acc = vec![bias.map_or(0.0, |b| b[o] as f64); plane];
        for i in 0..ic {
            let src = &x[(b * c + i) * h * w..(b * c + i + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wt[((o * ic + i) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let wv = wv as f64;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let acc_row = &mut acc[oy * ow..(oy + 1) * ow];
                        for (ox, a) in acc_row.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *a += wv * row[ix as usize] as f64;
                            }
                        }
                    }
                }
            }
        }
        for (d, a) in dst.iter_mut().zip(acc) {
            *d = a as f32;
        }
    });
    Tensor::new(vec![n, oc, oh, ow], out)
}

/// `(N, in) x (out, in)^T + bias`.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
    let (out_f, in_f) = match *weight.dims() {
        [o, i] => (o, i),
        ref d => return Err(Error::InvalidTensor(format!("linear weight must be 2-d, got {d:?}"))),
    };
    let n = input.batch();
    if input.item_len() != in_f {
        return Err(Error::InvalidTensor(format!(
            "linear expects {in_f} features, input has {}",
            input.item_len()
        )));
    }
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0f32; n * out_f];
    out.par_chunks_mut(out_f).enumerate().for_each(|(b, dst)| {
        let row = &x[b * in_f..(b + 1) * in_f];
        for (o, d) in dst.iter_mut().enumerate() {
            let mut acc = bias.map_or(0.0, |b| b[o] as f64);
            for (wv, xv) in wt[o * in_f..(o + 1) * in_f].iter().zip(row) {
                acc += *wv as f64 * *xv as f64;
            }
            *d = acc as f32;
        }
    });
    Tensor::new(vec![n, out_f], out)
}

/// Inference-mode batch norm from stored running statistics.
pub fn batchnorm_forward(
    input: &Tensor,
    scale: &[f32],
    shift: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f64,
) -> Result<Tensor> {
    let (n, c, h, w) = nchw(input, "batchnorm input")?;
    if [scale.len(), shift.len(), mean.len(), var.len()].iter().any(|&l| l != c) {
        return Err(Error::InvalidTensor(format!("batchnorm parameters must have {c} entries")));
    }
    let plane = h * w;
    let mut out = input.clone();
    out.data_mut().par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let ch = idx % c;
        let inv = 1.0 / (var[ch] as f64 + eps).sqrt();
        let (g, b, m) = (scale[ch] as f64, shift[ch] as f64, mean[ch] as f64);
        for v in dst.iter_mut() {
            *v = ((*v as f64 - m) * inv * g + b) as f32;
        }
    });
    debug_assert_eq!(out.numel(), n * c * plane);
    Ok(out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

fn pool(
    input: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
    max: bool,
) -> Result<Tensor> {
    let (n, c, h, w) = nchw(input, "pool input")?;
    let oh = out_extent(h, kernel, stride, padding)?;
    let ow = out_extent(w, kernel, stride, padding)?;
    let x = input.data();
    let mut out = vec![0f32; n * c * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(idx, dst)| {
        let src = &x[idx * h * w..(idx + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut sum = 0f64;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        let v = src[iy as usize * w + ix as usize];
                        best = best.max(v);
                        sum += v as f64;
                    }
                }
                dst[oy * ow + ox] =
                    if max { best } else { (sum / (kernel * kernel) as f64) as f32 };
            }
        }
    });
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn maxpool2d(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    pool(input, kernel, stride, padding, true)
}

/// Average pooling with padded positions included in the divisor.
pub fn avgpool2d(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    pool(input, kernel, stride, padding, false)
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = nchw(input, "global pool input")?;
    let data = input
        .data()
        .chunks(h * w)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64) as f32)
        .collect();
    Tensor::new(vec![n, c, 1, 1], data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::InvalidTensor(format!("add operands differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.dims().to_vec(), data)
}

pub fn flatten(input: &Tensor) -> Result<Tensor> {
    let n = input.batch();
    let f = input.item_len();
    input.clone().reshape(vec![n, f])
}
