//! Dense row-major f32 tensors.

use crate::error::{Error, Result};

/// A dense tensor. Activations are NCHW, conv weights OIHW.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidTensor("tensor needs at least one dimension".into()));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!("dimension {i} has zero extent")));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "dims {dims:?} hold {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let numel = dims.iter().product();
        Self::new(dims, vec![0.0; numel])
    }

    pub fn filled(dims: Vec<usize>, value: f32) -> Result<Self> {
        let numel = dims.iter().product();
        Self::new(dims, vec![value; numel])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading (batch) extent.
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    /// Elements per leading-index slice.
    pub fn item_len(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Rows `start..start + len` along the leading dimension.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        let n = self.batch();
        if len == 0 || start + len > n {
            return Err(Error::InvalidTensor(format!(
                "batch slice {start}..{} out of range for leading dim {n}",
                start + len
            )));
        }
        let item = self.item_len();
        let mut dims = self.dims.clone();
        dims[0] = len;
        Self::new(dims, self.data[start * item..(start + len) * item].to_vec())
    }

    /// Gathers rows by index along the leading dimension.
    pub fn gather_batch(&self, rows: &[usize]) -> Result<Self> {
        let n = self.batch();
        let item = self.item_len();
        let mut data = Vec::with_capacity(rows.len() * item);
        for &r in rows {
            if r >= n {
                return Err(Error::InvalidTensor(format!("row {r} out of range for leading dim {n}")));
            }
            data.extend_from_slice(&self.data[r * item..(r + 1) * item]);
        }
        let mut dims = self.dims.clone();
        dims[0] = rows.len();
        Self::new(dims, data)
    }

    /// Concatenates along the leading dimension.
    pub fn concat_batch(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidTensor("nothing to concatenate".into()))?;
        let tail = &first.dims[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if &p.dims[1..] != tail {
                return Err(Error::InvalidTensor(format!(
                    "cannot concatenate dims {:?} with {:?}",
                    p.dims, first.dims
                )));
            }
            n += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        let mut dims = first.dims.clone();
        dims[0] = n;
        Self::new(dims, data)
    }

    /// Largest relative elementwise deviation, `|a - b| / max(|a|, |b|, floor)`.
    pub fn max_rel_diff(&self, other: &Tensor, floor: f32) -> f32 {
        assert_eq!(self.dims, other.dims, "dims differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
            .fold(0.0, f32::max)
    }
}
