use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major array of `f64` values.
///
/// Feature maps use the rank-4 layout `(batch, channels, height, width)`;
/// scan sequences use `(batch, length, channels)`; parameters use whatever
/// rank their layer needs.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Rank-4 `(batch, channels, height, width)` tensor.
pub type FeatureMap = Tensor;

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} values for shape {:?}", numel, shape),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Rank-4 map built from a closure over `(n, c, y, x)`.
    pub fn from_fn4(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Tensor {
            shape: dims.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(batch, channels, height, width)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape("dims4", "rank-4 tensor", format!("{:?}", self.shape))),
        }
    }

    /// `(batch, length, channels)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<[usize; 3]> {
        match self.shape[..] {
            [b, l, d] => Ok([b, l, d]),
            _ => Err(Error::shape("dims3", "rank-3 tensor", format!("{:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", self.data.len()),
                format!("{:?}", shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, ch, h, w] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        self.data[((n * ch + c) * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len().max(1) as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Stack rank-4 maps along the batch axis.
    pub fn stack_batch(maps: &[&Tensor]) -> Result<Tensor> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Usage("stack_batch of zero maps".into()))?
            .dims4()?;
        let mut data = Vec::new();
        for m in maps {
            let d = m.dims4()?;
            if d[1..] != first[1..] {
                return Err(Error::shape("stack_batch", format!("{:?}", first), format!("{:?}", d)));
            }
            data.extend_from_slice(&m.data);
        }
        let n = data.len() / (first[1] * first[2] * first[3]);
        Tensor::new(&[n, first[1], first[2], first[3]], data)
    }

    /// Single batch item of a rank-4 map.
    pub fn batch_item(&self, index: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.dims4()?;
        if index >= n {
            return Err(Error::Usage(format!("batch index {index} out of range for batch {n}")));
        }
        let plane = c * h * w;
        Tensor::new(&[1, c, h, w], self.data[index * plane..(index + 1) * plane].to_vec())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        let head: Vec<_> = self.data.iter().take(PREVIEW).collect();
        if self.data.len() > PREVIEW {
            write!(f, "{:?}..", head)
        } else {
            write!(f, "{:?}", head)
        }
    }
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    format!("{:?}", shape)
}
