use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Dense `(n, c, h, w)` tensor of `f64`, row-major.
///
/// Kernels use the `(out_channels, in_channels, kh, kw)` layout; vectors such
/// as biases and logits are stored as `(1, k, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!("{} values do not fill dims {:?}", data.len(), dims)));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn full(dims: [usize; 4], v: f64) -> Self {
        Tensor4 { dims, data: vec![v; dims.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor4 { dims: [1, 1, 1, 1], data: vec![v] }
    }

    /// A `(1, k, 1, 1)` vector.
    pub fn vector(values: Vec<f64>) -> Self {
        Tensor4 { dims: [1, values.len(), 1, 1], data: values }
    }

    pub fn randn<R: Rng + ?Sized>(dims: [usize; 4], std: f64, rng: &mut R) -> Self {
        let data = (0..dims.iter().product::<usize>()).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Values of sample `n`.
    pub fn sample(&self, n: usize) -> &[f64] {
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * per..(n + 1) * per]
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        let [_, cc, hh, ww] = self.dims;
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Tensor4) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stack equally shaped samples along the batch axis.
    pub fn stack(samples: &[&[f64]], c: usize, h: usize, w: usize) -> Result<Self> {
        let per = c * h * w;
        let mut data = Vec::with_capacity(samples.len() * per);
        for s in samples {
            if s.len() != per {
                return Err(Error::Shape(format!("sample of {} values, expected {per}", s.len())));
            }
            data.extend_from_slice(s);
        }
        Ok(Tensor4 { dims: [samples.len(), c, h, w], data })
    }
}
