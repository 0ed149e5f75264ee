//! Dense row-major tensors.
//!
//! Every value flowing through the library is a [`Tensor`]: a shape plus a
//! flat `Vec<f64>` in row-major order. Image batches use the channels-last
//! layout `(n, h, w, c)`, see [`Shape4`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch-major, channels-last image batch dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape(format!(
                "Shape4 dimensions must be positive, got ({n}, {h}, {w}, {c})"
            )));
        }
        Ok(Self { n, h, w, c })
    }

    /// Flat row-major offset of `(b, i, j, k)`.
    #[inline]
    pub fn offset(&self, b: usize, i: usize, j: usize, k: usize) -> usize {
        ((b * self.h + i) * self.w + j) * self.c + k
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }
}

impl TryFrom<&[usize]> for Shape4 {
    type Error = Error;

    fn try_from(shape: &[usize]) -> Result<Self> {
        match *shape {
            [n, h, w, c] => Shape4::new(n, h, w, c),
            _ => Err(Error::Shape(format!("expected rank-4 shape, got {shape:?}"))),
        }
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` holds exactly `product(shape)`
    /// elements and that every dimension is positive.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_dims(shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        check_dims(shape).expect("invalid tensor shape");
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Interprets a rank-4 tensor as an NHWC batch.
    pub fn shape4(&self) -> Result<Shape4> {
        Shape4::try_from(self.shape.as_slice())
    }

    /// Row-major flat offset of a full coordinate.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "index {index:?} has rank {}, tensor has rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::Shape(format!(
                    "index {index:?} out of bounds for shape {:?}",
                    self.shape
                )));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    /// `self += alpha * other`, element by element.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sum_squares().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Per-channel mean over the spatial dims of an NHWC tensor, giving `(n, c)`.
    pub fn reduce_mean_spatial(&self) -> Result<Tensor> {
        let s = self.shape4()?;
        let plane = (s.h * s.w) as f64;
        let mut out = vec![0.0; s.n * s.c];
        for b in 0..s.n {
            let acc = &mut out[b * s.c..(b + 1) * s.c];
            let img = &self.data[b * s.h * s.w * s.c..(b + 1) * s.h * s.w * s.c];
            for px in img.chunks_exact(s.c) {
                for (a, &v) in acc.iter_mut().zip(px) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= plane);
        }
        Tensor::from_vec(&[s.n, s.c], out)
    }
}

fn check_dims(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!(
            "tensor dimensions must be non-empty and positive, got {shape:?}"
        )));
    }
    Ok(())
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}
