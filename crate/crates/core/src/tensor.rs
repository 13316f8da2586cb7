//! Dense row-major tensors.
//!
//! Axis order is fixed across the crate: `(batch, channel, height, width)`
//! for feature maps and `(batch, channel, height, width, time)` for video
//! volumes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        validate_shape(shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; for internally derived shapes.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        validate_shape(shape).expect("valid tensor shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        validate_shape(shape).expect("valid tensor shape");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-type conversion, e.g. `f32` parameters into `f64` for gradient checks.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn expect_shape(&self, shape: &[usize], op: &'static str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(
                op,
                format!("expected {shape:?}, got {:?}", self.shape),
            ));
        }
        Ok(())
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    /// `(B, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::shape(
                op,
                format!("expected rank-4 (B,C,H,W), got {:?}", self.shape),
            )),
        }
    }

    /// `(B, C, H, W, T)` of a rank-5 volume.
    pub fn dims5(&self, op: &'static str) -> Result<(usize, usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [b, c, h, w, t] => Ok((b, c, h, w, t)),
            _ => Err(Error::shape(
                op,
                format!("expected rank-5 (B,C,H,W,T), got {:?}", self.shape),
            )),
        }
    }

    /// Time slice `t` of a `(B,C,H,W,T)` volume as a `(B,C,H,W)` tensor.
    pub fn time_slice(&self, t: usize) -> Result<Self> {
        let (b, c, h, w, steps) = self.dims5("time_slice")?;
        if t >= steps {
            return Err(Error::shape(
                "time_slice",
                format!("time index {t} out of range for {steps} steps"),
            ));
        }
        let data = self.data.iter().skip(t).step_by(steps).copied().collect();
        Ok(Self {
            shape: vec![b, c, h, w],
            data,
        })
    }

    /// Writes a `(B,C,H,W)` frame into time slot `t` of this volume.
    pub fn set_time_slice(&mut self, t: usize, frame: &Self) -> Result<()> {
        let (b, c, h, w, steps) = self.dims5("set_time_slice")?;
        frame.expect_shape(&[b, c, h, w], "set_time_slice")?;
        if t >= steps {
            return Err(Error::shape(
                "set_time_slice",
                format!("time index {t} out of range for {steps} steps"),
            ));
        }
        for (dst, &src) in self.data.iter_mut().skip(t).step_by(steps).zip(&frame.data) {
            *dst = src;
        }
        Ok(())
    }

    /// Stacks equally shaped `(B,C,H,W)` frames along a trailing time axis.
    pub fn stack_time(frames: &[Self]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::shape("stack_time", "no frames"))?;
        let (b, c, h, w) = first.dims4("stack_time")?;
        let mut out = Self::zeros(&[b, c, h, w, frames.len()]);
        for (t, f) in frames.iter().enumerate() {
            out.set_time_slice(t, f)?;
        }
        Ok(out)
    }

    /// Reverses a `(B,C,H,W,T)` volume along time.
    pub fn reverse_time(&self) -> Result<Self> {
        let (.., steps) = self.dims5("reverse_time")?;
        let mut data = self.data.clone();
        for chunk in data.chunks_mut(steps) {
            chunk.reverse();
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Sample `b` of a batched tensor, keeping a leading axis of extent 1.
    pub fn batch_item(&self, b: usize) -> Result<Self> {
        let n = *self
            .shape
            .first()
            .ok_or_else(|| Error::shape("batch_item", "rank-0 tensor"))?;
        if b >= n {
            return Err(Error::shape(
                "batch_item",
                format!("batch index {b} out of range for {n}"),
            ));
        }
        let per = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Self {
            shape,
            data: self.data[b * per..(b + 1) * per].to_vec(),
        })
    }

    /// Concatenates tensors along the leading (batch) axis.
    pub fn concat_batch(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("concat_batch", "no items"))?;
        let tail = &first.shape[1..];
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        let mut n = 0;
        for it in items {
            if &it.shape[1..] != tail {
                return Err(Error::shape(
                    "concat_batch",
                    format!("{:?} vs {:?}", first.shape, it.shape),
                ));
            }
            n += it.shape[0];
            data.extend_from_slice(&it.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Self { shape, data })
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::shape("Tensor", "shape must have at least one axis"));
    }
    if let Some(axis) = shape.iter().position(|&n| n == 0) {
        return Err(Error::shape(
            "Tensor",
            format!("axis {axis} of {shape:?} has zero extent"),
        ));
    }
    Ok(())
}

/// A parameter tensor paired with its gradient.
#[derive(Clone, Debug)]
pub struct GradPair<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> GradPair<T> {
    pub fn new(value: Tensor<T>, grad: Tensor<T>) -> Result<Self> {
        value.expect_same_shape(&grad, "GradPair")?;
        Ok(Self { value, grad })
    }

    pub fn with_zero_grad(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }
}
