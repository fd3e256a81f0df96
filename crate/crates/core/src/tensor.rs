//! Dense row-major tensors and the arithmetic everything else builds on.
//!
//! Images are stored `[channels, height, width]`, batches as
//! `[batch, channels, height, width]`. Training runs in `f32`; the gradient
//! checker instantiates the same code at `f64`.

use crate::error::{Error, Result};
use num_traits::Float;

/// Scalar element type a [`Tensor`] can hold.
pub trait Element:
    Float + num_traits::FromPrimitive + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    const DTYPE: &'static str;
    fn from_double(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    const DTYPE: &'static str = "f32";
    fn from_double(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const DTYPE: &'static str = "f64";
    fn from_double(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense N-dimensional array, row-major.
///
/// `data.len() == shape.iter().product()` holds at all times; the shape only
/// changes through [`Tensor::reshape`], which preserves element count and
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
}

fn check_dims(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("empty shape".into()));
    }
    let mut n = 1usize;
    for &d in shape {
        if d == 0 {
            return Err(Error::InvalidShape(format!(
                "zero dimension in shape {shape:?}"
            )));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidShape(format!("shape {shape:?} overflows")))?;
    }
    Ok(n)
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let n = check_dims(shape)?;
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} expects {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: E) -> Result<Self> {
        let n = check_dims(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, E::one())
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![E::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Single-element accessor for scalar-shaped tensors.
    pub fn scalar(&self) -> E {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_dims(shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elems) to {shape:?} ({n} elems)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Flat offset of `[b, c, h, w]` in a 4-D tensor.
    #[inline]
    pub fn idx4(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((b * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
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
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a / b)
    }

    pub fn maximum(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| if a > b { a } else { b })
    }

    pub fn add_scalar(&self, s: E) -> Self {
        self.map(|v| v + s)
    }

    pub fn mul_scalar(&self, s: E) -> Self {
        self.map(|v| v * s)
    }

    pub fn maximum_scalar(&self, s: E) -> Self {
        self.map(|v| if v > s { v } else { s })
    }

    pub fn sqrt(&self) -> Self {
        self.map(|v| v.sqrt())
    }

    pub fn exp(&self) -> Self {
        self.map(|v| v.exp())
    }

    pub fn square(&self) -> Self {
        self.map(|v| v * v)
    }

    /// Natural log; every element must be strictly positive.
    pub fn ln(&self) -> Result<Self> {
        if self.data.iter().any(|&v| v <= E::zero()) {
            return Err(Error::NumericDomain("ln of non-positive element".into()));
        }
        Ok(self.map(|v| v.ln()))
    }

    pub fn sum(&self) -> E {
        self.data.iter().fold(E::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> E {
        self.sum() / E::from_usize(self.data.len()).unwrap()
    }

    pub fn max_value(&self) -> E {
        self.data
            .iter()
            .fold(E::neg_infinity(), |acc, &v| if v > acc { v } else { acc })
    }

    /// Flat index of the maximum element; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Sum along one axis; the axis is removed unless it is the only one.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        if axis >= self.shape.len() {
            return Err(Error::InvalidShape(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let mid = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![E::zero(); outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + self.data[(o * mid + m) * inner + i];
                }
            }
        }
        let mut shape: Vec<usize> = self
            .shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::from_vec(&shape, out)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        let n = E::from_usize(self.shape[axis.min(self.shape.len() - 1)]).unwrap();
        Ok(self.sum_axis(axis)?.map(|v| v / n))
    }

    /// Per-row argmax of a 2-D tensor, lowest index on ties.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        if self.shape.len() != 2 {
            return Err(Error::InvalidShape(format!(
                "argmax_rows expects 2-D, got {:?}",
                self.shape
            )));
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &self.data[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            out.push(best);
        }
        Ok(out)
    }

    /// Standard matrix product of `[M,K] x [K,N]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::InvalidShape(format!(
                "matmul expects 2-D operands, got {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dims: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![E::zero(); m * n];
        // ikj order keeps both the b-row and the out-row contiguous.
        for i in 0..m {
            for kk in 0..k {
                let a = self.data[i * k + kk];
                let brow = &other.data[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + a * brow[j];
                }
            }
        }
        Tensor::from_vec(&[m, n], out)
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::InvalidShape(format!(
                "transpose expects 2-D, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![E::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::from_vec(&[n, m], out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossy precision change, used at the checkpoint boundary.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_double(v.to_f64())).collect(),
        }
    }
}
