//! Dense 4-D tensors `(N, C, H, W)` with row-major `f64` storage.
//!
//! A [`Tensor`] is an immutable value: cloning shares the buffer, and the
//! only mutation path ([`Tensor::data_mut`]) copies on write when the buffer
//! is shared.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Extents of a 4-D tensor in `(N, C, H, W)` order.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1]);

    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Number of elements in one `(H, W)` plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    pub fn is_scalar(&self) -> bool {
        *self == Shape::SCALAR
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n},{c},{h},{w})")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("{} elements for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Like [`Tensor::from_vec`] for internal call sites where the length is
    /// correct by construction.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor::from_parts(shape, vec![value; shape.numel()])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(Shape::SCALAR, vec![value])
    }

    /// A `(1, 1, 1, n)` row.
    pub fn row(values: &[f64]) -> Self {
        Tensor::from_parts(Shape::new(1, 1, 1, values.len()), values.to_vec())
    }

    /// A `(1, C, 1, 1)` tensor holding one value per channel.
    pub fn per_channel(values: Vec<f64>) -> Self {
        Tensor::from_parts(Shape::new(1, values.len(), 1, 1), values)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; clones the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape.0;
        ((n * cs + c) * hs + h) * ws + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    /// Value of a `(1,1,1,1)` tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.shape.is_scalar());
        self.data[0]
    }

    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{} -> {shape}", self.shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "elementwise",
                format!("{} vs {}", self.shape, other.shape),
            ));
        }
        Ok(Tensor::from_parts(
            self.shape,
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of samples `range` along the batch axis.
    pub fn slice_batch(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.shape.n() || range.start > range.end {
            return Err(Error::invalid(
                "slice_batch",
                format!("{range:?} of batch {}", self.shape.n()),
            ));
        }
        let per = self.shape.c() * self.shape.plane();
        let shape = Shape::new(range.len(), self.shape.c(), self.shape.h(), self.shape.w());
        Ok(Tensor::from_parts(
            shape,
            self.data[range.start * per..range.end * per].to_vec(),
        ))
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack_batch(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack_batch", "no tensors"))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if s.c() != first.c() || s.h() != first.h() || s.w() != first.w() {
                return Err(Error::shape("stack_batch", format!("{first} vs {s}")));
            }
            n += s.n();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_parts(
            Shape::new(n, first.c(), first.h(), first.w()),
            data,
        ))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}
