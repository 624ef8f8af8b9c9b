//! Dense row-major tensors and the handful of kernels the network needs.
//!
//! Every reduction sums left to right over the contracted axis, so a kernel
//! called twice on the same inputs gives bitwise-identical output within one
//! precision. Storage precision is a type parameter: `f32` for training runs,
//! `f64` for gradient checks and equivalence tests.

use std::fmt::{Debug, Display};
use std::ops::AddAssign;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point storage type for tensors.
pub trait Real:
    Float + AddAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// Flag stored in checkpoint headers.
    const PRECISION_FLAG: u64;
    const BYTES: usize;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes` must hold exactly `Self::BYTES` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION_FLAG: u64 = 0;
    const BYTES: usize = 4;

    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Real for f64 {
    const PRECISION_FLAG: u64 = 1;
    const BYTES: usize = 8;

    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Precision mode selected at runtime; picks the `Real` instantiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn flag(self) -> u64 {
        match self {
            Precision::Single => f32::PRECISION_FLAG,
            Precision::Double => f64::PRECISION_FLAG,
        }
    }

    pub fn from_flag(flag: u64) -> Option<Self> {
        match flag {
            0 => Some(Precision::Single),
            1 => Some(Precision::Double),
            _ => None,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "single" => Ok(Precision::Single),
            "f64" | "double" => Ok(Precision::Double),
            other => Err(Error::InvalidArgument(format!(
                "unknown precision {other:?} (expected f32 or f64)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(shape));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(&mut f).collect();
        Tensor::new(shape.to_vec(), data).expect("zero extent in from_fn shape")
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rows `[start, start+count)` along the leading axis.
    pub fn rows(&self, start: usize, count: usize) -> Tensor<T> {
        let stride: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = count;
        Tensor {
            shape,
            data: self.data[start * stride..(start + count) * stride].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Compares bit patterns, so `-0.0 != 0.0` and NaNs compare by payload.
    pub fn bitwise_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(other, op)?;
        let out = Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        };
        debug_check(&out, op, &[self, other]);
        Ok(out)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Tensor<T> {
        self.map(|x| x * k)
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds a bias vector to every row of a 2-D tensor.
    pub fn add_row_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, n) = self.dims2("add_row_bias")?;
        if bias.len() != n {
            return Err(Error::Dimension {
                op: "add_row_bias",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(n) {
            for (x, &b) in row.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(out)
    }

    /// Column sums of a 2-D tensor, accumulated top to bottom.
    pub fn sum_rows(&self) -> Result<Tensor<T>> {
        let (_, n) = self.dims2("sum_rows")?;
        let mut out = vec![T::zero(); n];
        for row in self.data.chunks_exact(n) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Tensor::new(vec![n], out)
    }

    /// Extracts columns `[start, start+width)` of a 2-D tensor.
    pub fn columns(&self, start: usize, width: usize) -> Result<Tensor<T>> {
        let (m, n) = self.dims2("columns")?;
        if start + width > n || width == 0 {
            return Err(Error::OutOfRange {
                index: start + width,
                limit: n,
            });
        }
        let mut data = Vec::with_capacity(m * width);
        for row in self.data.chunks_exact(n) {
            data.extend_from_slice(&row[start..start + width]);
        }
        Tensor::new(vec![m, width], data)
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: vec![],
            }),
        }
    }

    fn same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

#[inline]
fn debug_check<T: Real>(out: &Tensor<T>, op: &str, inputs: &[&Tensor<T>]) {
    if cfg!(debug_assertions) && inputs.iter().all(|t| t.is_finite()) {
        assert!(out.is_finite(), "{op} produced a non-finite value from finite inputs");
    }
}

fn mismatch<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Dimension {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

/// `a [m,k] · b [k,n]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul").map_err(|_| mismatch("matmul", a, b))?;
    let (k2, n) = b.dims2("matmul").map_err(|_| mismatch("matmul", a, b))?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![T::zero(); m * n];
    for (out_row, a_row) in out.chunks_exact_mut(n).zip(a.data.chunks_exact(k)) {
        // i-k-j order: each out[i][j] still accumulates over k in increasing order.
        for (&a_ik, b_row) in a_row.iter().zip(b.data.chunks_exact(n)) {
            for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                *o += a_ik * b_kj;
            }
        }
    }
    let out = Tensor { shape: vec![m, n], data: out };
    debug_check(&out, "matmul", &[a, b]);
    Ok(out)
}

/// `aᵀ · b` for `a [k,m]`, `b [k,n]`.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = a.dims2("matmul_tn").map_err(|_| mismatch("matmul_tn", a, b))?;
    let (k2, n) = b.dims2("matmul_tn").map_err(|_| mismatch("matmul_tn", a, b))?;
    if k != k2 {
        return Err(mismatch("matmul_tn", a, b));
    }
    let mut out = vec![T::zero(); m * n];
    for (a_row, b_row) in a.data.chunks_exact(m).zip(b.data.chunks_exact(n)) {
        for (&a_ki, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                *o += a_ki * b_kj;
            }
        }
    }
    let out = Tensor { shape: vec![m, n], data: out };
    debug_check(&out, "matmul_tn", &[a, b]);
    Ok(out)
}

/// `a · bᵀ` for `a [m,k]`, `b [n,k]`.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul_nt").map_err(|_| mismatch("matmul_nt", a, b))?;
    let (n, k2) = b.dims2("matmul_nt").map_err(|_| mismatch("matmul_nt", a, b))?;
    if k != k2 {
        return Err(mismatch("matmul_nt", a, b));
    }
    let mut out = Vec::with_capacity(m * n);
    for a_row in a.data.chunks_exact(k) {
        for b_row in b.data.chunks_exact(k) {
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out.push(acc);
        }
    }
    let out = Tensor { shape: vec![m, n], data: out };
    debug_check(&out, "matmul_nt", &[a, b]);
    Ok(out)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}
