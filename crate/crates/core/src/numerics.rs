//! Dense row-major matrices and the elementwise hidden-unit nonlinearities.
//!
//! Every reduction sums left to right in index order so reruns are
//! bit-identical.

use std::fmt::{Debug, Display};
use std::ops::{Index, IndexMut};

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{Error, Result};

/// Floating-point scalar the model and optimizers are generic over.
pub trait Real:
    Float + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::usage(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    /// `A x`; errors when `A.cols != x.len()`.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::usage(format!(
                "matvec: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `A^T x`, accumulated row by row; errors when `A.rows != x.len()`.
    pub fn tr_matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows {
            return Err(Error::usage(format!(
                "tr_matvec: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    /// `self += alpha * u v^T`. Panics on shape mismatch (internal use).
    pub(crate) fn add_outer(&mut self, alpha: T, u: &[T], v: &[T]) {
        assert_eq!(u.len(), self.rows);
        assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let s = alpha * ui;
            for (a, &vj) in self.row_mut(i).iter_mut().zip(v) {
                *a += s * vj;
            }
        }
    }

    /// Σ_j |A_ij|.
    pub fn row_l1(&self, i: usize) -> Result<T> {
        if i >= self.rows {
            return Err(Error::usage(format!(
                "row index {i} out of range for {} rows",
                self.rows
            )));
        }
        Ok(l1(self.row(i)))
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> Result<T> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::usage("inf_norm of an empty matrix"));
        }
        Ok((0..self.rows)
            .map(|i| l1(self.row(i)))
            .fold(T::zero(), T::max))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    /// Converts entries to another scalar type.
    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|x| U::from(*x).expect("scalar conversion"))
                .collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn l1<T: Real>(a: &[T]) -> T {
    let mut acc = T::zero();
    for &x in a {
        acc += x.abs();
    }
    acc
}

pub fn matvec<T: Real>(a: &Matrix<T>, x: &[T]) -> Result<Vec<T>> {
    a.matvec(x)
}

pub fn inf_norm<T: Real>(a: &Matrix<T>) -> Result<T> {
    a.inf_norm()
}

pub fn row_l1<T: Real>(a: &Matrix<T>, i: usize) -> Result<T> {
    a.row_l1(i)
}

/// Hidden-unit nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Nonlin {
    Sigmoid,
    Tanh,
}

impl Nonlin {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Nonlin::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Nonlin::Tanh => x.tanh(),
        }
    }

    pub fn deriv<T: Real>(self, x: T) -> T {
        let fx = self.apply(x);
        match self {
            Nonlin::Sigmoid => fx * (T::one() - fx),
            Nonlin::Tanh => T::one() - fx * fx,
        }
    }

    /// Derivative from an already computed activation `fx = f(x)`.
    pub(crate) fn deriv_from_output<T: Real>(self, fx: T) -> T {
        match self {
            Nonlin::Sigmoid => fx * (T::one() - fx),
            Nonlin::Tanh => T::one() - fx * fx,
        }
    }

    /// max_x |f'(x)|.
    pub fn gamma<T: Real>(self) -> T {
        match self {
            Nonlin::Sigmoid => T::lit(0.25),
            Nonlin::Tanh => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlin::Sigmoid => "sigmoid",
            Nonlin::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Nonlin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Nonlin::Sigmoid),
            "tanh" => Ok(Nonlin::Tanh),
            other => Err(Error::usage(format!("unknown nonlinearity '{other}'"))),
        }
    }
}

pub fn apply_nonlin<T: Real>(kind: Nonlin, x: &[T]) -> Vec<T> {
    x.iter().map(|&v| kind.apply(v)).collect()
}

/// Diagonal of `D_f` at `x`.
pub fn nonlin_deriv<T: Real>(kind: Nonlin, x: &[T]) -> Vec<T> {
    x.iter().map(|&v| kind.deriv(v)).collect()
}

pub fn gamma_of<T: Real>(kind: Nonlin) -> T {
    kind.gamma()
}
