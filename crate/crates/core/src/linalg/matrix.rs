use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use crate::{Error, Result, Scalar};

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let row: Vec<String> = row.iter().take(8).map(|v| format!("{v:?}")).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, T::one())
    }

    /// `c * I_n`.
    pub fn scalar(n: usize, c: T) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = c;
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{} entries for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape("from_rows", format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Single column from a slice.
    pub fn column_vector(v: &[T]) -> Self {
        Matrix { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn scale_in_place(&mut self, c: T) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// `self + c * I`.
    pub fn shift_diag(&self, c: T) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::shape("shift_diag", format!("{:?} is not square", self.shape())));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] += c;
        }
        Ok(out)
    }

    /// `diag(v) * self`.
    pub fn scale_rows(&self, v: &[T]) -> Result<Self> {
        if v.len() != self.rows {
            return Err(Error::shape("scale_rows", format!("{} factors for {} rows", v.len(), self.rows)));
        }
        let mut out = self.clone();
        for (i, &s) in v.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        Ok(out)
    }

    /// `self * diag(v)`.
    pub fn scale_cols(&self, v: &[T]) -> Result<Self> {
        if v.len() != self.cols {
            return Err(Error::shape("scale_cols", format!("{} factors for {} cols", v.len(), self.cols)));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for (x, &s) in out.row_mut(i).iter_mut().zip(v) {
                *x *= s;
            }
        }
        Ok(out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.sum() / T::of(self.data.len() as f64)
    }

    /// `tr(self^T other)`, the Frobenius inner product.
    pub fn frob_inner(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "frob_inner")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn frob_norm(&self) -> T {
        self.data.iter().map(|&a| a * a).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> Result<T> {
        if !self.is_square() {
            return Err(Error::shape("trace", format!("{:?} is not square", self.shape())));
        }
        Ok(self.diag().into_iter().sum())
    }

    /// Trace divided by the dimension.
    pub fn ntrace(&self) -> Result<T> {
        let t = self.trace()?;
        if self.rows == 0 {
            return Ok(T::zero());
        }
        Ok(t / T::of(self.rows as f64))
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> T {
        let scale = self.max_abs();
        if scale == T::zero() || !self.is_square() {
            return if self.is_square() { T::zero() } else { T::infinity() };
        }
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// `(self + self^T) / 2`.
    pub fn symmetrize(&self) -> Self {
        let half = T::of(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| half * (self[(i, j)] + self[(j, i)]))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::shape("vstack", format!("{} vs {} columns", p.cols, cols)));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Leading `cols` columns.
    pub fn take_cols(&self, cols: usize) -> Self {
        Self::from_fn(self.rows, cols, |i, j| self[(i, j)])
    }

    pub fn matmul(&self, b: &Self) -> Result<Self> {
        if self.cols != b.rows {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", self.shape(), b.shape())));
        }
        Ok(gemm(self, false, b, false))
    }

    /// `self^T * b`.
    pub fn matmul_tn(&self, b: &Self) -> Result<Self> {
        if self.rows != b.rows {
            return Err(Error::shape("matmul_tn", format!("{:?}^T x {:?}", self.shape(), b.shape())));
        }
        Ok(gemm(self, true, b, false))
    }

    /// `self * b^T`.
    pub fn matmul_nt(&self, b: &Self) -> Result<Self> {
        if self.cols != b.cols {
            return Err(Error::shape("matmul_nt", format!("{:?} x {:?}^T", self.shape(), b.shape())));
        }
        Ok(gemm(self, false, b, true))
    }

    /// `self^T * self`.
    pub fn gram(&self) -> Self {
        gemm(self, true, self, false)
    }

    /// `self * self^T`.
    pub fn outer_gram(&self) -> Self {
        gemm(self, false, self, true)
    }

    /// `self^T * m * self`.
    pub fn sandwich(&self, m: &Self) -> Result<Self> {
        self.matmul_tn(&m.matmul(self)?)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::shape("matvec", format!("{:?} x {}", self.shape(), v.len())));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self^T v`.
    pub fn matvec_t(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows {
            return Err(Error::shape("matvec_t", format!("{:?}^T x {}", self.shape(), v.len())));
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::of(v.to_f64_lossy())).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `op(a) * op(b)` through the blocked kernel; shapes are checked by callers.
fn gemm<T: Scalar>(a: &Matrix<T>, ta: bool, b: &Matrix<T>, tb: bool) -> Matrix<T> {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides describe the row-major buffers of `a`, `b` and the fresh `c`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            T::zero(),
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Panics on mismatched shapes; use [`Matrix::matmul`] for a checked product.
impl<T: Scalar> Mul for &Matrix<T> {
    type Output = Matrix<T>;

    fn mul(self, rhs: &Matrix<T>) -> Matrix<T> {
        self.matmul(rhs).expect("matrix product shape mismatch")
    }
}
