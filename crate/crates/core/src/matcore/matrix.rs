use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
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
            return Err(Error::dim(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
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

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Single column vector.
    pub fn column(values: &[T]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
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

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col_to_vec(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[T]) {
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    fn product(
        &self,
        other: &Self,
        left_t: bool,
        right_t: bool,
    ) -> Result<Self> {
        let (m, k) = if left_t {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        };
        let (k2, n) = if right_t {
            (other.cols, other.rows)
        } else {
            (other.rows, other.cols)
        };
        if k != k2 {
            return Err(Error::dim(format!(
                "cannot multiply {m}x{k} by {k2}x{n}"
            )));
        }
        let (rsa, csa) = if left_t { (1, self.cols) } else { (self.cols, 1) };
        let (rsb, csb) = if right_t { (1, other.cols) } else { (other.cols, 1) };
        let mut out = Self::zeros(m, n);
        if m > 0 && n > 0 && k > 0 {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &self.data,
                rsa,
                csa,
                &other.data,
                rsb,
                csb,
                T::zero(),
                &mut out.data,
                n,
                1,
            );
        }
        Ok(out)
    }

    /// `self * other`
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.product(other, false, false)
    }

    /// `selfᵀ * other`
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        self.product(other, true, false)
    }

    /// `self * otherᵀ`
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        self.product(other, false, true)
    }

    /// `self += alpha * a * b`
    pub fn add_matmul(&mut self, alpha: T, a: &Self, b: &Self) -> Result<()> {
        if a.rows != self.rows || b.cols != self.cols || a.cols != b.rows {
            return Err(Error::dim(format!(
                "cannot accumulate {}x{} * {}x{} into {}x{}",
                a.rows, a.cols, b.rows, b.cols, self.rows, self.cols
            )));
        }
        if a.cols > 0 && self.rows > 0 && self.cols > 0 {
            T::gemm(
                self.rows,
                a.cols,
                self.cols,
                alpha,
                &a.data,
                a.cols,
                1,
                &b.data,
                b.cols,
                1,
                T::one(),
                &mut self.data,
                self.cols,
                1,
            );
        }
        Ok(())
    }

    /// `self += alpha * a * bᵀ`, the outer-product accumulation used by BPTT.
    pub fn add_matmul_nt(&mut self, alpha: T, a: &Self, b: &Self) -> Result<()> {
        if a.rows != self.rows || b.rows != self.cols || a.cols != b.cols {
            return Err(Error::dim(format!(
                "cannot accumulate {}x{} * ({}x{})ᵀ into {}x{}",
                a.rows, a.cols, b.rows, b.cols, self.rows, self.cols
            )));
        }
        if a.cols > 0 && self.rows > 0 && self.cols > 0 {
            T::gemm(
                self.rows,
                a.cols,
                self.cols,
                alpha,
                &a.data,
                a.cols,
                1,
                &b.data,
                1,
                b.cols,
                T::one(),
                &mut self.data,
                self.cols,
                1,
            );
        }
        Ok(())
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::dim(format!(
                "cannot apply {}x{} to a vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect())
    }

    /// Transposed matrix-vector product `selfᵀ x`.
    pub fn mul_vec_t(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows {
            return Err(Error::dim(format!(
                "cannot apply ({}x{})ᵀ to a vector of length {}",
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

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "{op} of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(T::one(), other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-T::one(), other)?;
        Ok(out)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|x| x * alpha)
    }

    pub fn scale_in_place(&mut self, alpha: T) {
        for x in &mut self.data {
            *x *= alpha;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "hadamard product")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a * b)
                .collect(),
        })
    }

    /// Scales column `j` by `d[j]`, i.e. `self * diag(d)`.
    pub fn scale_cols(&self, d: &[T]) -> Result<Self> {
        if d.len() != self.cols {
            return Err(Error::dim(format!(
                "diagonal of length {} for a matrix with {} columns",
                d.len(),
                self.cols
            )));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for (x, &s) in out.row_mut(i).iter_mut().zip(d) {
                *x *= s;
            }
        }
        Ok(out)
    }

    /// Adds `v[i]` to every entry of row `i`.
    pub fn add_to_rows(&mut self, v: &[T]) -> Result<()> {
        if v.len() != self.rows {
            return Err(Error::dim(format!(
                "row offsets of length {} for {} rows",
                v.len(),
                self.rows
            )));
        }
        for (i, &vi) in v.iter().enumerate() {
            for x in self.row_mut(i) {
                *x += vi;
            }
        }
        Ok(())
    }

    /// Sum across each row.
    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|i| self.row(i).iter().fold(T::zero(), |a, &b| a + b))
            .collect()
    }

    pub fn frobenius_sq(&self) -> T {
        sum_sq(&self.data)
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `‖MᵀM − I‖_F`, the departure of the columns from orthonormality.
    pub fn orthogonality_residual(&self) -> T {
        let mut gram = self.matmul_tn(self).expect("square gram");
        for i in 0..self.cols {
            gram[(i, i)] -= T::one();
        }
        gram.frobenius_norm()
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }
}

/// Sum of squares accumulated over adjacent pairs.
///
/// Pairing makes the result invariant (bitwise) under any permutation that
/// only swaps entries within an aligned pair.
pub fn sum_sq<T: Scalar>(x: &[T]) -> T {
    let mut acc = T::zero();
    let mut pairs = x.chunks_exact(2);
    for p in &mut pairs {
        acc += p[0] * p[0] + p[1] * p[1];
    }
    if let [last] = pairs.remainder() {
        acc += *last * *last;
    }
    acc
}

/// Euclidean norm of a vector.
pub fn l2_norm<T: Scalar>(x: &[T]) -> T {
    sum_sq(x).sqrt()
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
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
