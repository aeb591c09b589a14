use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Batches of feature vectors are stored one sample per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("from_vec", (rows, cols), (data.len(), 1)));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dims("from_rows", (1, cols), (1, r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Tensor2) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims("add_assign", self.shape(), other.shape()));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Tensor2) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims("axpy", self.shape(), other.shape()));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += s * b);
        Ok(())
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.cols != rhs.rows {
            return Err(Error::dims("matmul", self.shape(), rhs.shape()));
        }
        let mut out = Tensor2::zeros(self.rows, rhs.cols);
        gemm(
            self.rows,
            self.cols,
            rhs.cols,
            (&self.data, self.cols as isize, 1),
            (&rhs.data, rhs.cols as isize, 1),
            &mut out.data,
            0.0,
        );
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.rows != rhs.rows {
            return Err(Error::dims("t_matmul", self.shape(), rhs.shape()));
        }
        let mut out = Tensor2::zeros(self.cols, rhs.cols);
        gemm(
            self.cols,
            self.rows,
            rhs.cols,
            (&self.data, 1, self.cols as isize),
            (&rhs.data, rhs.cols as isize, 1),
            &mut out.data,
            0.0,
        );
        Ok(out)
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.cols != rhs.cols {
            return Err(Error::dims("matmul_t", self.shape(), rhs.shape()));
        }
        let mut out = Tensor2::zeros(self.rows, rhs.rows);
        gemm(
            self.rows,
            self.cols,
            rhs.rows,
            (&self.data, self.cols as isize, 1),
            (&rhs.data, 1, rhs.cols as isize),
            &mut out.data,
            0.0,
        );
        Ok(out)
    }

    /// Accumulating variant of [`t_matmul`](Self::t_matmul): `acc += selfᵀ · rhs`.
    pub(crate) fn t_matmul_acc(&self, rhs: &Tensor2, acc: &mut Tensor2) -> Result<()> {
        if self.rows != rhs.rows || acc.shape() != (self.cols, rhs.cols) {
            return Err(Error::dims("t_matmul_acc", self.shape(), rhs.shape()));
        }
        gemm(
            self.cols,
            self.rows,
            rhs.cols,
            (&self.data, 1, self.cols as isize),
            (&rhs.data, rhs.cols as isize, 1),
            &mut acc.data,
            1.0,
        );
        Ok(())
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Joins each row of `a` with the matching row of `b`; `a`'s columns come first.
    pub fn concat_rows(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
        if a.rows != b.rows {
            return Err(Error::dims("concat_rows", a.shape(), b.shape()));
        }
        let cols = a.cols + b.cols;
        let mut data = Vec::with_capacity(a.rows * cols);
        for r in 0..a.rows {
            data.extend_from_slice(a.row(r));
            data.extend_from_slice(b.row(r));
        }
        Ok(Tensor2 {
            rows: a.rows,
            cols,
            data,
        })
    }

    /// Splits columns at `at`, the inverse of [`concat_rows`](Self::concat_rows).
    pub fn split_cols(&self, at: usize) -> Result<(Tensor2, Tensor2)> {
        if at > self.cols {
            return Err(Error::dims("split_cols", self.shape(), (self.rows, at)));
        }
        let mut left = Tensor2::zeros(self.rows, at);
        let mut right = Tensor2::zeros(self.rows, self.cols - at);
        for r in 0..self.rows {
            let row = self.row(r);
            left.row_mut(r).copy_from_slice(&row[..at]);
            right.row_mut(r).copy_from_slice(&row[at..]);
        }
        Ok((left, right))
    }

    /// Stacks rows of `a` on top of rows of `b`.
    pub fn vstack(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
        if a.cols != b.cols {
            return Err(Error::dims("vstack", a.shape(), b.shape()));
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Tensor2 {
            rows: a.rows + b.rows,
            cols: a.cols,
            data,
        })
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor2 {
        let mut out = Tensor2::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }
}

type Operand<'a> = (&'a [f64], isize, isize);

/// `c = a·b + beta·c` with arbitrary strides, `a` is m×k, `b` is k×n.
fn gemm(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose lengths match the shapes and strides
    // (checked in the public wrappers), and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
