//! Dense (row-major) and CSR-sparse matrix storage plus borrowed row views.

use crate::error::{FalkonError, Result};
use crate::real::Real;

/// Row-major dense matrix in working precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(FalkonError::DimensionMismatch(format!(
                "dense matrix {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![T::zero(); rows * cols],
        }
    }

    /// Builds a matrix from explicit rows; rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(FalkonError::DimensionMismatch(
                    "ragged rows in dense matrix".into(),
                ));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = T::one();
        }
        m
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.values[i * self.cols + j] = v;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn view(&self) -> DenseRef<'_, T> {
        DenseRef {
            rows: self.rows,
            cols: self.cols,
            values: &self.values,
        }
    }

    /// Borrowed view of a contiguous row range.
    pub fn row_range(&self, start: usize, end: usize) -> DenseRef<'_, T> {
        DenseRef {
            rows: end - start,
            cols: self.cols,
            values: &self.values[start * self.cols..end * self.cols],
        }
    }
}

/// Borrowed dense row block.
#[derive(Debug, Clone, Copy)]
pub struct DenseRef<'a, T> {
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [T],
}

impl<'a, T: Real> DenseRef<'a, T> {
    #[inline]
    pub fn row(&self, i: usize) -> &'a [T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// CSR sparse matrix with strictly increasing column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return Err(FalkonError::DimensionMismatch(
                "row_offsets must have length rows+1 and start at 0".into(),
            ));
        }
        if *row_offsets.last().unwrap() != values.len() || col_indices.len() != values.len() {
            return Err(FalkonError::DimensionMismatch(
                "col_indices/values length must match final row offset".into(),
            ));
        }
        for r in 0..rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(FalkonError::DimensionMismatch(
                    "row_offsets must be monotone".into(),
                ));
            }
            let idx = &col_indices[lo..hi];
            for w in idx.windows(2) {
                if w[0] >= w[1] {
                    return Err(FalkonError::DimensionMismatch(
                        "column indices must be strictly increasing within a row".into(),
                    ));
                }
            }
            if let Some(&last) = idx.last() {
                if last >= cols {
                    return Err(FalkonError::DimensionMismatch(format!(
                        "column index {last} out of bounds for {cols} columns"
                    )));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Converts a dense matrix, dropping exact zeros.
    pub fn from_dense(dense: &DenseMatrix<T>) -> Self {
        let mut row_offsets = Vec::with_capacity(dense.rows() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..dense.rows() {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != T::zero() {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(values.len());
        }
        Self {
            rows: dense.rows(),
            cols: dense.cols(),
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                out.set(i, j, v);
            }
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn view(&self) -> SparseRef<'_, T> {
        SparseRef {
            rows: self.rows,
            cols: self.cols,
            row_offsets: &self.row_offsets,
            col_indices: &self.col_indices,
            values: &self.values,
        }
    }

    /// Borrowed view of a contiguous row range.
    pub fn row_range(&self, start: usize, end: usize) -> SparseRef<'_, T> {
        SparseRef {
            rows: end - start,
            cols: self.cols,
            row_offsets: &self.row_offsets[start..=end],
            col_indices: &self.col_indices,
            values: &self.values,
        }
    }

    /// Copies the given rows into a new CSR matrix (used for inducing sets).
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let mut row_offsets = Vec::with_capacity(indices.len() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for &i in indices {
            let (idx, vals) = self.row(i);
            col_indices.extend_from_slice(idx);
            values.extend_from_slice(vals);
            row_offsets.push(values.len());
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            row_offsets,
            col_indices,
            values,
        }
    }
}

/// Borrowed CSR row block. `row_offsets` is re-based, so offsets keep their
/// absolute values into the shared `values` buffer.
#[derive(Debug, Clone, Copy)]
pub struct SparseRef<'a, T> {
    pub rows: usize,
    pub cols: usize,
    pub row_offsets: &'a [usize],
    pub col_indices: &'a [usize],
    pub values: &'a [T],
}

impl<'a, T: Real> SparseRef<'a, T> {
    #[inline]
    pub fn row(&self, i: usize) -> (&'a [usize], &'a [T]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn range_nnz(&self) -> usize {
        self.row_offsets[self.rows] - self.row_offsets[0]
    }
}

/// Either storage format, used wherever the solver accepts both.
#[derive(Debug, Clone)]
pub enum Matrix<T> {
    Dense(DenseMatrix<T>),
    Sparse(SparseMatrix<T>),
}

impl<T: Real> Matrix<T> {
    pub fn rows(&self) -> usize {
        match self {
            Matrix::Dense(m) => m.rows(),
            Matrix::Sparse(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Matrix::Dense(m) => m.cols(),
            Matrix::Sparse(m) => m.cols(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Matrix::Dense(_))
    }

    pub fn view(&self) -> RowsRef<'_, T> {
        match self {
            Matrix::Dense(m) => RowsRef::Dense(m.view()),
            Matrix::Sparse(m) => RowsRef::Sparse(m.view()),
        }
    }

    pub fn row_range(&self, start: usize, end: usize) -> RowsRef<'_, T> {
        match self {
            Matrix::Dense(m) => RowsRef::Dense(m.row_range(start, end)),
            Matrix::Sparse(m) => RowsRef::Sparse(m.row_range(start, end)),
        }
    }

    /// Copies the selected rows into a matrix of the same storage format.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix<T> {
        match self {
            Matrix::Dense(m) => {
                let mut values = Vec::with_capacity(indices.len() * m.cols());
                for &i in indices {
                    values.extend_from_slice(m.row(i));
                }
                Matrix::Dense(DenseMatrix {
                    rows: indices.len(),
                    cols: m.cols(),
                    values,
                })
            }
            Matrix::Sparse(m) => Matrix::Sparse(m.gather_rows(indices)),
        }
    }
}

/// Borrowed row block over either storage format.
#[derive(Debug, Clone, Copy)]
pub enum RowsRef<'a, T> {
    Dense(DenseRef<'a, T>),
    Sparse(SparseRef<'a, T>),
}

impl<'a, T: Real> RowsRef<'a, T> {
    pub fn rows(&self) -> usize {
        match self {
            RowsRef::Dense(v) => v.rows,
            RowsRef::Sparse(v) => v.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            RowsRef::Dense(v) => v.cols,
            RowsRef::Sparse(v) => v.cols,
        }
    }

    /// Number of stored scalars in the block (nnz for sparse).
    pub fn stored_elements(&self) -> usize {
        match self {
            RowsRef::Dense(v) => v.values.len(),
            RowsRef::Sparse(v) => v.range_nnz(),
        }
    }
}
