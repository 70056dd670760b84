use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::DenseMatrix;

/// Compressed sparse row matrix.
///
/// `row_offsets` has `rows + 1` entries, starts at 0 and ends at `nnz`.
/// Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    row_offsets: Vec<u32>,
    col_indices: Vec<u32>,
    values: Vec<T>,
}

/// Output of an event-driven product together with the number of
/// multiply-accumulates that were actually executed.
#[derive(Debug, Clone, PartialEq)]
pub struct Spmv<A> {
    pub out: Vec<A>,
    pub macs: u64,
}

impl<T: Copy + Default + PartialEq> SparseMatrix<T> {
    pub fn from_parts(
        rows: usize,
        cols: usize,
        row_offsets: Vec<u32>,
        col_indices: Vec<u32>,
        values: Vec<T>,
    ) -> Result<Self> {
        let m = Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    /// Compresses a dense matrix, dropping entries equal to zero.
    pub fn from_dense(dense: &DenseMatrix<T>) -> Self {
        let zero = T::default();
        let mut row_offsets = Vec::with_capacity(dense.rows() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..dense.rows() {
            for (c, &v) in dense.row(r).iter().enumerate() {
                if v != zero {
                    col_indices.push(c as u32);
                    values.push(v);
                }
            }
            row_offsets.push(values.len() as u32);
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
        let mut dense = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_range(r) {
                dense.set(r, self.col_indices[k] as usize, self.values[k]);
            }
        }
        dense
    }

    /// Checks every structural invariant of the CSR layout.
    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.len() != self.rows + 1 {
            return Err(Error::Dimension(format!(
                "row_offsets has {} entries for {} rows",
                self.row_offsets.len(),
                self.rows
            )));
        }
        if self.row_offsets[0] != 0 {
            return Err(Error::Range("row_offsets[0] must be 0".into()));
        }
        if self.col_indices.len() != self.values.len() {
            return Err(Error::Dimension(
                "col_indices and values differ in length".into(),
            ));
        }
        if *self.row_offsets.last().unwrap() as usize != self.values.len() {
            return Err(Error::Range("last row offset must equal nnz".into()));
        }
        for r in 0..self.rows {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            if hi < lo {
                return Err(Error::Range(format!("row_offsets decrease at row {r}")));
            }
            let cols = &self.col_indices[lo as usize..hi as usize];
            for (i, &c) in cols.iter().enumerate() {
                if c as usize >= self.cols {
                    return Err(Error::Range(format!(
                        "column {c} out of bounds in row {r}"
                    )));
                }
                if i > 0 && cols[i - 1] >= c {
                    return Err(Error::Range(format!(
                        "column indices not strictly increasing in row {r}"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl<T> SparseMatrix<T> {
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
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn density(&self) -> f64 {
        if self.rows * self.cols == 0 {
            return 1.0;
        }
        self.nnz() as f64 / (self.rows * self.cols) as f64
    }

    pub fn row_offsets(&self) -> &[u32] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_offsets[r] as usize..self.row_offsets[r + 1] as usize
    }

    /// Number of stored entries in each column.
    pub fn column_nnz(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cols];
        for &c in &self.col_indices {
            counts[c as usize] += 1;
        }
        counts
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.cols {
            return Err(Error::Dimension(format!(
                "spmv: matrix has {} columns, vector has {len}",
                self.cols
            )));
        }
        Ok(())
    }
}

/// Float weight element usable in the event-driven float product.
pub trait FloatWeight: Copy + Into<f64> {}
impl FloatWeight for f32 {}
impl FloatWeight for f64 {}

impl<T: FloatWeight> SparseMatrix<T> {
    /// Event-driven product: stored entries whose input activation is exactly
    /// zero are skipped and not counted. Accumulation runs in ascending column
    /// order within each row.
    pub fn spmv(&self, x: &[f64]) -> Result<Spmv<f64>> {
        self.check_len(x.len())?;
        let mut macs = 0u64;
        let out = (0..self.rows)
            .map(|r| {
                let mut acc = 0.0f64;
                for k in self.row_range(r) {
                    let xv = x[self.col_indices[k] as usize];
                    if xv != 0.0 {
                        acc += self.values[k].into() * xv;
                        macs += 1;
                    }
                }
                acc
            })
            .collect();
        Ok(Spmv { out, macs })
    }
}

impl<T: Copy + Into<i64>> SparseMatrix<T> {
    /// Integer event-driven product. The accumulator is exact; narrowing to
    /// the 32-bit accumulator width is left to the caller's overflow policy.
    pub fn spmv_int<X: Copy + Into<i64>>(&self, x: &[X]) -> Result<Spmv<i64>> {
        self.check_len(x.len())?;
        let mut macs = 0u64;
        let out = (0..self.rows)
            .map(|r| {
                let mut acc = 0i64;
                for k in self.row_range(r) {
                    let xv: i64 = x[self.col_indices[k] as usize].into();
                    if xv != 0 {
                        acc += self.values[k].into() * xv;
                        macs += 1;
                    }
                }
                acc
            })
            .collect();
        Ok(Spmv { out, macs })
    }
}
