use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::Mask;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Copy + Default> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![T::default(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
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
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.values[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn map<U: Copy + Default>(&self, f: impl FnMut(T) -> U) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().copied().map(f).collect(),
        }
    }

    /// Zeroes every entry whose mask bit is clear.
    pub fn mask_apply(&self, mask: &Mask) -> Result<Self> {
        if mask.shape() != self.shape() {
            return Err(Error::Dimension(format!(
                "mask {:?} does not match matrix {:?}",
                mask.shape(),
                self.shape()
            )));
        }
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask.get_flat(i) { v } else { T::default() })
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            values,
        })
    }
}

impl DenseMatrix<f32> {
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn abs_max(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

impl<T: crate::tensors::FloatWeight + Default> DenseMatrix<T> {
    /// Plain dense product in f64, ascending column order.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: matrix has {} columns, vector has {}",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .map(|(&w, &xv)| w.into() * xv)
                    .sum()
            })
            .collect())
    }
}

impl<T: Copy + Default + Into<i64>> DenseMatrix<T> {
    /// Exact integer dense product.
    pub fn matvec_int<X: Copy + Into<i64>>(&self, x: &[X]) -> Result<Vec<i64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: matrix has {} columns, vector has {}",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .map(|(&w, &xv)| w.into() * xv.into())
                    .sum()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_apply_identity_and_annihilation() {
        let w = DenseMatrix::from_vec(2, 3, vec![1.0f32, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        assert_eq!(w.mask_apply(&Mask::ones(2, 3)).unwrap(), w);
        let z = w.mask_apply(&Mask::zeros(2, 3)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_apply_diagonal() {
        let w = DenseMatrix::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let m = Mask::from_fn(2, 2, |r, c| r == c);
        assert_eq!(w.mask_apply(&m).unwrap().values(), &[1.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn mask_apply_shape_mismatch() {
        let w = DenseMatrix::<f32>::zeros(2, 2);
        assert!(matches!(
            w.mask_apply(&Mask::ones(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(DenseMatrix::from_vec(2, 2, vec![0i8; 3]).is_err());
    }
}
