//! Dense, sparse (CSR) and complex tensor primitives.
//!
//! Float weights are stored as `f32`; activations are carried as `f64` so that
//! the float reference path and the fake-quant simulation accumulate without
//! reassociation noise. Integer weights are `i8`/`i16` with exact wide
//! accumulation.

mod dense;
mod mask;
mod sparse;

pub use dense::DenseMatrix;
pub use mask::Mask;
pub use sparse::{FloatWeight, SparseMatrix, Spmv};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complex vector stored as split real and imaginary planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::Dimension(format!(
                "complex planes differ: {} vs {}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .sum::<f64>()
            .sqrt()
    }

    pub fn reset(&mut self) {
        self.re.iter_mut().for_each(|v| *v = 0.0);
        self.im.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[inline]
pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}
