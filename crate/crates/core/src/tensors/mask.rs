use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Packed boolean keep-mask over a `rows x cols` weight matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

impl Mask {
    fn word_count(len: usize) -> usize {
        len.div_ceil(64)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            words: vec![0; Self::word_count(rows * cols)],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| true)
    }

    pub fn from_fn(rows: usize, cols: usize, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if keep(r, c) {
                    mask.set_flat(r * cols + c, true);
                }
            }
        }
        mask
    }

    /// Rebuilds a mask from its packed little-endian word representation.
    pub fn from_words(rows: usize, cols: usize, words: Vec<u64>) -> Result<Self> {
        let len = rows * cols;
        if words.len() != Self::word_count(len) {
            return Err(Error::Dimension(format!(
                "mask {rows}x{cols} needs {} words, got {}",
                Self::word_count(len),
                words.len()
            )));
        }
        let tail = len % 64;
        if tail != 0 && words.last().is_some_and(|w| w >> tail != 0) {
            return Err(Error::Range("mask has bits set past its end".into()));
        }
        Ok(Self { rows, cols, words })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.get_flat(row * self.cols + col)
    }

    #[inline]
    pub fn get_flat(&self, idx: usize) -> bool {
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    #[inline]
    pub fn set_flat(&mut self, idx: usize, keep: bool) {
        let bit = 1u64 << (idx % 64);
        if keep {
            self.words[idx / 64] |= bit;
        } else {
            self.words[idx / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Fraction of kept entries.
    pub fn density(&self) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        self.count_ones() as f64 / self.len() as f64
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.density()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_and_zeros() {
        let m = Mask::ones(3, 70);
        assert_eq!(m.count_ones(), 210);
        assert_eq!(m.density(), 1.0);
        assert_eq!(Mask::zeros(3, 70).count_ones(), 0);
    }

    #[test]
    fn words_round_trip_and_tail_check() {
        let m = Mask::from_fn(5, 13, |r, c| (r + c) % 3 == 0);
        let back = Mask::from_words(5, 13, m.words().to_vec()).unwrap();
        assert_eq!(m, back);
        let mut bad = m.words().to_vec();
        bad[1] |= 1 << 63;
        assert!(Mask::from_words(5, 13, bad).is_err());
    }
}
