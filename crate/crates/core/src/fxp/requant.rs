use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized fixed-point multiplier: `value * m * 2^-shift` with
/// `m` in `[2^30, 2^31)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requantizer {
    pub multiplier: u32,
    pub shift: i32,
}

pub const MIN_SHIFT: i32 = -30;
pub const MAX_SHIFT: i32 = 100;

impl Requantizer {
    /// Closest normalized multiplier to `ratio` (relative error <= 2^-31).
    pub fn from_ratio(ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(Error::Range(format!("requantization ratio {ratio} is not positive")));
        }
        let mut e = ratio.log2().floor() as i32;
        let mut f = ratio * 2f64.powi(-e);
        // log2 may land one off near powers of two.
        while f >= 2.0 {
            f /= 2.0;
            e += 1;
        }
        while f < 1.0 {
            f *= 2.0;
            e -= 1;
        }
        let mut m = (f * (1u64 << 30) as f64).round() as u64;
        if m == 1 << 31 {
            m = 1 << 30;
            e += 1;
        }
        let shift = 30 - e;
        if !(MIN_SHIFT..=MAX_SHIFT).contains(&shift) {
            return Err(Error::Range(format!(
                "requantization ratio {ratio:e} outside the supported range"
            )));
        }
        Ok(Self {
            multiplier: m as u32,
            shift,
        })
    }

    /// The real ratio this requantizer implements.
    pub fn ratio(&self) -> f64 {
        self.multiplier as f64 * 2f64.powi(-self.shift)
    }

    #[inline]
    fn product(&self, acc: i64) -> i128 {
        acc as i128 * self.multiplier as i128
    }

    /// `round(acc * m * 2^-shift)`, half away from zero.
    #[inline]
    pub fn apply(&self, acc: i64) -> i128 {
        round_shift(self.product(acc), self.shift)
    }
}

/// `round(p * 2^-r)` with ties away from zero; left shift when `r <= 0`.
#[inline]
pub fn round_shift(p: i128, r: i32) -> i128 {
    if r <= 0 {
        return p << (-r);
    }
    let half = 1i128 << (r - 1);
    let mag = (p.unsigned_abs() as i128 + half) >> r;
    if p < 0 {
        -mag
    } else {
        mag
    }
}

/// Sum of two requantized accumulators with a single final rounding.
#[inline]
pub fn requant_pair(a: i64, ra: Requantizer, b: i64, rb: Requantizer) -> i128 {
    let r = ra.shift.max(rb.shift);
    let pa = ra.product(a) << (r - ra.shift);
    let pb = rb.product(b) << (r - rb.shift);
    round_shift(pa + pb, r)
}

/// Largest shift difference allowed in [`requant_pair`] (keeps the aligned
/// products inside 128 bits for 32-bit accumulators).
pub const MAX_PAIR_SPREAD: i32 = 62;

pub fn check_pair(ra: Requantizer, rb: Requantizer) -> Result<()> {
    if (ra.shift - rb.shift).abs() > MAX_PAIR_SPREAD {
        return Err(Error::Range(format!(
            "requantizer pair shifts {} and {} are too far apart",
            ra.shift, rb.shift
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_and_accurate() {
        for ratio in [1.0, 0.5, 3.0, 1e-7, 123456.789, 2f64.powi(-40), 0.999_999_999] {
            let q = Requantizer::from_ratio(ratio).unwrap();
            assert!((1u32 << 30..1u32 << 31).contains(&q.multiplier), "{ratio}");
            assert!(((q.ratio() - ratio) / ratio).abs() <= 2f64.powi(-31), "{ratio}");
        }
        assert!(Requantizer::from_ratio(0.0).is_err());
        assert!(Requantizer::from_ratio(f64::NAN).is_err());
    }

    #[test]
    fn rounding_half_away_from_zero() {
        assert_eq!(round_shift(3, 1), 2);
        assert_eq!(round_shift(-3, 1), -2);
        assert_eq!(round_shift(5, 2), 1);
        assert_eq!(round_shift(6, 2), 2);
        assert_eq!(round_shift(-6, 2), -2);
        assert_eq!(round_shift(7, 0), 7);
        assert_eq!(round_shift(7, -2), 28);
    }

    #[test]
    fn unit_ratio_is_identity() {
        let q = Requantizer::from_ratio(1.0).unwrap();
        for v in [-70000i64, -1, 0, 1, 12345, i32::MAX as i64] {
            assert_eq!(q.apply(v), v as i128);
        }
    }

    #[test]
    fn pair_matches_single_when_second_term_zero() {
        let a = Requantizer::from_ratio(0.37).unwrap();
        let b = Requantizer::from_ratio(1e-5).unwrap();
        for v in [-100000i64, -7, 0, 9, 77777] {
            assert_eq!(requant_pair(v, a, 0, b), a.apply(v));
        }
    }
}
