use serde::{Deserialize, Serialize};

use crate::sites::Site;

/// Largest magnitude representable in the symmetric `bits`-wide range.
#[inline]
pub fn qmax(bits: u8) -> i64 {
    (1i64 << (bits - 1)) - 1
}

/// Frozen per-tensor symmetric scale. The zero point is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantScale {
    pub site: Site,
    pub bits: u8,
    /// Multiplier from real values to integer codes: `q = round(scale * x)`.
    pub scale: f64,
    pub absmax: f64,
    /// Set when the calibrated tensor was identically zero (scale forced to 1).
    pub degenerate: bool,
}

impl QuantScale {
    /// `scale = (2^(bits-1) - 1) / absmax`.
    pub fn from_absmax(site: Site, bits: u8, absmax: f64) -> Self {
        if absmax > 0.0 && absmax.is_finite() {
            Self {
                site,
                bits,
                scale: qmax(bits) as f64 / absmax,
                absmax,
                degenerate: false,
            }
        } else {
            Self {
                site,
                bits,
                scale: 1.0,
                absmax: 0.0,
                degenerate: true,
            }
        }
    }

    #[inline]
    pub fn qmax(&self) -> i64 {
        qmax(self.bits)
    }

    /// Quantization step `1 / scale`.
    #[inline]
    pub fn step(&self) -> f64 {
        1.0 / self.scale
    }

    /// Round half away from zero, then clamp to `[-qmax, qmax]`.
    #[inline]
    pub fn quantize(&self, x: f64) -> i64 {
        let q = (self.scale * x).round();
        let m = self.qmax() as f64;
        q.clamp(-m, m) as i64
    }

    #[inline]
    pub fn dequantize(&self, q: i64) -> f64 {
        q as f64 / self.scale
    }

    #[inline]
    pub fn fake_quant(&self, x: f64) -> f64 {
        self.dequantize(self.quantize(x))
    }

    pub fn quantize_slice(&self, x: &[f64]) -> Vec<i64> {
        x.iter().map(|&v| self.quantize(v)).collect()
    }

    pub fn fake_quant_in_place(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = self.fake_quant(*v));
    }
}

/// Fits a scale to the absolute maximum of `x`.
pub fn fit_scale(site: Site, x: &[f64], bits: u8) -> QuantScale {
    let absmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    QuantScale::from_absmax(site, bits, absmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sites::{ActSite, Site};
    use proptest::prelude::*;

    const SITE: Site = Site::Act(ActSite::Input);

    #[test]
    fn fit_examples() {
        assert_eq!(fit_scale(SITE, &[0.5, -1.0], 8).scale, 127.0);
        assert_eq!(fit_scale(SITE, &[4.0, -2.0], 16).scale, 32767.0 / 4.0);
        let z = fit_scale(SITE, &[0.0; 4], 8);
        assert!(z.degenerate);
        assert_eq!(z.scale, 1.0);
    }

    #[test]
    fn endpoints_and_zero() {
        let s = fit_scale(SITE, &[3.0, -0.2], 8);
        assert_eq!(s.quantize(0.0), 0);
        assert_eq!(s.quantize(3.0), 127);
        assert_eq!(s.quantize(-3.0), -127);
        assert_eq!(s.quantize(1e9), 127);
        assert_eq!(s.quantize(-1e9), -127);
    }

    #[test]
    fn rounds_half_away_from_zero() {
        let s = QuantScale::from_absmax(SITE, 8, 127.0);
        assert_eq!(s.quantize(2.5), 3);
        assert_eq!(s.quantize(-2.5), -3);
        assert_eq!(s.quantize(0.5), 1);
        assert_eq!(s.quantize(-0.49), 0);
    }

    proptest! {
        #[test]
        fn fake_quant_idempotent(absmax in 1e-3f64..1e3, frac in -1.5f64..1.5, bits in prop::sample::select(vec![8u8, 16])) {
            let s = QuantScale::from_absmax(SITE, bits, absmax);
            let once = s.fake_quant(frac * absmax);
            prop_assert_eq!(s.fake_quant(once).to_bits(), once.to_bits());
        }

        #[test]
        fn in_range_error_at_most_half_step(absmax in 1e-3f64..1e3, frac in -1.0f64..1.0) {
            let s = QuantScale::from_absmax(SITE, 16, absmax);
            let x = frac * absmax;
            prop_assert!((s.fake_quant(x) - x).abs() <= 0.5 / s.scale);
        }

        #[test]
        fn scale_invariant_mask_of_codes(absmax in 1e-2f64..1e2, frac in -1.0f64..1.0) {
            let s = QuantScale::from_absmax(SITE, 8, absmax);
            let q = s.quantize(frac * absmax);
            prop_assert!(q.abs() <= 127);
        }
    }
}
