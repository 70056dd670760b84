use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LUT_ENTRIES: usize = 1024;
/// Fractional bits kept in the table entries.
pub const LUT_FRAC_BITS: u32 = 8;
/// Inputs beyond this magnitude (in real units) are treated as saturated;
/// `sigmoid(16)` is within 2^-23 of 1.
pub const LUT_DOMAIN: f64 = 16.0;

/// Piecewise-linear integer sigmoid.
///
/// Entries sample `s_out * sigmoid(x)` on an even grid over the input codes
/// `[-q_lim, q_lim]`; `q_lim` covers the whole input range or `LUT_DOMAIN`,
/// whichever is smaller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigmoidLut {
    pub q_lim: i32,
    pub entries: Vec<i32>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SigmoidLut {
    /// `in_scale`/`in_qmax` describe the gate code grid, `out_scale` the
    /// sigmoid output grid.
    pub fn build(in_scale: f64, in_qmax: i64, out_scale: f64) -> Result<Self> {
        if !(in_scale > 0.0 && out_scale > 0.0) {
            return Err(Error::Range("sigmoid LUT needs positive scales".into()));
        }
        let q_lim = ((LUT_DOMAIN * in_scale).ceil() as i64).clamp(1, in_qmax) as i32;
        let span = 2.0 * q_lim as f64;
        let last = (LUT_ENTRIES - 1) as f64;
        let entries = (0..LUT_ENTRIES)
            .map(|i| {
                let q = -(q_lim as f64) + span * i as f64 / last;
                let v = out_scale * sigmoid(q / in_scale) * (1u32 << LUT_FRAC_BITS) as f64;
                v.round() as i32
            })
            .collect();
        Ok(Self { q_lim, entries })
    }

    /// Integer-only evaluation.
    pub fn eval(&self, q: i32) -> i32 {
        let lim = self.q_lim as i64;
        let q = (q as i64).clamp(-lim, lim);
        let den = 2 * lim;
        let num = (q + lim) * (LUT_ENTRIES as i64 - 1);
        let idx = (num / den) as usize;
        let frac = num % den;
        let lo = self.entries[idx] as i64;
        let hi = self.entries[(idx + 1).min(LUT_ENTRIES - 1)] as i64;
        let fine = lo * den + (hi - lo) * frac;
        // Divide by den * 2^frac_bits with rounding half away from zero.
        let scaled = fine as i128;
        let d = den as i128;
        let q = (scaled.abs() + (d << LUT_FRAC_BITS) / 2) / (d << LUT_FRAC_BITS);
        (if scaled < 0 { -q } else { q }) as i32
    }

    /// Table size in bytes (32-bit entries).
    pub fn bytes(&self) -> usize {
        self.entries.len() * 4
    }
}
