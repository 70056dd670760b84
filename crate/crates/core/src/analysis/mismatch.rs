use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::FxpFrameTaps;
use crate::quant::ScaleSet;
use crate::s5::FrameTaps;
use crate::sites::ActSite;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchRow {
    pub site: ActSite,
    /// Mean absolute error over all elements.
    pub mae: f64,
    /// Mean relative error over elements whose reference is nonzero.
    pub mre: f64,
    pub count: u64,
    pub nonzero: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub rows: Vec<MismatchRow>,
}

impl MismatchReport {
    pub fn row(&self, site: ActSite) -> Option<&MismatchRow> {
        self.rows.iter().find(|r| r.site == site)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let e = crate::compressor::csv_err;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "site", "mae", "mre", "count", "nonzero_reference"])
            .map_err(e)?;
        for r in &self.rows {
            let layer = match r.site {
                ActSite::Layer(l, _) => l.to_string(),
                _ => String::new(),
            };
            w.write_record([
                layer,
                r.site.to_string(),
                format!("{:e}", r.mae),
                format!("{:e}", r.mre),
                r.count.to_string(),
                r.nonzero.to_string(),
            ])
            .map_err(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-site MAE/MRE of `other` against `reference`, ordered by depth. Every
/// instrumented site appears exactly once.
pub fn compare_taps(reference: &[FrameTaps], other: &[FrameTaps]) -> Result<MismatchReport> {
    if reference.len() != other.len() {
        return Err(Error::Dimension(format!(
            "{} reference frames vs {} compared frames",
            reference.len(),
            other.len()
        )));
    }
    let depth = reference.first().map_or(0, |f| f.layers.len());
    let mut sites = ActSite::all(depth);
    sites.sort_by_key(|s| s.depth_key());
    let mut rows = Vec::with_capacity(sites.len());
    for site in sites {
        let (mut abs, mut rel) = (Compensated::default(), Compensated::default());
        let (mut count, mut nonzero) = (0u64, 0u64);
        for (r, o) in reference.iter().zip(other) {
            if r.layers.len() != depth || o.layers.len() != depth {
                return Err(Error::Dimension("frames differ in depth".into()));
            }
            let (a, b) = (r.site(site), o.site(site));
            if a.len() != b.len() {
                return Err(Error::Dimension(format!("site {site} differs in length")));
            }
            for (x, y) in a.iter().zip(&b) {
                let d = (x - y).abs();
                abs.add(d);
                count += 1;
                if *x != 0.0 {
                    rel.add(d / x.abs());
                    nonzero += 1;
                }
            }
        }
        rows.push(MismatchRow {
            site,
            mae: if count > 0 { abs.value() / count as f64 } else { 0.0 },
            mre: if nonzero > 0 { rel.value() / nonzero as f64 } else { 0.0 },
            count,
            nonzero,
        });
    }
    Ok(MismatchReport { rows })
}

/// Integer taps are dequantized with `scales` before comparison.
pub fn mismatch_report(
    float_taps: &[FrameTaps],
    fxp_taps: &[FxpFrameTaps],
    scales: &ScaleSet,
) -> Result<MismatchReport> {
    let deq = fxp_taps
        .iter()
        .map(|t| t.dequantize(scales))
        .collect::<Result<Vec<_>>>()?;
    compare_taps(float_taps, &deq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = Compensated::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn identical_taps_have_zero_error() {
        let f = FrameTaps {
            input: vec![1.0, 0.0],
            encoder_out: vec![2.0],
            layers: vec![],
            output: vec![-3.0],
        };
        let r = compare_taps(&[f.clone()], &[f]).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert!(r.rows.iter().all(|x| x.mae == 0.0 && x.mre == 0.0));
        assert_eq!(r.row(ActSite::Input).unwrap().nonzero, 1);
    }
}
