use serde::{Deserialize, Serialize};

use crate::analysis::macs::{DensitySet, LayerDensities, MacTally};
use crate::error::{Error, Result};
use crate::s5::{CompiledModel, FrameTaps};

/// Nonzero / total counts for one activation site.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub nonzero: u64,
    pub total: u64,
}

impl Activity {
    fn add(&mut self, v: &[f64]) {
        self.nonzero += v.iter().filter(|&&x| x != 0.0).count() as u64;
        self.total += v.len() as u64;
    }

    pub fn density(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.nonzero as f64 / self.total as f64
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.density()
    }

    fn merge(&mut self, other: &Activity) {
        self.nonzero += other.nonzero;
        self.total += other.total;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerActivity {
    pub pre_ssm: Activity,
    pub hidden: Activity,
    pub pre_glu: Activity,
}

/// Running activation-density statistics over the sites that feed linear
/// operators.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityStats {
    pub input: Activity,
    pub layers: Vec<LayerActivity>,
    pub pre_head: Activity,
    pub frames: u64,
}

impl ActivityStats {
    pub fn new(depth: usize) -> Self {
        Self {
            layers: vec![LayerActivity::default(); depth],
            ..Default::default()
        }
    }

    pub fn observe(&mut self, taps: &FrameTaps) {
        self.input.add(&taps.input);
        for (acc, l) in self.layers.iter_mut().zip(&taps.layers) {
            acc.pre_ssm.add(&l.pre_ssm);
            acc.hidden.add(&l.hidden);
            acc.pre_glu.add(&l.pre_glu);
        }
        self.pre_head.add(taps.pre_head());
        self.frames += 1;
    }

    pub fn merge(&mut self, other: &ActivityStats) {
        self.input.merge(&other.input);
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.pre_ssm.merge(&b.pre_ssm);
            a.hidden.merge(&b.hidden);
            a.pre_glu.merge(&b.pre_glu);
        }
        self.pre_head.merge(&other.pre_head);
        self.frames += other.frames;
    }
}

/// Activation densities measured over recorded frames. Weight densities are
/// left at 1; combine with [`with_static_weights`].
pub fn measured_densities(taps: &[FrameTaps]) -> Result<(DensitySet, ActivityStats)> {
    let first = taps
        .first()
        .ok_or_else(|| Error::Empty("no frames to measure densities on".into()))?;
    let mut stats = ActivityStats::new(first.layers.len());
    for t in taps {
        stats.observe(t);
    }
    Ok((densities_from_stats(&stats), stats))
}

pub fn densities_from_stats(stats: &ActivityStats) -> DensitySet {
    DensitySet {
        wgt_encoder: 1.0,
        act_input: stats.input.density(),
        layers: stats
            .layers
            .iter()
            .map(|l| LayerDensities {
                act_pre_ssm: l.pre_ssm.density(),
                act_hidden: l.hidden.density(),
                act_pre_glu: l.pre_glu.density(),
                ..LayerDensities::UNIT
            })
            .collect(),
        wgt_head: 1.0,
        act_pre_head: stats.pre_head.density(),
    }
}

/// Replaces weight densities by the stored fraction of nonzero weights.
pub fn with_static_weights(model: &CompiledModel, mut d: DensitySet) -> DensitySet {
    let density = |nnz: usize, (r, c): (usize, usize)| nnz as f64 / (r * c) as f64;
    d.wgt_encoder = density(model.encoder.nnz(), model.encoder.shape());
    d.wgt_head = density(model.decoder.nnz(), model.decoder.shape());
    for (ld, l) in d.layers.iter_mut().zip(&model.layers) {
        ld.wgt_b = density(l.b.nnz(), l.b.shape());
        ld.wgt_c = density(l.c.nnz(), l.c.shape());
        ld.wgt_glu = density(l.glu.nnz(), l.glu.shape());
    }
    d
}

/// Replaces weight densities by the density of weights inside the columns
/// that were actually activated: executed matrix MACs divided by
/// `rows x active inputs`. With these, the density formulas reproduce the
/// runtime counter exactly for any weight/activation pattern.
pub fn with_event_weights(
    dims: (usize, usize, usize, usize),
    tally: &MacTally,
    stats: &ActivityStats,
    mut d: DensitySet,
) -> DensitySet {
    let (_n_in, m, n, n_out) = dims;
    let frames = tally.frames;
    let ratio = |executed: u64, rows: usize, active: u64| {
        if active == 0 {
            0.0
        } else {
            executed as f64 / (rows as f64 * active as f64)
        }
    };
    d.wgt_encoder = ratio(tally.encoder, m, stats.input.nonzero);
    d.wgt_head = ratio(tally.head, n_out, stats.pre_head.nonzero);
    for ((ld, lm), la) in d.layers.iter_mut().zip(&tally.layers).zip(&stats.layers) {
        let b_exec = lm.s5_hidden - 4 * n as u64 * frames;
        let c_exec = lm.s5_output - la.pre_ssm.nonzero;
        let g_exec = lm.glu - m as u64 * frames;
        ld.wgt_b = ratio(b_exec, 2 * n, la.pre_ssm.nonzero);
        ld.wgt_c = ratio(c_exec, m, la.hidden.nonzero);
        ld.wgt_glu = ratio(g_exec, m, la.pre_glu.nonzero);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activity_counts() {
        let mut a = Activity::default();
        a.add(&[0.0, 1.0, -2.0, 0.0]);
        assert_eq!(a.density(), 0.5);
        a.add(&[0.0; 4]);
        assert_eq!(a.density(), 0.25);
    }

    #[test]
    fn empty_taps_rejected() {
        assert!(measured_densities(&[]).is_err());
    }

    #[test]
    fn all_zero_tap_has_zero_density() {
        let frame = FrameTaps {
            input: vec![0.0; 4],
            encoder_out: vec![0.0; 2],
            layers: vec![],
            output: vec![0.0; 3],
        };
        let (d, _) = measured_densities(&[frame]).unwrap();
        assert_eq!(d.act_input, 0.0);
        assert_eq!(d.act_pre_head, 0.0);
    }
}
