//! Effective multiply-accumulate accounting.
//!
//! Per-component formulas (per frame, summed over depth):
//!
//! | component  | effective MACs                                        |
//! |------------|-------------------------------------------------------|
//! | encoder    | `N_in * M * d_wgt_enc * d_act_input`                  |
//! | batchnorm  | `M`                                                   |
//! | s5_hidden  | `2 M N * d_wgt_B * d_act_pre_ssm + 4 N`               |
//! | s5_output  | `2 N M * d_wgt_C * d_act_hidden + M * d_act_pre_ssm`  |
//! | glu        | `M^2 * d_wgt_glu * d_act_pre_glu + M`                 |
//! | head       | `M * N_out * d_wgt_head * d_act_pre_head`             |

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::s5::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Encoder,
    Batchnorm,
    S5Hidden,
    S5Output,
    Glu,
    Head,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Encoder => "encoder",
            Component::Batchnorm => "batchnorm",
            Component::S5Hidden => "s5_hidden",
            Component::S5Output => "s5_output",
            Component::Glu => "glu",
            Component::Head => "head",
        })
    }
}

/// Executed multiply-accumulates of one block, summed over frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerMacs {
    pub batchnorm: u64,
    pub s5_hidden: u64,
    pub s5_output: u64,
    pub glu: u64,
}

impl LayerMacs {
    pub fn merge(&mut self, other: &LayerMacs) {
        self.batchnorm += other.batchnorm;
        self.s5_hidden += other.s5_hidden;
        self.s5_output += other.s5_output;
        self.glu += other.glu;
    }

    pub fn total(&self) -> u64 {
        self.batchnorm + self.s5_hidden + self.s5_output + self.glu
    }
}

/// Runtime MAC counter filled in by the executors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacTally {
    pub encoder: u64,
    pub layers: Vec<LayerMacs>,
    pub head: u64,
    pub frames: u64,
}

impl MacTally {
    pub fn new(depth: usize) -> Self {
        Self {
            layers: vec![LayerMacs::default(); depth],
            ..Default::default()
        }
    }

    /// Adds MAC counts (not frame counts) of `other`.
    pub fn merge(&mut self, other: &MacTally) {
        self.encoder += other.encoder;
        self.head += other.head;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.merge(b);
        }
    }

    pub fn total(&self) -> u64 {
        self.encoder + self.head + self.layers.iter().map(LayerMacs::total).sum::<u64>()
    }

    /// Per-frame averages laid out like [`effective_macs`].
    pub fn per_frame(&self) -> MacProfile {
        let f = self.frames.max(1) as f64;
        let mut records = vec![MacRecord::new(Component::Encoder, None, self.encoder as f64 / f)];
        for (l, m) in self.layers.iter().enumerate() {
            records.push(MacRecord::new(Component::Batchnorm, Some(l), m.batchnorm as f64 / f));
            records.push(MacRecord::new(Component::S5Hidden, Some(l), m.s5_hidden as f64 / f));
            records.push(MacRecord::new(Component::S5Output, Some(l), m.s5_output as f64 / f));
            records.push(MacRecord::new(Component::Glu, Some(l), m.glu as f64 / f));
        }
        records.push(MacRecord::new(Component::Head, None, self.head as f64 / f));
        MacProfile::from_records(records)
    }
}

/// Weight and activation densities of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerDensities {
    pub wgt_b: f64,
    pub wgt_c: f64,
    pub wgt_glu: f64,
    pub act_pre_ssm: f64,
    pub act_hidden: f64,
    pub act_pre_glu: f64,
}

impl LayerDensities {
    pub const UNIT: LayerDensities = LayerDensities {
        wgt_b: 1.0,
        wgt_c: 1.0,
        wgt_glu: 1.0,
        act_pre_ssm: 1.0,
        act_hidden: 1.0,
        act_pre_glu: 1.0,
    };
}

/// Density inputs of the effective-MAC formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySet {
    pub wgt_encoder: f64,
    pub act_input: f64,
    pub layers: Vec<LayerDensities>,
    pub wgt_head: f64,
    pub act_pre_head: f64,
}

impl DensitySet {
    pub fn unit(depth: usize) -> Self {
        Self {
            wgt_encoder: 1.0,
            act_input: 1.0,
            layers: vec![LayerDensities::UNIT; depth],
            wgt_head: 1.0,
            act_pre_head: 1.0,
        }
    }

    /// Every density with its report name.
    pub fn named(&self) -> Vec<(String, f64)> {
        let mut v = vec![
            ("wgt_encoder".to_string(), self.wgt_encoder),
            ("act_input".to_string(), self.act_input),
            ("wgt_head".to_string(), self.wgt_head),
            ("act_pre_head".to_string(), self.act_pre_head),
        ];
        for (l, d) in self.layers.iter().enumerate() {
            v.push((format!("layer{l}.wgt_b"), d.wgt_b));
            v.push((format!("layer{l}.wgt_c"), d.wgt_c));
            v.push((format!("layer{l}.wgt_glu"), d.wgt_glu));
            v.push((format!("layer{l}.act_pre_ssm"), d.act_pre_ssm));
            v.push((format!("layer{l}.act_hidden"), d.act_hidden));
            v.push((format!("layer{l}.act_pre_glu"), d.act_pre_glu));
        }
        v
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.layers.len() != depth {
            return Err(Error::Dimension(format!(
                "densities cover {} layers, model has {depth}",
                self.layers.len()
            )));
        }
        for (name, d) in self.named() {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Range(format!("density {name} = {d} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacRecord {
    pub component: Component,
    pub layer: Option<usize>,
    pub macs: f64,
}

impl MacRecord {
    fn new(component: Component, layer: Option<usize>, macs: f64) -> Self {
        Self {
            component,
            layer,
            macs,
        }
    }
}

/// Per-component effective MACs for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacProfile {
    pub records: Vec<MacRecord>,
    pub total: f64,
}

impl MacProfile {
    fn from_records(records: Vec<MacRecord>) -> Self {
        let total = records.iter().map(|r| r.macs).sum();
        Self { records, total }
    }

    /// Sum over layers of one component kind.
    pub fn component_total(&self, component: Component) -> f64 {
        self.records
            .iter()
            .filter(|r| r.component == component)
            .map(|r| r.macs)
            .sum()
    }
}

/// Effective MACs per frame from architecture dimensions and densities.
pub fn effective_macs(spec: &ModelSpec, densities: &DensitySet) -> Result<MacProfile> {
    densities.validate(spec.depth)?;
    let n_in = spec.n_input as f64;
    let m = spec.n_model as f64;
    let n = spec.n_ssm as f64;
    let n_out = spec.n_output as f64;

    let mut records = vec![MacRecord::new(
        Component::Encoder,
        None,
        n_in * m * densities.wgt_encoder * densities.act_input,
    )];
    for (l, d) in densities.layers.iter().enumerate() {
        records.push(MacRecord::new(Component::Batchnorm, Some(l), m));
        records.push(MacRecord::new(
            Component::S5Hidden,
            Some(l),
            2.0 * m * n * d.wgt_b * d.act_pre_ssm + 4.0 * n,
        ));
        records.push(MacRecord::new(
            Component::S5Output,
            Some(l),
            2.0 * n * m * d.wgt_c * d.act_hidden + m * d.act_pre_ssm,
        ));
        records.push(MacRecord::new(
            Component::Glu,
            Some(l),
            m * m * d.wgt_glu * d.act_pre_glu + m,
        ));
    }
    records.push(MacRecord::new(
        Component::Head,
        None,
        m * n_out * densities.wgt_head * densities.act_pre_head,
    ));
    Ok(MacProfile::from_records(records))
}
