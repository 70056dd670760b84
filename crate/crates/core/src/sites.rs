//! Named tensor and activation sites.
//!
//! Every quantization scale, tap and mismatch row is keyed by a [`Site`]. The
//! textual form (`act.layer0.state`, `wgt.encoder`, ...) is what appears in
//! CSV reports and checkpoint manifests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Activation sites inside one recurrent block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerSite {
    /// Normalized block input feeding the input projection and the skip term.
    PreSsm,
    /// Complex recurrent state (both planes share one scale).
    State,
    /// Read-out operand `[relu?(Re x), Im x]`; carries the state scale.
    Hidden,
    /// Linear read-out `Re(C x) + D u`.
    Readout,
    /// `tau(readout)`; carries the read-out scale.
    PreGlu,
    /// GLU gate pre-activation `W tau(y)`.
    Gate,
    /// Sigmoid of the gate; fixed range [0, 1].
    Sigmoid,
    GluOut,
    Residual,
}

impl LayerSite {
    pub const ALL: [LayerSite; 9] = [
        LayerSite::PreSsm,
        LayerSite::State,
        LayerSite::Hidden,
        LayerSite::Readout,
        LayerSite::PreGlu,
        LayerSite::Gate,
        LayerSite::Sigmoid,
        LayerSite::GluOut,
        LayerSite::Residual,
    ];

    /// Sites that own a scale of their own (the others alias one of these).
    pub const SCALED: [LayerSite; 7] = [
        LayerSite::PreSsm,
        LayerSite::State,
        LayerSite::Readout,
        LayerSite::Gate,
        LayerSite::Sigmoid,
        LayerSite::GluOut,
        LayerSite::Residual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerSite::PreSsm => "pre_ssm",
            LayerSite::State => "state",
            LayerSite::Hidden => "hidden",
            LayerSite::Readout => "readout",
            LayerSite::PreGlu => "pre_glu",
            LayerSite::Gate => "gate",
            LayerSite::Sigmoid => "sigmoid",
            LayerSite::GluOut => "glu_out",
            LayerSite::Residual => "residual",
        }
    }

    /// The site whose scale quantizes this one.
    pub fn scale_owner(self) -> LayerSite {
        match self {
            LayerSite::Hidden => LayerSite::State,
            LayerSite::PreGlu => LayerSite::Readout,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActSite {
    Input,
    EncoderOut,
    Layer(usize, LayerSite),
    Output,
}

impl ActSite {
    pub fn scale_owner(self) -> ActSite {
        match self {
            ActSite::Layer(l, s) => ActSite::Layer(l, s.scale_owner()),
            other => other,
        }
    }

    /// Depth index used to order reports: input first, output last.
    pub fn depth_key(self) -> (usize, usize) {
        match self {
            ActSite::Input => (0, 0),
            ActSite::EncoderOut => (0, 1),
            ActSite::Layer(l, s) => (l + 1, s as usize),
            ActSite::Output => (usize::MAX, 0),
        }
    }

    /// All activation sites of a model of the given depth, in depth order.
    pub fn all(depth: usize) -> Vec<ActSite> {
        let mut v = vec![ActSite::Input, ActSite::EncoderOut];
        for l in 0..depth {
            v.extend(LayerSite::ALL.iter().map(|&s| ActSite::Layer(l, s)));
        }
        v.push(ActSite::Output);
        v
    }

    /// Activation sites that own a scale.
    pub fn scaled(depth: usize) -> Vec<ActSite> {
        let mut v = vec![ActSite::Input, ActSite::EncoderOut];
        for l in 0..depth {
            v.extend(LayerSite::SCALED.iter().map(|&s| ActSite::Layer(l, s)));
        }
        v.push(ActSite::Output);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerWeight {
    /// Diagonal recurrence, both planes.
    Lambda,
    /// Input projection, both planes.
    B,
    /// Output projection, both planes.
    C,
    /// Skip diagonal.
    D,
    Glu,
    NormScale,
}

impl LayerWeight {
    pub const ALL: [LayerWeight; 6] = [
        LayerWeight::Lambda,
        LayerWeight::B,
        LayerWeight::C,
        LayerWeight::D,
        LayerWeight::Glu,
        LayerWeight::NormScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerWeight::Lambda => "lambda",
            LayerWeight::B => "b",
            LayerWeight::C => "c",
            LayerWeight::D => "d",
            LayerWeight::Glu => "glu",
            LayerWeight::NormScale => "norm_scale",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeightSite {
    Encoder,
    Layer(usize, LayerWeight),
    Decoder,
}

impl WeightSite {
    pub fn all(depth: usize) -> Vec<WeightSite> {
        let mut v = vec![WeightSite::Encoder];
        for l in 0..depth {
            v.extend(LayerWeight::ALL.iter().map(|&w| WeightSite::Layer(l, w)));
        }
        v.push(WeightSite::Decoder);
        v
    }
}

/// Serialized as its textual name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    Weight(WeightSite),
    Act(ActSite),
}

impl Site {
    /// Every site that carries a quantization scale for a model of this depth.
    pub fn enumerate(depth: usize) -> Vec<Site> {
        WeightSite::all(depth)
            .into_iter()
            .map(Site::Weight)
            .chain(ActSite::scaled(depth).into_iter().map(Site::Act))
            .collect()
    }
}

impl fmt::Display for ActSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActSite::Input => f.write_str("act.input"),
            ActSite::EncoderOut => f.write_str("act.encoder_out"),
            ActSite::Layer(l, s) => write!(f, "act.layer{l}.{}", s.name()),
            ActSite::Output => f.write_str("act.output"),
        }
    }
}

impl fmt::Display for WeightSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSite::Encoder => f.write_str("wgt.encoder"),
            WeightSite::Layer(l, w) => write!(f, "wgt.layer{l}.{}", w.name()),
            WeightSite::Decoder => f.write_str("wgt.decoder"),
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Weight(w) => w.fmt(f),
            Site::Act(a) => a.fmt(f),
        }
    }
}

impl Serialize for Site {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn parse_layer(s: &str) -> Option<(usize, &str)> {
    let rest = s.strip_prefix("layer")?;
    let (idx, tail) = rest.split_once('.')?;
    Some((idx.parse().ok()?, tail))
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::Range(format!("unknown site `{s}`"));
        if let Some(rest) = s.strip_prefix("act.") {
            let site = match rest {
                "input" => ActSite::Input,
                "encoder_out" => ActSite::EncoderOut,
                "output" => ActSite::Output,
                other => {
                    let (l, name) = parse_layer(other).ok_or_else(bad)?;
                    let ls = LayerSite::ALL
                        .into_iter()
                        .find(|x| x.name() == name)
                        .ok_or_else(bad)?;
                    ActSite::Layer(l, ls)
                }
            };
            return Ok(Site::Act(site));
        }
        if let Some(rest) = s.strip_prefix("wgt.") {
            let site = match rest {
                "encoder" => WeightSite::Encoder,
                "decoder" => WeightSite::Decoder,
                other => {
                    let (l, name) = parse_layer(other).ok_or_else(bad)?;
                    let w = LayerWeight::ALL
                        .into_iter()
                        .find(|x| x.name() == name)
                        .ok_or_else(bad)?;
                    WeightSite::Layer(l, w)
                }
            };
            return Ok(Site::Weight(site));
        }
        Err(bad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_back() {
        for site in Site::enumerate(3) {
            assert_eq!(site.to_string().parse::<Site>().unwrap(), site);
        }
        for site in ActSite::all(2) {
            assert_eq!(Site::Act(site).to_string().parse::<Site>().unwrap(), Site::Act(site));
        }
        assert!("act.layerx.state".parse::<Site>().is_err());
        assert!("wgt.layer0.nope".parse::<Site>().is_err());
    }

    #[test]
    fn site_counts() {
        assert_eq!(Site::enumerate(3).len(), 2 + 18 + 2 + 21 + 1);
    }
}
