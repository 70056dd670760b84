//! Symmetric absmax quantization, static calibration and the fake-quant
//! simulation that defines what the integer runtime must reproduce.

mod scale;

pub use scale::{fit_scale, qmax, QuantScale};

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::SigmoidLut;
use crate::s5::{
    ActivationHook, BiasSite, CompiledModel, Execution, FrameTaps, NoHook, S5Model,
    WeightTransform,
};
use crate::sites::{ActSite, LayerSite, LayerWeight, Site, WeightSite};

/// Bit width of the bias vectors (norm shift, decoder bias).
pub const BIAS_BITS: u8 = 32;

/// Bit width per scale-owning site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantRecipe {
    pub bits: BTreeMap<Site, u8>,
}

impl QuantRecipe {
    /// 8-bit weights, 16-bit recurrent diagonal, 16-bit activations.
    pub fn w8a16(depth: usize) -> Self {
        let bits = Site::enumerate(depth)
            .into_iter()
            .map(|site| {
                let b = match site {
                    Site::Weight(WeightSite::Layer(_, LayerWeight::Lambda)) => 16,
                    Site::Weight(_) => 8,
                    Site::Act(_) => 16,
                };
                (site, b)
            })
            .collect();
        Self { bits }
    }

    /// Every declared site of the model has exactly one supported width.
    pub fn validate(&self, depth: usize) -> Result<()> {
        let expected = Site::enumerate(depth);
        for site in &expected {
            match self.bits.get(site) {
                None => return Err(Error::MissingScale(site.to_string())),
                Some(8 | 16) => {}
                Some(b) => {
                    return Err(Error::Range(format!("{site}: unsupported width {b}")));
                }
            }
        }
        if self.bits.len() != expected.len() {
            let extra = self.bits.keys().find(|s| !expected.contains(s)).unwrap();
            return Err(Error::Range(format!("recipe names unknown site {extra}")));
        }
        Ok(())
    }

    pub fn get(&self, site: Site) -> Result<u8> {
        self.bits
            .get(&site)
            .copied()
            .ok_or_else(|| Error::MissingScale(site.to_string()))
    }
}

/// Frozen scales of every site, keyed by site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<QuantScale>", into = "Vec<QuantScale>")]
pub struct ScaleSet {
    scales: BTreeMap<Site, QuantScale>,
}

impl From<Vec<QuantScale>> for ScaleSet {
    fn from(v: Vec<QuantScale>) -> Self {
        Self {
            scales: v.into_iter().map(|s| (s.site, s)).collect(),
        }
    }
}

impl From<ScaleSet> for Vec<QuantScale> {
    fn from(s: ScaleSet) -> Self {
        s.scales.into_values().collect()
    }
}

impl ScaleSet {
    pub fn new(scales: impl IntoIterator<Item = QuantScale>) -> Self {
        scales.into_iter().collect::<Vec<_>>().into()
    }

    pub fn get(&self, site: Site) -> Result<&QuantScale> {
        self.scales
            .get(&site)
            .ok_or_else(|| Error::MissingScale(site.to_string()))
    }

    /// Scale of an activation site, resolving aliases to their owner.
    pub fn act(&self, site: ActSite) -> Result<&QuantScale> {
        self.get(Site::Act(site.scale_owner()))
    }

    pub fn weight(&self, site: WeightSite) -> Result<&QuantScale> {
        self.get(Site::Weight(site))
    }

    pub fn insert(&mut self, scale: QuantScale) {
        self.scales.insert(scale.site, scale);
    }

    pub fn iter(&self) -> impl Iterator<Item = &QuantScale> {
        self.scales.values()
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Fails on the first site of a depth-`depth` model without a scale.
    pub fn check_complete(&self, depth: usize) -> Result<()> {
        for site in Site::enumerate(depth) {
            self.get(site)?;
        }
        Ok(())
    }

    /// Scale of the residual stream entering block `l` (or the decoder when
    /// `l == depth`).
    pub fn stream(&self, l: usize) -> Result<&QuantScale> {
        if l == 0 {
            self.act(ActSite::EncoderOut)
        } else {
            self.act(ActSite::Layer(l - 1, LayerSite::Residual))
        }
    }

    /// Scale of a bias vector: product of its weight scale and the scale of
    /// the activation it is added to.
    pub fn bias(&self, site: BiasSite, depth: usize) -> Result<QuantScale> {
        let (w, stream, label) = match site {
            BiasSite::NormShift(l) => (
                self.weight(WeightSite::Layer(l, LayerWeight::NormScale))?,
                self.stream(l)?,
                ActSite::Layer(l, LayerSite::PreSsm),
            ),
            BiasSite::Decoder => (
                self.weight(WeightSite::Decoder)?,
                self.stream(depth)?,
                ActSite::Output,
            ),
        };
        Ok(QuantScale {
            site: Site::Act(label),
            bits: BIAS_BITS,
            scale: w.scale * stream.scale,
            absmax: 0.0,
            degenerate: false,
        })
    }

    /// `site,bits,scale,absmax,degenerate` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "site,bits,scale,absmax,degenerate")?;
        for s in self.iter() {
            writeln!(
                out,
                "{},{},{:e},{:e},{}",
                s.site, s.bits, s.scale, s.absmax, s.degenerate
            )?;
        }
        Ok(())
    }
}

/// Values of a weight site as seen by the executor (both complex planes
/// for complex tensors).
pub fn weight_values(model: &S5Model, site: WeightSite) -> Vec<f64> {
    let f = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    match site {
        WeightSite::Encoder => f(model.encoder.values()),
        WeightSite::Decoder => f(model.decoder.values()),
        WeightSite::Layer(l, w) => {
            let p = &model.layers[l];
            match w {
                LayerWeight::Lambda => [f(&p.lambda_re), f(&p.lambda_im)].concat(),
                LayerWeight::B => [f(p.b_re.values()), f(p.b_im.values())].concat(),
                LayerWeight::C => [f(p.c_re.values()), f(p.c_im.values())].concat(),
                LayerWeight::D => f(&p.d),
                LayerWeight::Glu => f(p.glu.values()),
                LayerWeight::NormScale => f(&p.norm_scale),
            }
        }
    }
}

fn absmax(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Running absmax of every scale-owning activation site.
fn observe(acc: &mut BTreeMap<ActSite, f64>, taps: &FrameTaps, depth: usize) {
    for site in ActSite::scaled(depth) {
        let m = absmax(&taps.site(site));
        let e = acc.entry(site).or_insert(0.0);
        *e = e.max(m);
    }
}

/// Static calibration: weight scales from the weights, activation scales from
/// the absmax of every site over all calibration frames. The sigmoid output
/// is pinned to the range [0, 1].
pub fn calibrate(
    model: &S5Model,
    recipe: &QuantRecipe,
    sequences: &[Vec<Vec<f64>>],
) -> Result<ScaleSet> {
    if sequences.is_empty() {
        return Err(Error::Calibration("no calibration sequences".into()));
    }
    let depth = model.spec.depth;
    recipe.validate(depth)?;
    let cm = model.compile(Execution::EventDriven)?;

    let act = sequences
        .par_iter()
        .map(|seq| {
            let mut state = cm.zero_state();
            let mut tally = cm.new_tally();
            let mut acc = BTreeMap::new();
            for u in seq {
                let taps = cm.step_with(&mut state, u, &NoHook, &mut tally)?;
                observe(&mut acc, &taps, depth);
            }
            Ok::<_, Error>(acc)
        })
        .try_reduce(BTreeMap::new, |mut a, b| {
            for (k, v) in b {
                let e = a.entry(k).or_insert(0.0f64);
                *e = e.max(v);
            }
            Ok(a)
        })?;

    let mut set = ScaleSet::new([]);
    for site in Site::enumerate(depth) {
        let bits = recipe.get(site)?;
        let m = match site {
            Site::Weight(w) => absmax(&weight_values(model, w)),
            Site::Act(ActSite::Layer(_, LayerSite::Sigmoid)) => 1.0,
            Site::Act(a) => act.get(&a).copied().unwrap_or(0.0),
        };
        set.insert(QuantScale::from_absmax(site, bits, m));
    }
    Ok(set)
}

/// Rounds every activation onto its site's grid.
pub struct FakeQuantHook<'a> {
    scales: &'a ScaleSet,
    /// Per-block integer sigmoid tables; exact sigmoid when absent.
    luts: Option<Vec<SigmoidLut>>,
}

impl<'a> FakeQuantHook<'a> {
    /// Fails unless every site of a depth-`depth` model has a scale.
    pub fn new(scales: &'a ScaleSet, depth: usize) -> Result<Self> {
        scales.check_complete(depth)?;
        Ok(Self { scales, luts: None })
    }

    /// Evaluates the gate through the same interpolated table the integer
    /// runtime uses, so the two stay in lockstep.
    pub fn with_integer_sigmoid(scales: &'a ScaleSet, depth: usize) -> Result<Self> {
        scales.check_complete(depth)?;
        let luts = (0..depth)
            .map(|l| {
                let g = scales.act(ActSite::Layer(l, LayerSite::Gate))?;
                let s = scales.act(ActSite::Layer(l, LayerSite::Sigmoid))?;
                SigmoidLut::build(g.scale, g.qmax(), s.scale)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            scales,
            luts: Some(luts),
        })
    }
}

impl ActivationHook for FakeQuantHook<'_> {
    fn apply(&self, site: ActSite, values: &mut [f64]) {
        // Completeness is checked on construction.
        let s = self.scales.act(site).expect("scale set checked complete");
        s.fake_quant_in_place(values);
    }

    fn sigmoid(&self, layer: usize, gate: &[f64]) -> Vec<f64> {
        let Some(luts) = &self.luts else {
            return gate.iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect();
        };
        let g = self.scales.act(ActSite::Layer(layer, LayerSite::Gate)).expect("checked");
        let s = self.scales.act(ActSite::Layer(layer, LayerSite::Sigmoid)).expect("checked");
        gate.iter()
            .map(|&a| s.dequantize(luts[layer].eval(g.quantize(a) as i32) as i64))
            .collect()
    }
}

/// Rounds every weight onto its tensor grid and every bias onto the grid of
/// the accumulator it is added to.
pub struct FakeQuantWeights<'a> {
    scales: &'a ScaleSet,
    depth: usize,
}

impl WeightTransform for FakeQuantWeights<'_> {
    fn weight(&self, site: WeightSite, values: &mut [f64]) {
        let s = self.scales.weight(site).expect("scale set checked complete");
        s.fake_quant_in_place(values);
    }

    fn bias(&self, site: BiasSite, values: &mut [f64]) {
        let s = self.scales.bias(site, self.depth).expect("scale set checked complete");
        s.fake_quant_in_place(values);
    }
}

/// Float model with every weight fake-quantized; run it with a
/// [`FakeQuantHook`] to obtain the static-quant simulation.
pub fn fake_quant_compile(
    model: &S5Model,
    scales: &ScaleSet,
    execution: Execution,
) -> Result<CompiledModel> {
    scales.check_complete(model.spec.depth)?;
    let t = FakeQuantWeights {
        scales,
        depth: model.spec.depth,
    };
    CompiledModel::from_model_with(model, execution, &t)
}

/// Static-quantization simulation of a whole sequence from zero state, with
/// the gate evaluated through the integer sigmoid table.
pub fn static_quant_eval(
    model: &S5Model,
    scales: &ScaleSet,
    inputs: &[Vec<f64>],
) -> Result<Vec<FrameTaps>> {
    let cm = fake_quant_compile(model, scales, Execution::EventDriven)?;
    let hook = FakeQuantHook::with_integer_sigmoid(scales, model.spec.depth)?;
    let mut state = cm.zero_state();
    let mut tally = cm.new_tally();
    cm.run_steps_with(&mut state, inputs, &hook, &mut tally)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::s5::{init_random, ModelSpec};

    fn small_spec() -> ModelSpec {
        ModelSpec {
            depth: 2,
            n_input: 6,
            n_model: 5,
            n_ssm: 4,
            n_output: 3,
            ..ModelSpec::base()
        }
    }

    fn seq(t: usize, n: usize, gain: f64) -> Vec<Vec<f64>> {
        (0..t)
            .map(|k| (0..n).map(|i| gain * ((k * 7 + i * 3) as f64 * 0.37).sin()).collect())
            .collect()
    }

    #[test]
    fn recipe_completeness() {
        let r = QuantRecipe::w8a16(2);
        r.validate(2).unwrap();
        assert!(r.validate(3).is_err());
        let mut missing = r.clone();
        missing.bits.remove(&Site::Act(ActSite::Output));
        assert!(matches!(missing.validate(2), Err(Error::MissingScale(_))));
        assert_eq!(
            r.get(Site::Weight(WeightSite::Layer(1, LayerWeight::Lambda))).unwrap(),
            16
        );
    }

    #[test]
    fn empty_calibration_rejected() {
        let m = init_random(&small_spec(), 1).unwrap().relufy();
        assert!(matches!(
            calibrate(&m, &QuantRecipe::w8a16(2), &[]),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn zero_sequence_on_bias_free_model_is_degenerate() {
        let mut m = init_random(&small_spec(), 2).unwrap().relufy();
        m.decoder_bias.iter_mut().for_each(|b| *b = 0.0);
        for l in &mut m.layers {
            l.norm_shift.iter_mut().for_each(|b| *b = 0.0);
        }
        let scales = calibrate(&m, &QuantRecipe::w8a16(2), &[seq(4, 6, 0.0)]).unwrap();
        for s in scales.iter() {
            match s.site {
                Site::Act(ActSite::Layer(_, LayerSite::Sigmoid)) => assert!(!s.degenerate),
                Site::Act(_) => assert!(s.degenerate, "{}", s.site),
                Site::Weight(_) => assert!(!s.degenerate),
            }
        }
    }

    #[test]
    fn weight_scales_ignore_data() {
        let m = init_random(&small_spec(), 3).unwrap().relufy();
        let r = QuantRecipe::w8a16(2);
        let a = calibrate(&m, &r, &[seq(5, 6, 1.0)]).unwrap();
        let b = calibrate(&m, &r, &[seq(9, 6, 3.0)]).unwrap();
        for site in WeightSite::all(2) {
            assert_eq!(a.weight(site).unwrap(), b.weight(site).unwrap());
        }
    }

    #[test]
    fn scale_set_serde_round_trip() {
        let m = init_random(&small_spec(), 4).unwrap().relufy();
        let s = calibrate(&m, &QuantRecipe::w8a16(2), &[seq(3, 6, 1.0)]).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("act.layer1.state"));
        let back: ScaleSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn missing_site_rejected_by_simulation() {
        let m = init_random(&small_spec(), 5).unwrap().relufy();
        let s = calibrate(&m, &QuantRecipe::w8a16(2), &[seq(3, 6, 1.0)]).unwrap();
        let partial = ScaleSet::new(s.iter().filter(|x| x.site != Site::Act(ActSite::Input)).cloned());
        assert!(matches!(
            static_quant_eval(&m, &partial, &seq(2, 6, 1.0)),
            Err(Error::MissingScale(_))
        ));
    }
}
