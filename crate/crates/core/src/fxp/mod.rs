//! Integer-only W8A16 runtime.
//!
//! Every product accumulates exactly and is then narrowed to the 32-bit
//! accumulator width under the engine's [`OverflowPolicy`]. Accumulators are
//! brought to the destination grid by a normalized multiplier and shift with
//! round-half-away-from-zero (the same rounding as the quantizer), then
//! narrowed to the activation width under the same policy. Sums of two
//! differently scaled accumulators (state update, read-out, residual) are
//! combined before a single rounding.

mod lut;
mod requant;

pub use lut::{SigmoidLut, LUT_DOMAIN, LUT_ENTRIES, LUT_FRAC_BITS};
pub use requant::{check_pair, requant_pair, round_shift, Requantizer};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{LayerMacs, MacTally};
use crate::error::{Error, Result};
use crate::quant::{qmax, QuantRecipe, QuantScale, ScaleSet};
use crate::s5::{Activation, BiasSite, FrameTaps, LayerTaps, ModelSpec, S5Model};
use crate::sites::{ActSite, LayerSite, LayerWeight, Site, WeightSite};
use crate::tensors::{DenseMatrix, SparseMatrix};

/// Accumulator width.
pub const ACC_BITS: u8 = 32;

/// What happens when a value does not fit its destination width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverflowPolicy {
    /// Clip to the symmetric range `[-qmax, qmax]`.
    Saturate,
    /// Two's-complement wrap-around (sign inversion on positive overflow).
    Wrap,
}

impl std::str::FromStr for OverflowPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saturate" => Ok(Self::Saturate),
            "wrap" => Ok(Self::Wrap),
            other => Err(Error::Range(format!("unknown overflow policy `{other}`"))),
        }
    }
}

/// Two's-complement reduction of `v` to `bits` bits.
pub fn wrap_to(v: i128, bits: u8) -> i128 {
    let m = 1i128 << bits;
    let h = m >> 1;
    (v + h).rem_euclid(m) - h
}

/// Narrows `v` to `bits` under `policy`; returns the value and whether it
/// overflowed the symmetric range.
pub fn narrow(v: i128, bits: u8, policy: OverflowPolicy) -> (i64, bool) {
    let q = qmax(bits) as i128;
    if (-q..=q).contains(&v) {
        return (v as i64, false);
    }
    let out = match policy {
        OverflowPolicy::Saturate => v.clamp(-q, q),
        OverflowPolicy::Wrap => wrap_to(v, bits),
    };
    (out as i64, true)
}

/// Overflow events observed by a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overflows {
    /// Narrowings of exact sums to the accumulator width.
    pub accumulator: u64,
    /// Narrowings to an activation width, per site.
    pub activation: BTreeMap<ActSite, u64>,
}

impl Overflows {
    pub fn total(&self) -> u64 {
        self.accumulator + self.activation.values().sum::<u64>()
    }

    pub fn merge(&mut self, other: &Overflows) {
        self.accumulator += other.accumulator;
        for (k, v) in &other.activation {
            *self.activation.entry(*k).or_insert(0) += v;
        }
    }
}

struct Narrower<'a> {
    policy: OverflowPolicy,
    overflows: &'a mut Overflows,
}

impl Narrower<'_> {
    #[inline]
    fn acc(&mut self, v: i64) -> i64 {
        let (out, of) = narrow(v as i128, ACC_BITS, self.policy);
        if of {
            self.overflows.accumulator += 1;
        }
        out
    }

    #[inline]
    fn act(&mut self, site: ActSite, v: i128, bits: u8) -> i32 {
        let (out, of) = narrow(v, bits, self.policy);
        if of {
            *self.overflows.activation.entry(site).or_insert(0) += 1;
        }
        out as i32
    }
}

/// Activation widths of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBits {
    pub pre_ssm: u8,
    pub state: u8,
    pub readout: u8,
    pub gate: u8,
    pub glu_out: u8,
    pub residual: u8,
}

/// Integer tensors and requantizers of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FxpLayer {
    pub lambda_re: Vec<i16>,
    pub lambda_im: Vec<i16>,
    /// `[B_re; B_im]`, `2N x M`.
    pub b: SparseMatrix<i16>,
    /// `[C_re | -C_im]`, `M x 2N`.
    pub c: SparseMatrix<i16>,
    pub d: Vec<i16>,
    pub glu: SparseMatrix<i16>,
    pub norm_scale: Vec<i16>,
    /// At the norm accumulator grid (norm-scale scale x stream scale).
    pub norm_shift: Vec<i32>,
    pub req_norm: Requantizer,
    pub req_lambda: Requantizer,
    pub req_b: Requantizer,
    pub req_c: Requantizer,
    pub req_d: Requantizer,
    pub req_gate: Requantizer,
    pub req_glu: Requantizer,
    pub req_skip: Requantizer,
    pub req_branch: Requantizer,
    pub sigmoid: SigmoidLut,
    pub bits: LayerBits,
}

/// Self-contained integer model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FxpCheckpoint {
    pub spec: ModelSpec,
    pub scales: ScaleSet,
    pub encoder: SparseMatrix<i16>,
    pub req_encoder: Requantizer,
    pub layers: Vec<FxpLayer>,
    pub decoder: SparseMatrix<i16>,
    /// At the decoder accumulator grid.
    pub decoder_bias: Vec<i32>,
    pub req_decoder: Requantizer,
    pub input_bits: u8,
    pub encoder_bits: u8,
    pub output_bits: u8,
}

fn quantize_vec(s: &QuantScale, v: &[f32]) -> Vec<i16> {
    v.iter().map(|&x| s.quantize(x as f64) as i16).collect()
}

fn quantize_matrix(s: &QuantScale, m: &DenseMatrix<f32>) -> SparseMatrix<i16> {
    SparseMatrix::from_dense(&m.map(|x| s.quantize(x as f64) as i16))
}

fn ratio(num: f64, den: f64) -> Result<Requantizer> {
    Requantizer::from_ratio(num / den)
}

/// Converts a ReLU-fied float model and its frozen scales into a checkpoint
/// that needs no float arithmetic at inference.
pub fn freeze(model: &S5Model, scales: &ScaleSet, recipe: &QuantRecipe) -> Result<FxpCheckpoint> {
    let spec = &model.spec;
    if !spec.relufied || spec.activation != Activation::Relu {
        return Err(Error::NotRelufied);
    }
    model.validate()?;
    let depth = spec.depth;
    recipe.validate(depth)?;
    scales.check_complete(depth)?;
    for site in Site::enumerate(depth) {
        let (want, have) = (recipe.get(site)?, scales.get(site)?.bits);
        if want != have {
            return Err(Error::Range(format!(
                "{site}: recipe asks for {want} bits, scale was fitted for {have}"
            )));
        }
    }
    let act = |s: ActSite| scales.act(s);
    let wgt = |s: WeightSite| scales.weight(s);
    let (m, n) = (spec.n_model, spec.n_ssm);

    let s_in = act(ActSite::Input)?;
    let s_enc_w = wgt(WeightSite::Encoder)?;
    let s_enc = act(ActSite::EncoderOut)?;
    let encoder = quantize_matrix(s_enc_w, &model.encoder);
    let req_encoder = ratio(s_enc.scale, s_enc_w.scale * s_in.scale)?;

    let mut layers = Vec::with_capacity(depth);
    for (l, p) in model.layers.iter().enumerate() {
        let a = |s: LayerSite| act(ActSite::Layer(l, s));
        let w = |s: LayerWeight| wgt(WeightSite::Layer(l, s));
        let s_z = scales.stream(l)?;
        let (s_p, s_x, s_y) = (a(LayerSite::PreSsm)?, a(LayerSite::State)?, a(LayerSite::Readout)?);
        let (s_g, s_sig, s_o, s_r) = (
            a(LayerSite::Gate)?,
            a(LayerSite::Sigmoid)?,
            a(LayerSite::GluOut)?,
            a(LayerSite::Residual)?,
        );
        let (w_lam, w_b, w_c, w_d, w_glu, w_ns) = (
            w(LayerWeight::Lambda)?,
            w(LayerWeight::B)?,
            w(LayerWeight::C)?,
            w(LayerWeight::D)?,
            w(LayerWeight::Glu)?,
            w(LayerWeight::NormScale)?,
        );

        let b_stack = DenseMatrix::from_fn(2 * n, m, |r, c| {
            let v = if r < n { p.b_re.get(r, c) } else { p.b_im.get(r - n, c) };
            w_b.quantize(v as f64) as i16
        });
        let c_stack = DenseMatrix::from_fn(m, 2 * n, |r, c| {
            let v = if c < n { p.c_re.get(r, c) } else { -p.c_im.get(r, c - n) };
            w_c.quantize(v as f64) as i16
        });
        let s_shift = scales.bias(BiasSite::NormShift(l), depth)?;

        let layer = FxpLayer {
            lambda_re: quantize_vec(w_lam, &p.lambda_re),
            lambda_im: quantize_vec(w_lam, &p.lambda_im),
            b: SparseMatrix::from_dense(&b_stack),
            c: SparseMatrix::from_dense(&c_stack),
            d: quantize_vec(w_d, &p.d),
            glu: quantize_matrix(w_glu, &p.glu),
            norm_scale: quantize_vec(w_ns, &p.norm_scale),
            norm_shift: p
                .norm_shift
                .iter()
                .map(|&t| s_shift.quantize(t as f64) as i32)
                .collect(),
            req_norm: ratio(s_p.scale, w_ns.scale * s_z.scale)?,
            req_lambda: ratio(1.0, w_lam.scale)?,
            req_b: ratio(s_x.scale, w_b.scale * s_p.scale)?,
            req_c: ratio(s_y.scale, w_c.scale * s_x.scale)?,
            req_d: ratio(s_y.scale, w_d.scale * s_p.scale)?,
            req_gate: ratio(s_g.scale, w_glu.scale * s_y.scale)?,
            req_glu: ratio(s_o.scale, s_sig.scale * s_y.scale)?,
            req_skip: ratio(s_r.scale, s_z.scale)?,
            req_branch: ratio(s_r.scale, s_o.scale)?,
            sigmoid: SigmoidLut::build(s_g.scale, s_g.qmax(), s_sig.scale)?,
            bits: LayerBits {
                pre_ssm: s_p.bits,
                state: s_x.bits,
                readout: s_y.bits,
                gate: s_g.bits,
                glu_out: s_o.bits,
                residual: s_r.bits,
            },
        };
        check_pair(layer.req_lambda, layer.req_b)?;
        check_pair(layer.req_c, layer.req_d)?;
        check_pair(layer.req_skip, layer.req_branch)?;
        layers.push(layer);
    }

    let s_dec_w = wgt(WeightSite::Decoder)?;
    let s_last = scales.stream(depth)?;
    let s_out = act(ActSite::Output)?;
    let s_bias = scales.bias(BiasSite::Decoder, depth)?;
    Ok(FxpCheckpoint {
        spec: spec.clone(),
        scales: scales.clone(),
        encoder,
        req_encoder,
        layers,
        decoder: quantize_matrix(s_dec_w, &model.decoder),
        decoder_bias: model
            .decoder_bias
            .iter()
            .map(|&b| s_bias.quantize(b as f64) as i32)
            .collect(),
        req_decoder: ratio(s_out.scale, s_dec_w.scale * s_last.scale)?,
        input_bits: s_in.bits,
        encoder_bits: s_enc.bits,
        output_bits: s_out.bits,
    })
}

/// Integer recurrent state of every block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FxpState {
    pub re: Vec<Vec<i32>>,
    pub im: Vec<Vec<i32>>,
}

impl FxpState {
    pub fn zeros(depth: usize, n_ssm: usize) -> Self {
        Self {
            re: vec![vec![0; n_ssm]; depth],
            im: vec![vec![0; n_ssm]; depth],
        }
    }
}

/// Integer codes at every instrumented site of one block.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FxpLayerTaps {
    pub pre_ssm: Vec<i32>,
    pub state_re: Vec<i32>,
    pub state_im: Vec<i32>,
    pub hidden: Vec<i32>,
    pub readout: Vec<i32>,
    pub pre_glu: Vec<i32>,
    pub gate: Vec<i32>,
    pub sigmoid: Vec<i32>,
    pub glu_out: Vec<i32>,
    pub residual: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FxpFrameTaps {
    pub input: Vec<i32>,
    pub encoder_out: Vec<i32>,
    pub layers: Vec<FxpLayerTaps>,
    pub output: Vec<i32>,
}

impl FxpFrameTaps {
    /// Integer codes at `site`; the state site concatenates both planes.
    pub fn site(&self, site: ActSite) -> Vec<i32> {
        match site {
            ActSite::Input => self.input.clone(),
            ActSite::EncoderOut => self.encoder_out.clone(),
            ActSite::Output => self.output.clone(),
            ActSite::Layer(l, s) => {
                let t = &self.layers[l];
                match s {
                    LayerSite::PreSsm => t.pre_ssm.clone(),
                    LayerSite::State => [t.state_re.as_slice(), &t.state_im].concat(),
                    LayerSite::Hidden => t.hidden.clone(),
                    LayerSite::Readout => t.readout.clone(),
                    LayerSite::PreGlu => t.pre_glu.clone(),
                    LayerSite::Gate => t.gate.clone(),
                    LayerSite::Sigmoid => t.sigmoid.clone(),
                    LayerSite::GluOut => t.glu_out.clone(),
                    LayerSite::Residual => t.residual.clone(),
                }
            }
        }
    }

    /// Real values of every tap.
    pub fn dequantize(&self, scales: &ScaleSet) -> Result<FrameTaps> {
        let dq = |site: ActSite, v: &[i32]| -> Result<Vec<f64>> {
            let s = scales.act(site)?;
            Ok(v.iter().map(|&q| s.dequantize(q as i64)).collect())
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, t) in self.layers.iter().enumerate() {
            let s = |x| ActSite::Layer(l, x);
            layers.push(LayerTaps {
                pre_ssm: dq(s(LayerSite::PreSsm), &t.pre_ssm)?,
                state_re: dq(s(LayerSite::State), &t.state_re)?,
                state_im: dq(s(LayerSite::State), &t.state_im)?,
                hidden: dq(s(LayerSite::Hidden), &t.hidden)?,
                readout: dq(s(LayerSite::Readout), &t.readout)?,
                pre_glu: dq(s(LayerSite::PreGlu), &t.pre_glu)?,
                gate: dq(s(LayerSite::Gate), &t.gate)?,
                sigmoid: dq(s(LayerSite::Sigmoid), &t.sigmoid)?,
                glu_out: dq(s(LayerSite::GluOut), &t.glu_out)?,
                residual: dq(s(LayerSite::Residual), &t.residual)?,
            });
        }
        Ok(FrameTaps {
            input: dq(ActSite::Input, &self.input)?,
            encoder_out: dq(ActSite::EncoderOut, &self.encoder_out)?,
            layers,
            output: dq(ActSite::Output, &self.output)?,
        })
    }
}

/// Result of a whole-sequence integer run.
#[derive(Debug, Clone, PartialEq)]
pub struct FxpRun {
    pub taps: Vec<FxpFrameTaps>,
    pub overflows: Overflows,
    pub tally: MacTally,
}

impl FxpRun {
    /// Dequantized outputs of every frame.
    pub fn outputs(&self, ckpt: &FxpCheckpoint) -> Result<Vec<Vec<f64>>> {
        self.taps.iter().map(|t| ckpt.dequantize_output(&t.output)).collect()
    }
}

fn nonzero(v: &[i32]) -> u64 {
    v.iter().filter(|&&x| x != 0).count() as u64
}

impl FxpCheckpoint {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_state(&self) -> FxpState {
        FxpState::zeros(self.depth(), self.spec.n_ssm)
    }

    pub fn new_tally(&self) -> MacTally {
        MacTally::new(self.depth())
    }

    /// Input front end: real frame to codes at the input scale.
    pub fn quantize_input(&self, u: &[f64]) -> Result<Vec<i32>> {
        if u.len() != self.spec.n_input {
            return Err(Error::Dimension(format!(
                "input frame has {} values, model expects {}",
                u.len(),
                self.spec.n_input
            )));
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input[{i}]")));
        }
        let s = self.scales.act(ActSite::Input)?;
        Ok(u.iter().map(|&x| s.quantize(x) as i32).collect())
    }

    pub fn dequantize_output(&self, q: &[i32]) -> Result<Vec<f64>> {
        let s = self.scales.act(ActSite::Output)?;
        Ok(q.iter().map(|&v| s.dequantize(v as i64)).collect())
    }

    /// One frame of integer inference on already-quantized input codes.
    pub fn step(
        &self,
        state: &mut FxpState,
        u_q: &[i32],
        policy: OverflowPolicy,
        overflows: &mut Overflows,
        tally: &mut MacTally,
    ) -> Result<FxpFrameTaps> {
        if u_q.len() != self.spec.n_input {
            return Err(Error::Dimension(format!(
                "input frame has {} codes, model expects {}",
                u_q.len(),
                self.spec.n_input
            )));
        }
        let mut nr = Narrower { policy, overflows };
        let n = self.spec.n_ssm;

        let enc = self.encoder.spmv_int(u_q)?;
        tally.encoder += enc.macs;
        let encoder_out: Vec<i32> = enc
            .out
            .iter()
            .map(|&a| {
                let a = nr.acc(a);
                nr.act(ActSite::EncoderOut, self.req_encoder.apply(a), self.encoder_bits)
            })
            .collect();

        let mut z = encoder_out.clone();
        let mut layers = Vec::with_capacity(self.depth());
        for (l, p) in self.layers.iter().enumerate() {
            let site = |s| ActSite::Layer(l, s);
            let macs: &mut LayerMacs = &mut tally.layers[l];

            let pre_ssm: Vec<i32> = (0..z.len())
                .map(|i| {
                    let a = nr.acc(p.norm_scale[i] as i64 * z[i] as i64 + p.norm_shift[i] as i64);
                    // ReLU acts on the exact value: negatives never reach the narrowing.
                    nr.act(site(LayerSite::PreSsm), p.req_norm.apply(a).max(0), p.bits.pre_ssm)
                })
                .collect();
            macs.batchnorm += z.len() as u64;

            let drive = p.b.spmv_int(&pre_ssm)?;
            macs.s5_hidden += drive.macs + 4 * n as u64;
            let (xr, xi) = (&mut state.re[l], &mut state.im[l]);
            for i in 0..n {
                let (lr, li) = (p.lambda_re[i] as i64, p.lambda_im[i] as i64);
                let (r, im) = (xr[i] as i64, xi[i] as i64);
                let acc_re = nr.acc(lr * r - li * im);
                let acc_im = nr.acc(lr * im + li * r);
                let d_re = nr.acc(drive.out[i]);
                let d_im = nr.acc(drive.out[n + i]);
                let st = site(LayerSite::State);
                xr[i] = nr.act(st, requant_pair(acc_re, p.req_lambda, d_re, p.req_b), p.bits.state);
                xi[i] = nr.act(st, requant_pair(acc_im, p.req_lambda, d_im, p.req_b), p.bits.state);
            }

            let hidden: Vec<i32> = xr.iter().map(|&v| v.max(0)).chain(xi.iter().copied()).collect();
            let cy = p.c.spmv_int(&hidden)?;
            macs.s5_output += cy.macs + nonzero(&pre_ssm);
            let readout: Vec<i32> = (0..cy.out.len())
                .map(|i| {
                    let c = nr.acc(cy.out[i]);
                    let d = nr.acc(p.d[i] as i64 * pre_ssm[i] as i64);
                    nr.act(site(LayerSite::Readout), requant_pair(c, p.req_c, d, p.req_d), p.bits.readout)
                })
                .collect();
            let pre_glu: Vec<i32> = readout.iter().map(|&v| v.max(0)).collect();

            let gate_acc = p.glu.spmv_int(&pre_glu)?;
            macs.glu += gate_acc.macs + pre_glu.len() as u64;
            let gate: Vec<i32> = gate_acc
                .out
                .iter()
                .map(|&a| {
                    let a = nr.acc(a);
                    nr.act(site(LayerSite::Gate), p.req_gate.apply(a), p.bits.gate)
                })
                .collect();
            let sigmoid: Vec<i32> = gate.iter().map(|&g| p.sigmoid.eval(g)).collect();
            let glu_out: Vec<i32> = sigmoid
                .iter()
                .zip(&pre_glu)
                .map(|(&s, &g)| {
                    let a = nr.acc(s as i64 * g as i64);
                    nr.act(site(LayerSite::GluOut), p.req_glu.apply(a), p.bits.glu_out)
                })
                .collect();
            let residual: Vec<i32> = z
                .iter()
                .zip(&glu_out)
                .map(|(&zi, &oi)| {
                    let v = requant_pair(zi as i64, p.req_skip, oi as i64, p.req_branch);
                    nr.act(site(LayerSite::Residual), v.max(0), p.bits.residual)
                })
                .collect();

            z.clone_from(&residual);
            layers.push(FxpLayerTaps {
                pre_ssm,
                state_re: xr.clone(),
                state_im: xi.clone(),
                hidden,
                readout,
                pre_glu,
                gate,
                sigmoid,
                glu_out,
                residual,
            });
        }

        let dec = self.decoder.spmv_int(&z)?;
        tally.head += dec.macs;
        let output = dec
            .out
            .iter()
            .zip(&self.decoder_bias)
            .map(|(&a, &b)| {
                let a = nr.acc(a + b as i64);
                nr.act(ActSite::Output, self.req_decoder.apply(a), self.output_bits)
            })
            .collect();
        tally.frames += 1;
        Ok(FxpFrameTaps {
            input: u_q.to_vec(),
            encoder_out,
            layers,
            output,
        })
    }

    /// Token-by-token run from zero state over real input frames.
    pub fn run(&self, inputs: &[Vec<f64>], policy: OverflowPolicy) -> Result<FxpRun> {
        let mut state = self.zero_state();
        let mut overflows = Overflows::default();
        let mut tally = self.new_tally();
        let mut taps = Vec::with_capacity(inputs.len());
        for u in inputs {
            let q = self.quantize_input(u)?;
            taps.push(self.step(&mut state, &q, policy, &mut overflows, &mut tally)?);
        }
        Ok(FxpRun {
            taps,
            overflows,
            tally,
        })
    }
}
