use serde::{Deserialize, Serialize};

use super::{Activation, S5Model};
use crate::analysis::{LayerMacs, MacTally};
use crate::error::{Error, Result};
use crate::sites::{ActSite, LayerSite, WeightSite};
use crate::tensors::{relu, ComplexVector, DenseMatrix, SparseMatrix, Spmv};

/// How weight matrices are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Execution {
    /// Plain dense products over (masked) dense weights.
    Dense,
    /// CSR products that skip zero activations.
    EventDriven,
}

/// Weight matrix in the chosen execution format.
#[derive(Debug, Clone)]
pub enum Linear {
    Dense(DenseMatrix<f64>),
    Sparse(SparseMatrix<f64>),
}

impl Linear {
    fn new(w: DenseMatrix<f64>, execution: Execution) -> Self {
        match execution {
            Execution::Dense => Linear::Dense(w),
            Execution::EventDriven => Linear::Sparse(SparseMatrix::from_dense(&w)),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Linear::Dense(w) => w.shape(),
            Linear::Sparse(w) => w.shape(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Linear::Dense(w) => w.values().iter().filter(|&&v| v != 0.0).count(),
            Linear::Sparse(w) => w.nnz(),
        }
    }

    /// Dense execution counts every entry as executed.
    pub fn apply(&self, x: &[f64]) -> Result<Spmv<f64>> {
        match self {
            Linear::Dense(w) => Ok(Spmv {
                out: w.matvec(x)?,
                macs: w.len() as u64,
            }),
            Linear::Sparse(w) => w.spmv(x),
        }
    }
}

/// Observation point applied to activation vectors as they are produced.
///
/// The float reference uses [`NoHook`]; the fake-quant simulation rounds each
/// vector onto its site's grid.
pub trait ActivationHook: Sync {
    fn apply(&self, site: ActSite, values: &mut [f64]);

    /// Gate nonlinearity of block `layer`.
    fn sigmoid(&self, _layer: usize, gate: &[f64]) -> Vec<f64> {
        gate.iter().map(|&a| sigmoid(a)).collect()
    }
}

pub struct NoHook;

impl ActivationHook for NoHook {
    #[inline]
    fn apply(&self, _site: ActSite, _values: &mut [f64]) {}
}

/// Bias vectors whose quantization grid is derived from neighbouring scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasSite {
    NormShift(usize),
    Decoder,
}

/// Transformation applied to weights while compiling (identity for the float
/// reference, fake quantization for the static-quant simulation).
pub trait WeightTransform {
    fn weight(&self, site: WeightSite, values: &mut [f64]);
    fn bias(&self, site: BiasSite, values: &mut [f64]);
}

struct Identity;

impl WeightTransform for Identity {
    fn weight(&self, _: WeightSite, _: &mut [f64]) {}
    fn bias(&self, _: BiasSite, _: &mut [f64]) {}
}

#[derive(Debug, Clone)]
pub struct CompiledLayer {
    pub lambda_re: Vec<f64>,
    pub lambda_im: Vec<f64>,
    /// `[B_re; B_im]`, `2N x M`.
    pub b: Linear,
    /// `[C_re | -C_im]`, `M x 2N`.
    pub c: Linear,
    pub d: Vec<f64>,
    pub glu: Linear,
    pub norm_scale: Vec<f64>,
    pub norm_shift: Vec<f64>,
}

/// Model prepared for execution: f64 weights, stacked complex projections.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub n_input: usize,
    pub n_model: usize,
    pub n_ssm: usize,
    pub n_output: usize,
    pub activation: Activation,
    pub relufied: bool,
    pub execution: Execution,
    pub encoder: Linear,
    pub layers: Vec<CompiledLayer>,
    pub decoder: Linear,
    pub decoder_bias: Vec<f64>,
}

/// Carried recurrent state, one complex vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub layers: Vec<ComplexVector>,
}

impl ModelState {
    pub fn zeros(depth: usize, n_ssm: usize) -> Self {
        Self {
            layers: (0..depth).map(|_| ComplexVector::zeros(n_ssm)).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.layers.iter_mut().for_each(ComplexVector::reset);
    }
}

/// Activations of one block for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerTaps {
    pub pre_ssm: Vec<f64>,
    pub state_re: Vec<f64>,
    pub state_im: Vec<f64>,
    pub hidden: Vec<f64>,
    pub readout: Vec<f64>,
    pub pre_glu: Vec<f64>,
    pub gate: Vec<f64>,
    pub sigmoid: Vec<f64>,
    pub glu_out: Vec<f64>,
    pub residual: Vec<f64>,
}

impl LayerTaps {
    /// Values recorded at `site`; the state site concatenates both planes.
    pub fn site(&self, site: LayerSite) -> Vec<f64> {
        match site {
            LayerSite::PreSsm => self.pre_ssm.clone(),
            LayerSite::State => [self.state_re.as_slice(), &self.state_im].concat(),
            LayerSite::Hidden => self.hidden.clone(),
            LayerSite::Readout => self.readout.clone(),
            LayerSite::PreGlu => self.pre_glu.clone(),
            LayerSite::Gate => self.gate.clone(),
            LayerSite::Sigmoid => self.sigmoid.clone(),
            LayerSite::GluOut => self.glu_out.clone(),
            LayerSite::Residual => self.residual.clone(),
        }
    }
}

/// Every instrumented activation of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameTaps {
    pub input: Vec<f64>,
    pub encoder_out: Vec<f64>,
    pub layers: Vec<LayerTaps>,
    pub output: Vec<f64>,
}

impl FrameTaps {
    pub fn site(&self, site: ActSite) -> Vec<f64> {
        match site {
            ActSite::Input => self.input.clone(),
            ActSite::EncoderOut => self.encoder_out.clone(),
            ActSite::Layer(l, s) => self.layers[l].site(s),
            ActSite::Output => self.output.clone(),
        }
    }

    /// Input of the decoder (the last residual stream).
    pub fn pre_head(&self) -> &[f64] {
        self.layers
            .last()
            .map_or(&self.encoder_out, |l| &l.residual)
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scan composition for the per-channel recurrence `x <- a x + b`:
/// `(a1, b1) then (a2, b2) = (a1 a2, a2 b1 + b2)` over complex pairs.
pub fn compose(e1: (f64, f64, f64, f64), e2: (f64, f64, f64, f64)) -> (f64, f64, f64, f64) {
    let (a1r, a1i, b1r, b1i) = e1;
    let (a2r, a2i, b2r, b2i) = e2;
    (
        a1r * a2r - a1i * a2i,
        a1r * a2i + a1i * a2r,
        a2r * b1r - a2i * b1i + b2r,
        a2r * b1i + a2i * b1r + b2i,
    )
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn nonzero(v: &[f64]) -> u64 {
    v.iter().filter(|&&x| x != 0.0).count() as u64
}

/// Output of the part of a block that precedes the recurrence.
pub(crate) struct BlockInput {
    pub v: Vec<f64>,
    pub drive: Vec<f64>,
}

impl CompiledModel {
    pub fn from_model(model: &S5Model, execution: Execution) -> Result<Self> {
        Self::from_model_with(model, execution, &Identity)
    }

    pub fn from_model_with(
        model: &S5Model,
        execution: Execution,
        transform: &dyn WeightTransform,
    ) -> Result<Self> {
        model.validate()?;
        let spec = &model.spec;
        let (m, n) = (spec.n_model, spec.n_ssm);

        let mut encoder = model.encoder.map(|v| v as f64);
        transform.weight(WeightSite::Encoder, encoder.values_mut());
        let mut decoder = model.decoder.map(|v| v as f64);
        transform.weight(WeightSite::Decoder, decoder.values_mut());
        let mut decoder_bias = to_f64(&model.decoder_bias);
        transform.bias(BiasSite::Decoder, &mut decoder_bias);

        let mut layers = Vec::with_capacity(spec.depth);
        for (l, p) in model.layers.iter().enumerate() {
            use crate::sites::LayerWeight as W;
            let site = |w| WeightSite::Layer(l, w);

            let mut lambda = [to_f64(&p.lambda_re), to_f64(&p.lambda_im)].concat();
            transform.weight(site(W::Lambda), &mut lambda);
            let lambda_im = lambda.split_off(n);

            let mut b: Vec<f64> = p.b_re.values().iter().chain(p.b_im.values()).map(|&v| v as f64).collect();
            transform.weight(site(W::B), &mut b);
            let b = DenseMatrix::from_vec(2 * n, m, b)?;

            let mut c = Vec::with_capacity(2 * m * n);
            for r in 0..m {
                c.extend(p.c_re.row(r).iter().map(|&v| v as f64));
                c.extend(p.c_im.row(r).iter().map(|&v| -(v as f64)));
            }
            transform.weight(site(W::C), &mut c);
            let c = DenseMatrix::from_vec(m, 2 * n, c)?;

            let mut d = to_f64(&p.d);
            transform.weight(site(W::D), &mut d);
            let mut glu = p.glu.map(|v| v as f64);
            transform.weight(site(W::Glu), glu.values_mut());
            let mut norm_scale = to_f64(&p.norm_scale);
            transform.weight(site(W::NormScale), &mut norm_scale);
            let mut norm_shift = to_f64(&p.norm_shift);
            transform.bias(BiasSite::NormShift(l), &mut norm_shift);

            layers.push(CompiledLayer {
                lambda_re: lambda,
                lambda_im,
                b: Linear::new(b, execution),
                c: Linear::new(c, execution),
                d,
                glu: Linear::new(glu, execution),
                norm_scale,
                norm_shift,
            });
        }

        Ok(Self {
            n_input: spec.n_input,
            n_model: m,
            n_ssm: n,
            n_output: spec.n_output,
            activation: spec.activation,
            relufied: spec.relufied,
            execution,
            encoder: Linear::new(encoder, execution),
            layers,
            decoder: Linear::new(decoder, execution),
            decoder_bias,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_state(&self) -> ModelState {
        ModelState::zeros(self.depth(), self.n_ssm)
    }

    pub fn new_tally(&self) -> MacTally {
        MacTally::new(self.depth())
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.n_input {
            return Err(Error::Dimension(format!(
                "input frame has {} values, model expects {}",
                u.len(),
                self.n_input
            )));
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input[{i}]")));
        }
        Ok(())
    }

    pub(crate) fn encode(
        &self,
        u: &[f64],
        hook: &dyn ActivationHook,
        tally: &mut MacTally,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(u)?;
        let mut input = u.to_vec();
        hook.apply(ActSite::Input, &mut input);
        let enc = self.encoder.apply(&input)?;
        tally.encoder += enc.macs;
        let mut z = enc.out;
        hook.apply(ActSite::EncoderOut, &mut z);
        Ok((input, z))
    }

    /// Normalization and input projection of block `l`.
    pub(crate) fn block_input(
        &self,
        l: usize,
        z: &[f64],
        hook: &dyn ActivationHook,
        macs: &mut LayerMacs,
    ) -> Result<BlockInput> {
        let p = &self.layers[l];
        let mut v: Vec<f64> = z
            .iter()
            .zip(&p.norm_scale)
            .zip(&p.norm_shift)
            .map(|((&x, &s), &t)| s * x + t)
            .collect();
        macs.batchnorm += self.n_model as u64;
        hook.apply(ActSite::Layer(l, LayerSite::PreSsm), &mut v);
        if self.relufied {
            v.iter_mut().for_each(|x| *x = relu(*x));
        }
        let drive = p.b.apply(&v)?;
        macs.s5_hidden += drive.macs + 4 * self.n_ssm as u64;
        Ok(BlockInput { v, drive: drive.out })
    }

    /// One step of the diagonal recurrence, in place.
    pub(crate) fn recur(
        &self,
        l: usize,
        x: &mut ComplexVector,
        drive: &[f64],
        hook: &dyn ActivationHook,
    ) {
        let p = &self.layers[l];
        let n = self.n_ssm;
        for i in 0..n {
            let (ar, ai) = (p.lambda_re[i], p.lambda_im[i]);
            let (xr, xi) = (x.re[i], x.im[i]);
            x.re[i] = ar * xr - ai * xi + drive[i];
            x.im[i] = ar * xi + ai * xr + drive[n + i];
        }
        let site = ActSite::Layer(l, LayerSite::State);
        hook.apply(site, &mut x.re);
        hook.apply(site, &mut x.im);
    }

    /// Read-out, GLU and residual of block `l` given its updated state.
    pub(crate) fn block_output(
        &self,
        l: usize,
        z: &[f64],
        input: BlockInput,
        x: &ComplexVector,
        hook: &dyn ActivationHook,
        macs: &mut LayerMacs,
    ) -> Result<LayerTaps> {
        let p = &self.layers[l];
        let site = |s| ActSite::Layer(l, s);
        let BlockInput { v, .. } = input;

        let mut hidden = Vec::with_capacity(2 * self.n_ssm);
        if self.relufied {
            hidden.extend(x.re.iter().map(|&r| relu(r)));
        } else {
            hidden.extend_from_slice(&x.re);
        }
        hidden.extend_from_slice(&x.im);

        let cy = p.c.apply(&hidden)?;
        macs.s5_output += cy.macs + nonzero(&v);
        let mut readout: Vec<f64> = cy
            .out
            .iter()
            .zip(&p.d)
            .zip(&v)
            .map(|((&c, &d), &u)| if u != 0.0 { c + d * u } else { c })
            .collect();
        hook.apply(site(LayerSite::Readout), &mut readout);

        let mut pre_glu: Vec<f64> = match self.activation {
            Activation::Relu => readout.iter().map(|&y| relu(y)).collect(),
            Activation::Gelu => readout.iter().map(|&y| gelu(y)).collect(),
        };
        hook.apply(site(LayerSite::PreGlu), &mut pre_glu);

        let gate = p.glu.apply(&pre_glu)?;
        macs.glu += gate.macs + self.n_model as u64;
        let mut gate = gate.out;
        hook.apply(site(LayerSite::Gate), &mut gate);

        let mut sig = hook.sigmoid(l, &gate);
        hook.apply(site(LayerSite::Sigmoid), &mut sig);

        let mut glu_out: Vec<f64> = sig.iter().zip(&pre_glu).map(|(&s, &g)| s * g).collect();
        hook.apply(site(LayerSite::GluOut), &mut glu_out);

        let mut residual: Vec<f64> = z.iter().zip(&glu_out).map(|(&a, &b)| a + b).collect();
        hook.apply(site(LayerSite::Residual), &mut residual);
        if self.relufied {
            residual.iter_mut().for_each(|r| *r = relu(*r));
        }

        Ok(LayerTaps {
            pre_ssm: v,
            state_re: x.re.clone(),
            state_im: x.im.clone(),
            hidden,
            readout,
            pre_glu,
            gate,
            sigmoid: sig,
            glu_out,
            residual,
        })
    }

    pub(crate) fn decode(
        &self,
        z: &[f64],
        hook: &dyn ActivationHook,
        tally: &mut MacTally,
    ) -> Result<Vec<f64>> {
        let dec = self.decoder.apply(z)?;
        tally.head += dec.macs;
        let mut out: Vec<f64> = dec
            .out
            .iter()
            .zip(&self.decoder_bias)
            .map(|(&y, &b)| y + b)
            .collect();
        hook.apply(ActSite::Output, &mut out);
        Ok(out)
    }

    /// Advances every layer by one frame.
    pub fn step_with(
        &self,
        state: &mut ModelState,
        u: &[f64],
        hook: &dyn ActivationHook,
        tally: &mut MacTally,
    ) -> Result<FrameTaps> {
        let (input, encoder_out) = self.encode(u, hook, tally)?;
        let mut z = encoder_out.clone();
        let mut layers = Vec::with_capacity(self.depth());
        for l in 0..self.depth() {
            let macs = &mut tally.layers[l];
            let bi = self.block_input(l, &z, hook, macs)?;
            let x = &mut state.layers[l];
            self.recur(l, x, &bi.drive, hook);
            let taps = self.block_output(l, &z, bi, x, hook, macs)?;
            z.clone_from(&taps.residual);
            layers.push(taps);
        }
        let output = self.decode(&z, hook, tally)?;
        tally.frames += 1;
        Ok(FrameTaps {
            input,
            encoder_out,
            layers,
            output,
        })
    }

    pub fn step(&self, state: &mut ModelState, u: &[f64], tally: &mut MacTally) -> Result<FrameTaps> {
        self.step_with(state, u, &NoHook, tally)
    }

    /// Token-by-token evaluation from the given state.
    pub fn run_steps_with(
        &self,
        state: &mut ModelState,
        inputs: &[Vec<f64>],
        hook: &dyn ActivationHook,
        tally: &mut MacTally,
    ) -> Result<Vec<FrameTaps>> {
        inputs
            .iter()
            .map(|u| self.step_with(state, u, hook, tally))
            .collect()
    }

    /// Token-by-token evaluation from zero state.
    pub fn run_steps(&self, inputs: &[Vec<f64>]) -> Result<(Vec<FrameTaps>, MacTally)> {
        let mut state = self.zero_state();
        let mut tally = self.new_tally();
        let taps = self.run_steps_with(&mut state, inputs, &NoHook, &mut tally)?;
        Ok((taps, tally))
    }
}
