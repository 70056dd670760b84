//! Floating-point reference model: diagonal linear recurrence, GLU channel
//! mixer, fused inference-mode normalization, encoder and decoder.
//!
//! Block wiring (pre-norm, one residual per block):
//!
//! ```text
//! v = norm(z)            [relu(v) when ReLU-fied]
//! x = lambda * x + B v   (complex, diagonal lambda)
//! h = [Re x, Im x]       [relu on Re x when ReLU-fied]
//! y = Re(C x) + D * v
//! g = tau(y);  o = sigmoid(W g) * g
//! z = z + o              [relu(z) when ReLU-fied]
//! ```
//!
//! Projections are stored in operator orientation: `B` is `N x M` (state from
//! block input), `C` is `M x N`.

mod exec;
mod init;
mod scan;

pub use exec::{
    compose, ActivationHook, BiasSite, CompiledLayer, CompiledModel, Execution, FrameTaps, LayerTaps,
    Linear, ModelState, NoHook, WeightTransform,
};
pub use init::init_random;
pub use scan::{scan_linear_recurrence, ScanElement};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::{DenseMatrix, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

/// Architecture dimensions and activation flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub depth: usize,
    pub n_input: usize,
    pub n_model: usize,
    pub n_ssm: usize,
    pub n_output: usize,
    #[serde(default = "one")]
    pub width_factor: f64,
    #[serde(default = "gelu")]
    pub activation: Activation,
    #[serde(default)]
    pub relufied: bool,
}

fn one() -> f64 {
    1.0
}

fn gelu() -> Activation {
    Activation::Gelu
}

impl ModelSpec {
    pub const BASE_DEPTH: usize = 3;
    pub const BASE_MODEL: usize = 192;
    pub const BASE_SSM: usize = 256;
    pub const BASE_IO: usize = 257;

    /// Width-factor-1 denoising configuration.
    pub fn base() -> Self {
        Self::with_width(1.0)
    }

    /// Scales the model and state widths linearly by `k`.
    pub fn with_width(k: f64) -> Self {
        Self {
            depth: Self::BASE_DEPTH,
            n_input: Self::BASE_IO,
            n_model: ((Self::BASE_MODEL as f64 * k).round() as usize).max(1),
            n_ssm: ((Self::BASE_SSM as f64 * k).round() as usize).max(1),
            n_output: Self::BASE_IO,
            width_factor: k,
            activation: Activation::Gelu,
            relufied: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("depth", self.depth),
            ("n_input", self.n_input),
            ("n_model", self.n_model),
            ("n_ssm", self.n_ssm),
            ("n_output", self.n_output),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Range(format!("{name} must be at least 1")));
            }
        }
        if !(self.width_factor.is_finite() && self.width_factor > 0.0) {
            return Err(Error::Range("width_factor must be positive".into()));
        }
        Ok(())
    }

    /// Total number of scalar parameters (complex tensors count both planes).
    pub fn parameter_count(&self) -> usize {
        let (m, n) = (self.n_model, self.n_ssm);
        let per_layer = 2 * n + 2 * n * m + 2 * m * n + m + m * m + 2 * m;
        self.n_input * m + self.depth * per_layer + m * self.n_output + self.n_output
    }
}

/// Learned tensors of one recurrent block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S5Layer {
    pub lambda_re: Vec<f32>,
    pub lambda_im: Vec<f32>,
    /// `N x M`
    pub b_re: DenseMatrix<f32>,
    pub b_im: DenseMatrix<f32>,
    /// `M x N`
    pub c_re: DenseMatrix<f32>,
    pub c_im: DenseMatrix<f32>,
    pub d: Vec<f32>,
    /// `M x M`
    pub glu: DenseMatrix<f32>,
    pub norm_scale: Vec<f32>,
    pub norm_shift: Vec<f32>,
}

impl S5Layer {
    pub fn zeros(n_model: usize, n_ssm: usize) -> Self {
        Self {
            lambda_re: vec![0.0; n_ssm],
            lambda_im: vec![0.0; n_ssm],
            b_re: DenseMatrix::zeros(n_ssm, n_model),
            b_im: DenseMatrix::zeros(n_ssm, n_model),
            c_re: DenseMatrix::zeros(n_model, n_ssm),
            c_im: DenseMatrix::zeros(n_model, n_ssm),
            d: vec![0.0; n_model],
            glu: DenseMatrix::zeros(n_model, n_model),
            norm_scale: vec![1.0; n_model],
            norm_shift: vec![0.0; n_model],
        }
    }

    /// Largest eigenvalue modulus of the diagonal recurrence.
    pub fn max_lambda_modulus(&self) -> f64 {
        self.lambda_re
            .iter()
            .zip(&self.lambda_im)
            .map(|(&r, &i)| (r as f64).hypot(i as f64))
            .fold(0.0, f64::max)
    }

    fn validate(&self, idx: usize, m: usize, n: usize) -> Result<()> {
        let ctx = |what: &str| format!("layer {idx}: {what}");
        let vec_ok = |v: &[f32], len: usize, what: &str| -> Result<()> {
            if v.len() != len {
                return Err(Error::Dimension(ctx(&format!(
                    "{what} has length {}, expected {len}",
                    v.len()
                ))));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(ctx(what)));
            }
            Ok(())
        };
        vec_ok(&self.lambda_re, n, "lambda_re")?;
        vec_ok(&self.lambda_im, n, "lambda_im")?;
        vec_ok(&self.d, m, "d")?;
        vec_ok(&self.norm_scale, m, "norm_scale")?;
        vec_ok(&self.norm_shift, m, "norm_shift")?;
        let mats = [
            (&self.b_re, (n, m), "b_re"),
            (&self.b_im, (n, m), "b_im"),
            (&self.c_re, (m, n), "c_re"),
            (&self.c_im, (m, n), "c_im"),
            (&self.glu, (m, m), "glu"),
        ];
        for (mat, shape, what) in mats {
            if mat.shape() != shape {
                return Err(Error::Dimension(ctx(&format!(
                    "{what} is {:?}, expected {shape:?}",
                    mat.shape()
                ))));
            }
            if !mat.is_finite() {
                return Err(Error::NonFinite(ctx(what)));
            }
        }
        if self.max_lambda_modulus() >= 1.0 {
            return Err(Error::Range(ctx("recurrence is not stable (|lambda| >= 1)")));
        }
        Ok(())
    }
}

/// Keep-masks of every prunable matrix. Complex projections share one mask
/// across their real and imaginary planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMasks {
    pub b: Mask,
    pub c: Mask,
    pub glu: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMasks {
    pub encoder: Mask,
    pub layers: Vec<LayerMasks>,
    pub decoder: Mask,
}

/// Full floating-point model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S5Model {
    pub spec: ModelSpec,
    /// `M x N_in`
    pub encoder: DenseMatrix<f32>,
    pub layers: Vec<S5Layer>,
    /// `N_out x M`
    pub decoder: DenseMatrix<f32>,
    pub decoder_bias: Vec<f32>,
    /// Present once the model has been pruned.
    pub masks: Option<ModelMasks>,
}

impl S5Model {
    /// Model with every weight at zero, unit norm scale and zero bias.
    pub fn zeros(spec: ModelSpec) -> Self {
        let (m, n) = (spec.n_model, spec.n_ssm);
        Self {
            encoder: DenseMatrix::zeros(m, spec.n_input),
            layers: (0..spec.depth).map(|_| S5Layer::zeros(m, n)).collect(),
            decoder: DenseMatrix::zeros(spec.n_output, m),
            decoder_bias: vec![0.0; spec.n_output],
            masks: None,
            spec,
        }
    }

    /// Model whose output is `value` on every channel regardless of input.
    pub fn constant_output(spec: ModelSpec, value: f32) -> Self {
        let mut model = Self::zeros(spec);
        model.decoder_bias.iter_mut().for_each(|b| *b = value);
        model
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.spec;
        s.validate()?;
        if self.layers.len() != s.depth {
            return Err(Error::Dimension(format!(
                "spec depth {} but {} layers",
                s.depth,
                self.layers.len()
            )));
        }
        if self.encoder.shape() != (s.n_model, s.n_input) {
            return Err(Error::Dimension("encoder shape".into()));
        }
        if self.decoder.shape() != (s.n_output, s.n_model) {
            return Err(Error::Dimension("decoder shape".into()));
        }
        if self.decoder_bias.len() != s.n_output {
            return Err(Error::Dimension("decoder bias length".into()));
        }
        if !self.encoder.is_finite() || !self.decoder.is_finite() {
            return Err(Error::NonFinite("encoder/decoder".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i, s.n_model, s.n_ssm)?;
        }
        Ok(())
    }

    /// Swaps GELU for ReLU and enables the extra ReLUs on the block input,
    /// the real read-out operand and the residual stream. Weights are untouched.
    pub fn relufy(&self) -> Self {
        let mut out = self.clone();
        out.spec.activation = Activation::Relu;
        out.spec.relufied = true;
        out
    }

    pub fn compile(&self, execution: Execution) -> Result<CompiledModel> {
        CompiledModel::from_model(self, execution)
    }
}
