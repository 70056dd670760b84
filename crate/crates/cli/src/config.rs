//! Run configuration read from a TOML file. Every section is optional and
//! unknown keys are rejected. The schema is described in `CONFIG.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lrnn_core::audio::StftConfig;
use lrnn_core::quant::QuantRecipe;
use lrnn_core::s5::Activation;
use lrnn_core::sites::{LayerWeight, Site, WeightSite};
use lrnn_core::ModelSpec;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for `pareto`; 0 uses every core.
    pub workers: usize,
    pub model: ModelSection,
    pub stft: StftConfig,
    pub prune: PruneSection,
    pub quant: QuantSection,
    pub calibration: CalibrationSection,
    pub pareto: ParetoSection,
    pub paths: PathsSection,
}

/// Starts from the base family at `width`; explicit dimensions override.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: f64,
    pub depth: Option<usize>,
    pub n_input: Option<usize>,
    pub n_model: Option<usize>,
    pub n_ssm: Option<usize>,
    pub n_output: Option<usize>,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            width: 1.0,
            depth: None,
            n_input: None,
            n_model: None,
            n_ssm: None,
            n_output: None,
            activation: Activation::Gelu,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub target: f64,
    pub initial: f64,
    pub epochs: u64,
    pub steps_per_epoch: u64,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self { target: 0.9, initial: 0.0, epochs: 10, steps_per_epoch: 100 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantSection {
    pub weight_bits: u8,
    pub lambda_bits: u8,
    pub act_bits: u8,
}

impl Default for QuantSection {
    fn default() -> Self {
        Self { weight_bits: 8, lambda_bits: 16, act_bits: 16 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    /// Synthetic sequences used by `calibrate --synthetic` when no count is given.
    pub sequences: usize,
    pub seconds: f64,
    pub snr_db: f64,
    /// Every calibration sequence is also fed at this gain.
    pub headroom: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self { sequences: 8, seconds: 2.0, snr_db: 5.0, headroom: 1.25 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoSection {
    pub widths: Vec<f64>,
    pub sparsities: Vec<f64>,
    pub mixtures: usize,
    pub seconds: f64,
    pub snr_db: f64,
}

impl Default for ParetoSection {
    fn default() -> Self {
        Self {
            widths: vec![0.25, 0.5, 1.0],
            sparsities: vec![0.0, 0.9],
            mixtures: 4,
            seconds: 2.0,
            snr_db: 5.0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Calibration audio directory used when `--audio` is absent.
    pub audio: Option<PathBuf>,
}

fn positive(name: &str, v: f64) -> CliResult<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::config(format!("{name} must be positive, got {v}")))
    }
}

fn sparsity(name: &str, v: f64) -> CliResult<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::config(format!("{name} must lie in [0, 1), got {v}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    /// Defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model_spec()?;
        self.stft.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.recipe(1)?;
        let p = &self.prune;
        sparsity("prune.target", p.target)?;
        sparsity("prune.initial", p.initial)?;
        if p.initial > p.target {
            return Err(CliError::config("prune.initial exceeds prune.target"));
        }
        if p.epochs == 0 || p.steps_per_epoch == 0 {
            return Err(CliError::config("prune.epochs and prune.steps_per_epoch must be positive"));
        }
        let c = &self.calibration;
        positive("calibration.seconds", c.seconds)?;
        if !(c.headroom.is_finite() && c.headroom >= 1.0) {
            return Err(CliError::config("calibration.headroom must be at least 1"));
        }
        if c.sequences == 0 {
            return Err(CliError::config("calibration.sequences must be positive"));
        }
        let f = &self.pareto;
        if f.widths.is_empty() || f.sparsities.is_empty() || f.mixtures == 0 {
            return Err(CliError::config("pareto needs widths, sparsities and mixtures"));
        }
        for &k in &f.widths {
            positive("pareto.widths", k)?;
        }
        for &s in &f.sparsities {
            sparsity("pareto.sparsities", s)?;
        }
        positive("pareto.seconds", f.seconds)?;
        Ok(())
    }

    pub fn model_spec(&self) -> CliResult<ModelSpec> {
        let m = &self.model;
        positive("model.width", m.width)?;
        let mut spec = ModelSpec::with_width(m.width);
        spec.depth = m.depth.unwrap_or(spec.depth);
        spec.n_input = m.n_input.unwrap_or(spec.n_input);
        spec.n_model = m.n_model.unwrap_or(spec.n_model);
        spec.n_ssm = m.n_ssm.unwrap_or(spec.n_ssm);
        spec.n_output = m.n_output.unwrap_or(spec.n_output);
        spec.activation = m.activation;
        spec.relufied = m.activation == Activation::Relu;
        spec.validate().map_err(|e| CliError::config(format!("model: {e}")))?;
        Ok(spec)
    }

    pub fn recipe(&self, depth: usize) -> CliResult<QuantRecipe> {
        let q = &self.quant;
        let bits: BTreeMap<Site, u8> = Site::enumerate(depth)
            .into_iter()
            .map(|site| {
                let b = match site {
                    Site::Weight(WeightSite::Layer(_, LayerWeight::Lambda)) => q.lambda_bits,
                    Site::Weight(_) => q.weight_bits,
                    Site::Act(_) => q.act_bits,
                };
                (site, b)
            })
            .collect();
        let recipe = QuantRecipe { bits };
        recipe.validate(depth).map_err(|e| CliError::config(format!("quant: {e}")))?;
        Ok(recipe)
    }
}
