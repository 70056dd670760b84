#![allow(dead_code)]

use lrnn_core::compressor::prune_to;
use lrnn_core::quant::{calibrate, QuantRecipe, ScaleSet};
use lrnn_core::s5::{init_random, Activation};
use lrnn_core::{ModelSpec, S5Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn spec(depth: usize, n_input: usize, n_model: usize, n_ssm: usize, n_output: usize) -> ModelSpec {
    ModelSpec {
        depth,
        n_input,
        n_model,
        n_ssm,
        n_output,
        width_factor: 1.0,
        activation: Activation::Gelu,
        relufied: false,
    }
}

/// Nonnegative spectrum-like frames.
pub fn frames(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..n).map(|_| rng.gen_range(0.0f64..1.0).powi(2) * 2.0).collect())
        .collect()
}

/// Signed frames.
pub fn signed_frames(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Random ReLU-fied model pruned to `sparsity`.
pub fn sparse_relu_model(seed: u64, spec: &ModelSpec, sparsity: f64) -> S5Model {
    let model = init_random(spec, seed).unwrap().relufy();
    if sparsity > 0.0 {
        prune_to(&model, sparsity).unwrap().1.model
    } else {
        model
    }
}

/// Calibration with headroom: the evaluation inputs plus amplified copies.
pub fn calibrate_with_headroom(model: &S5Model, inputs: &[Vec<f64>]) -> ScaleSet {
    let recipe = QuantRecipe::w8a16(model.spec.depth);
    let loud: Vec<Vec<f64>> = inputs
        .iter()
        .map(|f| f.iter().map(|v| v * 1.25).collect())
        .collect();
    calibrate(model, &recipe, &[inputs.to_vec(), loud]).unwrap()
}
