mod common;

use common::*;
use lrnn_core::analysis::{fxp_memory, model_memory, Layout};
use lrnn_core::fxp::freeze;
use lrnn_core::quant::QuantRecipe;
use lrnn_core::ModelSpec;

#[test]
fn float_base_is_four_bytes_per_parameter() {
    let model = lrnn_core::S5Model::zeros(ModelSpec::base());
    assert_eq!(model_memory(&model, Layout::Dense).total(), 4 * 802_625);
    assert_eq!(ModelSpec::base().parameter_count(), 802_625);
}

#[test]
fn fxp_dense_base_compression_ratio() {
    let spec = ModelSpec::base();
    let model = sparse_relu_model(11, &spec, 0.0);
    let inputs = frames(&mut rng(2), 8, 257);
    let scales = calibrate_with_headroom(&model, &inputs);
    let ckpt = freeze(&model, &scales, &QuantRecipe::w8a16(3)).unwrap();
    let float = model_memory(&model, Layout::Dense).total() as f64;
    let fxp = fxp_memory(&ckpt, Layout::Dense).total() as f64;
    let ratio = float / fxp;
    assert!((3.5..=4.0).contains(&ratio), "{ratio}");
}
