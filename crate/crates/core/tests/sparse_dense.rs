mod common;

use common::*;
use lrnn_core::fxp::{freeze, OverflowPolicy};
use lrnn_core::quant::QuantRecipe;
use lrnn_core::s5::Execution;
use lrnn_core::tensors::SparseMatrix;
use lrnn_core::ModelSpec;
use rand::Rng;

fn random_spec(r: &mut rand_chacha::ChaCha8Rng, case: u64) -> ModelSpec {
    if case % 25 == 0 {
        return ModelSpec::base();
    }
    spec(
        r.gen_range(1..=3),
        r.gen_range(1..=257),
        r.gen_range(1..=192),
        r.gen_range(1..=256),
        r.gen_range(1..=257),
    )
}

#[test]
fn event_driven_float_matches_dense_masked() {
    for case in 0..40u64 {
        let mut r = rng(case);
        let sp = random_spec(&mut r, case);
        let sparsity = r.gen_range(0.0..0.97);
        let model = sparse_relu_model(case, &sp, sparsity);
        let inputs = frames(&mut r, 4, sp.n_input);
        let (dense, _) = model.compile(Execution::Dense).unwrap().run_steps(&inputs).unwrap();
        let (sparse, _) = model.compile(Execution::EventDriven).unwrap().run_steps(&inputs).unwrap();
        for (a, b) in dense.iter().zip(&sparse) {
            for (x, y) in a.output.iter().zip(&b.output) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-3), "case {case}: {x} vs {y}");
            }
        }
    }
}

fn check_int(m: &SparseMatrix<i16>, x: &[i32]) {
    let sparse = m.spmv_int(x).unwrap();
    let dense = m.to_dense().matvec_int(x).unwrap();
    assert_eq!(sparse.out, dense);
    let active: u64 = m
        .column_nnz()
        .iter()
        .zip(x)
        .filter(|(_, &v)| v != 0)
        .map(|(&c, _)| c as u64)
        .sum();
    assert_eq!(sparse.macs, active);
}

#[test]
fn event_driven_integer_products_are_exact() {
    for case in 0..12u64 {
        let mut r = rng(500 + case);
        let sp = spec(r.gen_range(1..=3), 24, r.gen_range(4..=64), r.gen_range(4..=64), 24);
        let model = sparse_relu_model(case, &sp, r.gen_range(0.3..0.95));
        let inputs = frames(&mut r, 8, sp.n_input);
        let scales = calibrate_with_headroom(&model, &inputs);
        let ckpt = freeze(&model, &scales, &QuantRecipe::w8a16(sp.depth)).unwrap();
        let run = ckpt.run(&inputs, OverflowPolicy::Saturate).unwrap();
        for t in &run.taps {
            check_int(&ckpt.encoder, &t.input);
            for (l, lt) in t.layers.iter().enumerate() {
                check_int(&ckpt.layers[l].b, &lt.pre_ssm);
                check_int(&ckpt.layers[l].c, &lt.hidden);
                check_int(&ckpt.layers[l].glu, &lt.pre_glu);
            }
            check_int(&ckpt.decoder, &t.layers.last().unwrap().residual);
        }
    }
}
