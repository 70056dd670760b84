mod common;

use common::*;
use lrnn_core::fxp::{freeze, narrow, OverflowPolicy};
use lrnn_core::quant::QuantRecipe;
use lrnn_core::sites::ActSite;
use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive};

/// Two's-complement reinterpretation computed with unbounded integers.
fn modular(v: i128, bits: u32) -> i64 {
    let m = BigInt::from(1) << bits;
    let mut r = BigInt::from(v) % &m;
    if r.is_negative() {
        r += &m;
    }
    if r >= (&m >> 1) {
        r -= &m;
    }
    r.to_i64().unwrap()
}

#[test]
fn narrowing_matches_modular_oracle() {
    for v in [-70000i128, -32769, -32768, 32767, 32768, 40000, 65535, 65536, 1 << 40] {
        let (w, over) = narrow(v, 16, OverflowPolicy::Wrap);
        assert_eq!(w, modular(v, 16));
        assert_eq!(over, v.abs() > 32767);
        let (s, _) = narrow(v, 16, OverflowPolicy::Saturate);
        assert_eq!(s, v.clamp(-32767, 32767) as i64);
    }
}

#[test]
fn loud_input_saturates_or_wraps() {
    let sp = spec(1, 8, 6, 8, 8);
    let model = sparse_relu_model(4, &sp, 0.0);
    let quiet = frames(&mut rng(1), 16, 8);
    let scales = calibrate_with_headroom(&model, &quiet);
    let ckpt = freeze(&model, &scales, &QuantRecipe::w8a16(1)).unwrap();

    // The input grid already saturates; go past it by feeding raw codes.
    let s_in = scales.act(ActSite::Input).unwrap().scale;
    let codes: Vec<i32> = quiet[0].iter().map(|v| (v * s_in * 6.0).round().min(32767.0) as i32).collect();

    let acc = ckpt.encoder.spmv_int(&codes).unwrap().out;
    let exact: Vec<i128> = acc.iter().map(|&a| ckpt.req_encoder.apply(a)).collect();
    assert!(exact.iter().any(|v| v.abs() > 32767), "instance does not overflow");

    let mut results = Vec::new();
    for policy in [OverflowPolicy::Saturate, OverflowPolicy::Wrap] {
        let mut state = ckpt.zero_state();
        let mut over = Default::default();
        let mut tally = ckpt.new_tally();
        let t = ckpt.step(&mut state, &codes, policy, &mut over, &mut tally).unwrap();
        results.push((t.encoder_out, over));
    }
    let (sat, sat_over) = &results[0];
    let (wrap, wrap_over) = &results[1];
    let mut inverted = 0;
    for ((&e, &s), &w) in exact.iter().zip(sat).zip(wrap) {
        assert_eq!(s as i128, e.clamp(-32767, 32767));
        assert_eq!(w as i64, modular(e, 16));
        if e > 32767 && e < 65536 && w < 0 {
            inverted += 1;
        }
    }
    assert!(inverted > 0 || exact.iter().all(|&e| e <= 32767));
    assert!(sat_over.total() > 0 && wrap_over.total() > 0);
}

#[test]
fn relu_precedes_narrowing() {
    let sp = spec(1, 8, 6, 8, 8);
    let mut model = sparse_relu_model(6, &sp, 0.0);
    let inputs = frames(&mut rng(2), 16, 8);
    let scales = calibrate_with_headroom(&model, &inputs);
    // Far below the calibrated range; ReLU must zero it under either policy.
    model.layers[0].norm_shift[0] = -40.0;
    let ckpt = freeze(&model, &scales, &QuantRecipe::w8a16(1)).unwrap();
    for policy in [OverflowPolicy::Saturate, OverflowPolicy::Wrap] {
        let run = ckpt.run(&inputs, policy).unwrap();
        assert!(run.taps.iter().all(|t| t.layers[0].pre_ssm[0] == 0));
        let site = ActSite::Layer(0, lrnn_core::sites::LayerSite::PreSsm);
        assert_eq!(run.overflows.activation.get(&site).copied().unwrap_or(0), 0);
    }
}
