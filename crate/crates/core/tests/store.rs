mod common;

use std::path::PathBuf;

use common::*;
use lrnn_core::fxp::{freeze, OverflowPolicy};
use lrnn_core::quant::QuantRecipe;
use lrnn_core::s5::init_random;
use lrnn_core::store::{load, save, Entity, StoreError};
use lrnn_core::Error;
use rand::Rng;

fn random_entities(seed: u64) -> Vec<Entity> {
    let mut r = rng(seed);
    let sp = spec(r.gen_range(1..=3), r.gen_range(1..=20), r.gen_range(1..=24), r.gen_range(1..=24), r.gen_range(1..=20));
    let dense = init_random(&sp, seed).unwrap();
    let sparse = sparse_relu_model(seed, &sp, r.gen_range(0.1..0.95));
    let inputs = frames(&mut r, 6, sp.n_input);
    let scales = calibrate_with_headroom(&sparse, &inputs);
    let ckpt = freeze(&sparse, &scales, &QuantRecipe::w8a16(sp.depth)).unwrap();
    vec![
        Entity::Model(dense),
        Entity::Model(sparse),
        Entity::Scales(scales),
        Entity::Fxp(ckpt),
    ]
}

/// Bit-level equality of every float payload (NaN-safe, sign-of-zero aware).
fn same_bits(a: &Entity, b: &Entity) -> bool {
    save(a) == save(b) && a == b
}

#[test]
fn random_round_trips_are_bit_exact() {
    for seed in 0..25u64 {
        for e in random_entities(seed) {
            let bytes = save(&e);
            let back = load(&bytes).unwrap();
            assert!(same_bits(&e, &back), "seed {seed} kind {}", e.kind());
            assert_eq!(save(&back), bytes);
        }
    }
}

#[test]
fn fxp_round_trip_reproduces_inference() {
    let Entity::Fxp(ckpt) = random_entities(77).pop().unwrap() else { unreachable!() };
    let inputs = frames(&mut rng(1), 20, ckpt.spec.n_input);
    let Entity::Fxp(back) = load(&save(&Entity::Fxp(ckpt.clone()))).unwrap() else { panic!() };
    for p in [OverflowPolicy::Saturate, OverflowPolicy::Wrap] {
        assert_eq!(ckpt.run(&inputs, p).unwrap(), back.run(&inputs, p).unwrap());
    }
}

#[test]
fn corrupted_payload_names_the_tensor() {
    let e = random_entities(3).remove(0);
    let bytes = save(&e);
    // The last payload byte belongs to the last blob (padding is zero and
    // checked separately), so flip a byte just before the trailing padding.
    let mut bad = bytes.clone();
    let last_nonpad = bad.iter().rposition(|&b| b != 0).unwrap();
    bad[last_nonpad] ^= 0x5a;
    match load(&bad) {
        Err(Error::Store(StoreError::Crc { tensor })) => assert!(!tensor.is_empty()),
        other => panic!("expected CRC error, got {other:?}"),
    }
}

#[test]
fn dangling_entry_and_truncation_are_reported() {
    let e = Entity::Model(lrnn_core::S5Model::zeros(spec(1, 2, 2, 2, 2)));
    let bytes = save(&e);
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut manifest: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    manifest["tensors"][0]["blob"] = 9999.into();
    let json = serde_json::to_vec(&manifest).unwrap();
    let blobs_start = (16 + len).div_ceil(8) * 8;
    let mut bad = bytes[..8].to_vec();
    bad.extend((json.len() as u64).to_le_bytes());
    bad.extend(&json);
    while bad.len() % 8 != 0 {
        bad.push(0);
    }
    bad.extend(&bytes[blobs_start..]);
    assert!(matches!(load(&bad), Err(Error::Store(StoreError::Dangling { .. }))));
    assert!(matches!(
        load(&bytes[..bytes.len() - 9]),
        Err(Error::Store(StoreError::Malformed(_)))
    ));
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_fxp.srnn")
}

fn golden_entity() -> Entity {
    let sp = spec(2, 6, 5, 4, 6);
    let model = sparse_relu_model(2024, &sp, 0.5);
    let inputs = frames(&mut rng(2024), 8, 6);
    let scales = calibrate_with_headroom(&model, &inputs);
    Entity::Fxp(freeze(&model, &scales, &QuantRecipe::w8a16(2)).unwrap())
}

#[test]
fn golden_fixture_is_stable() {
    let path = golden_path();
    if std::env::var_os("LRNN_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, save(&golden_entity())).unwrap();
    }
    let bytes = std::fs::read(&path).expect("golden fixture present");
    assert_eq!(load(&bytes).unwrap(), golden_entity());
    assert_eq!(save(&golden_entity()), bytes);
}
