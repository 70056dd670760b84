//! Acceptance run: one PASS/FAIL line per criterion. Criterion 11 is a soft
//! target; its failure is reported but does not fail the run.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lrnn_core::analysis::{
    effective_macs, fxp_memory, measured_densities, model_memory, si_snr, with_event_weights,
    ActivityStats, DensitySet, Layout, MacTally,
};
use lrnn_core::audio::{
    denoise_stream, round_trip, synth_mixture, FloatStream, Mode, SpectralFloor, Stft, StftConfig, Wave,
};
use lrnn_core::compressor::{erk_allocate, prune_to, PrunableLayer, PruneSchedule};
use lrnn_core::fxp::{freeze, narrow, OverflowPolicy, SigmoidLut};
use lrnn_core::quant::{calibrate, qmax, static_quant_eval, QuantRecipe, QuantScale, ScaleSet};
use lrnn_core::s5::{init_random, Activation, Execution};
use lrnn_core::sites::{ActSite, Site};
use lrnn_core::store::{load, save, Entity, StoreError};
use lrnn_core::tensors::SparseMatrix;
use lrnn_core::{Error, ModelSpec, S5Model};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn spec(depth: usize, n_input: usize, n_model: usize, n_ssm: usize, n_output: usize) -> ModelSpec {
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

fn frames(r: &mut ChaCha8Rng, t: usize, n: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..n).map(|_| r.gen_range(0.0f64..1.0).powi(2) * 2.0).collect())
        .collect()
}

fn signed_frames(r: &mut ChaCha8Rng, t: usize, n: usize) -> Vec<Vec<f64>> {
    (0..t).map(|_| (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
}

fn sparse_relu_model(seed: u64, spec: &ModelSpec, sparsity: f64) -> S5Model {
    let model = init_random(spec, seed).unwrap().relufy();
    if sparsity > 0.0 {
        prune_to(&model, sparsity).unwrap().1.model
    } else {
        model
    }
}

fn calibrate_with_headroom(model: &S5Model, inputs: &[Vec<f64>]) -> ScaleSet {
    let loud: Vec<Vec<f64>> = inputs.iter().map(|f| f.iter().map(|v| v * 1.25).collect()).collect();
    calibrate(model, &QuantRecipe::w8a16(model.spec.depth), &[inputs.to_vec(), loud]).unwrap()
}

fn lrnn(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lrnn"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "lrnn {} exited {:?}: {}",
            args.first().unwrap_or(&""),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// `key=value` field of a one-line summary.
fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace().find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
}

fn write_mixture_wav(path: &Path, seed: u64, seconds: f64) {
    let m = synth_mixture(seed, seconds, 5.0, 16_000);
    Wave { sample_rate: 16_000, samples: m.noisy }.write(path).unwrap();
}

// 1
fn sparse_equals_dense() -> Check {
    let t0 = Instant::now();
    let mut int_products = 0usize;
    for case in 0..200u64 {
        let mut r = rng(case);
        let sp = if case % 25 == 0 {
            ModelSpec::base()
        } else {
            spec(
                r.gen_range(1..=3),
                r.gen_range(1..=257),
                r.gen_range(1..=192),
                r.gen_range(1..=256),
                r.gen_range(1..=257),
            )
        };
        let model = sparse_relu_model(case, &sp, r.gen_range(0.0..0.97));
        let inputs = frames(&mut r, 4, sp.n_input);
        let (dense, _) = model.compile(Execution::Dense).unwrap().run_steps(&inputs).unwrap();
        let (sparse, _) = model.compile(Execution::EventDriven).unwrap().run_steps(&inputs).unwrap();
        for (a, b) in dense.iter().zip(&sparse) {
            for (x, y) in a.output.iter().zip(&b.output) {
                ensure!((x - y).abs() <= 1e-6 * x.abs().max(1e-3), "case {case}: float {x} vs {y}");
            }
        }

        let scales = calibrate_with_headroom(&model, &inputs);
        let ckpt = freeze(&model, &scales, &QuantRecipe::w8a16(sp.depth)).unwrap();
        let run = ckpt.run(&inputs, OverflowPolicy::Saturate).unwrap();
        let check = |m: &SparseMatrix<i16>, x: &[i32]| -> Result<(), String> {
            let s = m.spmv_int(x).unwrap();
            let d = m.to_dense().matvec_int(x).unwrap();
            ensure!(s.out == d, "case {case}: integer CSR product differs from dense");
            Ok(())
        };
        for t in &run.taps {
            check(&ckpt.encoder, &t.input)?;
            for (l, lt) in t.layers.iter().enumerate() {
                check(&ckpt.layers[l].b, &lt.pre_ssm)?;
                check(&ckpt.layers[l].c, &lt.hidden)?;
                check(&ckpt.layers[l].glu, &lt.pre_glu)?;
            }
            check(&ckpt.decoder, &t.layers.last().unwrap().residual)?;
            int_products += 2 + 3 * t.layers.len();
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("200 triples, {int_products} integer products exact, {secs:.1} s"))
}

// 2
fn scan_equals_step() -> Check {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let mut r = rng(7000 + case);
        let n_io = r.gen_range(4..=32);
        let sp = spec(r.gen_range(1..=3), n_io, r.gen_range(4..=64), r.gen_range(4..=96), n_io);
        let cm = init_random(&sp, case).unwrap().compile(Execution::EventDriven).unwrap();
        let inputs = signed_frames(&mut r, 256, n_io);
        let (step, _) = cm.run_steps(&inputs).unwrap();
        for chunk in [1, 4, 16, 64] {
            let (scan, _) = cm.run_scan(&inputs, chunk).unwrap();
            for (a, b) in step.iter().zip(&scan) {
                for (x, y) in a.output.iter().zip(&b.output) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        if case % 10 == 0 {
            let run = |threads| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .unwrap()
                    .install(|| cm.run_scan(&inputs, 16).unwrap().0)
            };
            ensure!(run(1) == run(4), "case {case}: scan depends on worker count");
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(worst <= 1e-5, "max |diff| {worst:e}");
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("50 models, max |diff| {worst:.2e}, {secs:.1} s"))
}

// 3
fn pruning_targets(dir: &Path) -> Check {
    let cfg = dir.join("base.toml");
    std::fs::write(&cfg, "seed = 1\n").unwrap();
    let (m, mp, report) = (dir.join("m.srnn"), dir.join("mp.srnn"), dir.join("erk.csv"));
    lrnn(&["init", "--spec", p(&cfg), "--out", p(&m)])?;
    lrnn(&["prune", "--target", "0.9", "--in", p(&m), "--out", p(&mp), "--report", p(&report)])?;
    let text = std::fs::read_to_string(&report).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut global = None;
    let (mut params, mut nnz) = (0u64, 0u64);
    let mut trace = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        match &rec[0] {
            "layer" => {
                params += rec[4].parse::<u64>().unwrap();
                nnz += rec[8].parse::<u64>().unwrap();
            }
            "global" => global = Some(rec[7].parse::<f64>().unwrap()),
            "schedule" => trace += 1,
            _ => {}
        }
    }
    // Independent recount from the per-layer nonzero counts.
    let recount = 1.0 - nnz as f64 / params as f64;
    let g = global.ok_or("no global row")?;
    ensure!((recount - g).abs() < 1e-6, "global {g} vs recount {recount}");
    ensure!((0.895..=0.905).contains(&recount), "realized {recount}");
    ensure!(trace == 30, "{trace} schedule rows for 10 epochs");

    let layer = |id: &str, n| PrunableLayer { id: id.into(), rows: n, cols: n, planes: 1 };
    let a = erk_allocate(&[layer("small", 32), layer("large", 512)], 0.8).unwrap();
    let (s, l) = (a.get("small").unwrap().sparsity, a.get("large").unwrap().sparsity);
    ensure!(l > s, "larger layer sparsity {l} <= {s}");

    let sch = PruneSchedule::new(0.0, 0.9, 0, 100, 200).unwrap();
    ensure!(sch.sparsity(0.0).unwrap() == 0.0, "S(t_i)");
    ensure!(sch.sparsity(100.0).unwrap() == 0.9 && sch.sparsity(170.0).unwrap() == 0.9, "S(t >= t_f)");
    let mid = sch.sparsity(50.0).unwrap();
    ensure!((mid - 0.7875).abs() <= 1e-12, "midpoint {mid}");
    Ok(format!("realized {recount:.6}, ERK small {s:.3} < large {l:.3}, midpoint {mid}"))
}

// 4
fn quantizer_bounds() -> Check {
    let site = Site::Act(ActSite::Input);
    for bits in [4u8, 8, 12, 16] {
        let mut r = rng(bits as u64);
        let absmax = 3.7;
        let s = QuantScale::from_absmax(site, bits, absmax);
        let half = 0.5 / s.scale;
        for _ in 0..1_000_000 {
            let x = r.gen_range(-absmax..=absmax);
            ensure!(s.quantize(x).abs() <= qmax(bits), "{bits} bits: code out of range");
            let y = s.fake_quant(x);
            ensure!((y - x).abs() <= half * (1.0 + 1e-12), "{bits} bits: error above half step at {x}");
            ensure!(s.fake_quant(y).to_bits() == y.to_bits(), "{bits} bits: not idempotent at {x}");
        }
        ensure!(s.quantize(1e9) == qmax(bits) && s.quantize(-1e9) == -qmax(bits), "range not closed");
    }
    Ok("4/8/12/16 bits, 10^6 scalars each".into())
}

// 5
fn fxp_oracle() -> Check {
    let t0 = Instant::now();
    let mut worst_all = 0i64;
    for case in 0..20u64 {
        let mut r = rng(1000 + case);
        let depth = r.gen_range(1..=3);
        let sp = spec(depth, r.gen_range(4..=64), r.gen_range(8..=192), r.gen_range(8..=256), r.gen_range(4..=64));
        let model = sparse_relu_model(case, &sp, [0.0, 0.5, 0.9][case as usize % 3]);
        let inputs = frames(&mut r, 64, sp.n_input);
        let scales = calibrate_with_headroom(&model, &inputs);
        let ckpt = freeze(&model, &scales, &QuantRecipe::w8a16(depth)).unwrap();
        let run = ckpt.run(&inputs, OverflowPolicy::Saturate).unwrap();
        ensure!(run.overflows.total() == 0, "case {case} overflowed");
        let sim = static_quant_eval(&model, &scales, &inputs).unwrap();
        for site in ActSite::all(depth) {
            let s = scales.act(site).unwrap();
            for (f, i) in sim.iter().zip(&run.taps) {
                for (x, &q) in f.site(site).iter().zip(&i.site(site)) {
                    let d = ((x * s.scale).round() as i64 - q as i64).abs();
                    ensure!(d <= 2, "case {case} site {site}: {d} LSB");
                    worst_all = worst_all.max(d);
                }
            }
        }
    }
    let mut lut_worst = 0i64;
    for absmax in [0.01, 0.5, 3.0, 17.0, 250.0] {
        let s_in = 32767.0 / absmax;
        let lut = SigmoidLut::build(s_in, 32767, 32767.0).unwrap();
        for q in -32767..=32767 {
            let exact = (32767.0 / (1.0 + (-(q as f64) / s_in).exp())).round() as i64;
            lut_worst = lut_worst.max((lut.eval(q) as i64 - exact).abs());
        }
    }
    ensure!(lut_worst <= 2, "LUT error {lut_worst} LSB");
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 300.0, "took {secs:.1} s");
    Ok(format!("worst tap {worst_all} LSB, worst LUT {lut_worst} LSB, {secs:.1} s"))
}

/// Two's-complement reinterpretation with unbounded integers.
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

// 6
fn overflow_policies() -> Check {
    for v in [-70000i128, -32768, 32767, 32768, 40000, 65536, 1 << 40] {
        ensure!(narrow(v, 16, OverflowPolicy::Wrap).0 == modular(v, 16), "wrap of {v}");
        ensure!(narrow(v, 16, OverflowPolicy::Saturate).0 == v.clamp(-32767, 32767) as i64, "saturate of {v}");
    }
    let sp = spec(1, 8, 6, 8, 8);
    let model = sparse_relu_model(4, &sp, 0.0);
    let quiet = frames(&mut rng(1), 16, 8);
    let scales = calibrate_with_headroom(&model, &quiet);
    let ckpt = freeze(&model, &scales, &QuantRecipe::w8a16(1)).unwrap();
    let s_in = scales.act(ActSite::Input).unwrap().scale;
    let codes: Vec<i32> = quiet[0].iter().map(|v| (v * s_in * 6.0).round().min(32767.0) as i32).collect();
    let acc = ckpt.encoder.spmv_int(&codes).unwrap().out;
    let exact: Vec<i128> = acc.iter().map(|&a| ckpt.req_encoder.apply(a)).collect();
    ensure!(exact.iter().any(|v| v.abs() > 32767), "crafted instance does not overflow");
    let mut outs = Vec::new();
    for policy in [OverflowPolicy::Saturate, OverflowPolicy::Wrap] {
        let (mut state, mut over, mut tally) = (ckpt.zero_state(), Default::default(), ckpt.new_tally());
        outs.push(ckpt.step(&mut state, &codes, policy, &mut over, &mut tally).unwrap().encoder_out);
    }
    let mut inverted = 0;
    for ((&e, &s), &w) in exact.iter().zip(&outs[0]).zip(&outs[1]) {
        ensure!(s as i128 == e.clamp(-32767, 32767), "saturate mismatch at {e}");
        ensure!(w as i64 == modular(e, 16), "wrap mismatch at {e}");
        if e > 32767 && w < 0 {
            inverted += 1;
        }
    }
    ensure!(inverted > 0, "no sign inversion observed");
    Ok(format!("{inverted} channels sign-inverted under wrap, saturated at qmax otherwise"))
}

fn q(n: u64) -> BigRational {
    BigRational::from_integer(n.into())
}

fn ratio(a: u64, b: u64) -> BigRational {
    if b == 0 {
        BigRational::zero()
    } else {
        BigRational::new(a.into(), b.into())
    }
}

/// The per-frame cost formulas in exact rational arithmetic.
fn exact_formula(sp: &ModelSpec, tally: &MacTally, stats: &ActivityStats) -> BigRational {
    let (m, n, n_in, n_out) = (sp.n_model as u64, sp.n_ssm as u64, sp.n_input as u64, sp.n_output as u64);
    let f = tally.frames;
    let mut total =
        q(n_in * m) * ratio(tally.encoder, m * stats.input.nonzero) * ratio(stats.input.nonzero, n_in * f);
    for (lm, la) in tally.layers.iter().zip(&stats.layers) {
        let b_exec = lm.s5_hidden - 4 * n * f;
        let c_exec = lm.s5_output - la.pre_ssm.nonzero;
        let g_exec = lm.glu - m * f;
        total += q(m);
        total += q(2 * m * n) * ratio(b_exec, 2 * n * la.pre_ssm.nonzero) * ratio(la.pre_ssm.nonzero, m * f)
            + q(4 * n);
        total += q(2 * n * m) * ratio(c_exec, m * la.hidden.nonzero) * ratio(la.hidden.nonzero, 2 * n * f)
            + q(m) * ratio(la.pre_ssm.nonzero, m * f);
        total += q(m * m) * ratio(g_exec, m * la.pre_glu.nonzero) * ratio(la.pre_glu.nonzero, m * f) + q(m);
    }
    total + q(m * n_out) * ratio(tally.head, n_out * stats.pre_head.nonzero) * ratio(stats.pre_head.nonzero, m * f)
}

// 7
fn mac_accounting(dir: &Path) -> Check {
    for (c, sparsity) in [(0u64, 0.0), (1, 0.6), (2, 0.95)] {
        for k in 0..3u64 {
            let case = c * 3 + k;
            let mut r = rng(300 + case);
            let sp = spec(1 + k as usize, 20, 16 + case as usize * 4, 24, 12);
            let model = sparse_relu_model(case, &sp, sparsity);
            let cm = model.compile(Execution::EventDriven).unwrap();
            let (taps, tally) = cm.run_steps(&frames(&mut r, 32, 20)).unwrap();
            let (d, stats) = measured_densities(&taps).unwrap();
            let d = with_event_weights((20, sp.n_model, sp.n_ssm, 12), &tally, &stats, d);
            let exact = exact_formula(&sp, &tally, &stats);
            ensure!(exact == ratio(tally.total(), tally.frames), "case {case}: exact formula != counter");
            let float = effective_macs(&sp, &d).unwrap().total;
            let counter = tally.total() as f64 / tally.frames as f64;
            ensure!((float - counter).abs() <= 1e-9 * counter, "case {case}: {float} vs {counter}");
        }
    }
    let unit = effective_macs(&ModelSpec::base(), &DensitySet::unit(3)).unwrap().total;
    ensure!(unit == 803_904.0, "unit formula {unit}");

    let (cfg, m, wav, out) = (dir.join("base.toml"), dir.join("m7.srnn"), dir.join("x7.wav"), dir.join("p7.csv"));
    std::fs::write(&cfg, "seed = 1\n").unwrap();
    write_mixture_wav(&wav, 70, 0.5);
    lrnn(&["init", "--spec", p(&cfg), "--out", p(&m)])?;
    let line = lrnn(&["profile", "--in", p(&m), "--wav", p(&wav), "--out", p(&out), "--execution", "dense"])?;
    let text = std::fs::read_to_string(&out).unwrap();
    let total = text.lines().find(|l| l.starts_with("macs,total,")).ok_or("no total row")?;
    let cols: Vec<&str> = total.split(',').collect();
    ensure!(cols[3] == "803904.000000" && cols[4] == "803904.000000", "profile total row {total}");
    ensure!(cols[7] == "true" && field(&line, "macs_agree") == Some("true"), "columns disagree");
    Ok("9 configs exact in rational arithmetic; base unit density 803904 in both profile columns".into())
}

// 8
fn memory_ratio() -> Check {
    let sp = ModelSpec::base();
    let float0 = model_memory(&S5Model::zeros(sp.clone()), Layout::Dense).total();
    ensure!(float0 == 4 * 802_625, "float base {float0} bytes");
    let model = sparse_relu_model(11, &sp, 0.0);
    let scales = calibrate_with_headroom(&model, &frames(&mut rng(2), 8, 257));
    let ckpt = freeze(&model, &scales, &QuantRecipe::w8a16(3)).unwrap();
    let float = model_memory(&model, Layout::Dense).total() as f64;
    let fxp = fxp_memory(&ckpt, Layout::Dense).total() as f64;
    let r = float / fxp;
    ensure!((3.5..=4.0).contains(&r), "ratio {r}");
    Ok(format!("{float} B -> {fxp} B, {r:.3}x"))
}

// 9
fn audio_and_metric() -> Check {
    let st = Stft::new(StftConfig::default()).unwrap();
    let mut r = rng(0);
    let wave: Vec<f64> = (0..16_000).map(|_| r.gen_range(-1.0..1.0)).collect();
    let out = round_trip(&st, &wave).unwrap();
    let (lo, hi) = (512, 16_000 - 512);
    let err: f64 = (lo..hi).map(|i| (out[i] - wave[i]).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = (lo..hi).map(|i| wave[i].powi(2)).sum::<f64>().sqrt();
    ensure!(err / norm <= 1e-4, "round trip {:e}", err / norm);

    let n = 16_000;
    let s: Vec<f64> = (0..n).map(|i| (2.0 * PI * 440.0 * i as f64 / 16_000.0).sin()).collect();
    let e: Vec<f64> = (0..n).map(|i| (2.0 * PI * 1000.0 * i as f64 / 16_000.0).sin()).collect();
    let est: Vec<f64> = s.iter().zip(&e).map(|(a, b)| a + 0.1 * b).collect();
    let v = si_snr(&est, &s).unwrap();
    ensure!((v - 20.0).abs() <= 0.01, "orthogonal case {v}");
    let scaled: Vec<f64> = est.iter().map(|x| x * 37.5).collect();
    let dv = (si_snr(&scaled, &s).unwrap() - v).abs();
    ensure!(dv <= 1e-9, "scale changed SI-SNR by {dv:e}");
    ensure!(matches!(si_snr(&est, &vec![0.0; n]), Err(Error::ZeroTarget)), "zero target accepted");
    Ok(format!("round trip {:.1e}, orthogonal {v:.4} dB, scale drift {dv:.1e}", err / norm))
}

// 10
fn end_to_end() -> Check {
    let t0 = Instant::now();
    let st = Stft::new(StftConfig::default()).unwrap();
    let identity = S5Model::constant_output(spec(1, 257, 8, 8, 257), 1.0)
        .compile(Execution::EventDriven)
        .unwrap();
    let (mut worst_identity, mut gains) = (0.0f64, Vec::new());
    for seed in 0..10u64 {
        let m = synth_mixture(100 + seed, 3.0, 5.0, 16_000);
        let input = si_snr(&m.noisy, &m.clean).unwrap();
        ensure!((input - 5.0).abs() <= 0.5, "mixture {seed} at {input} dB");
        let rt = si_snr(&round_trip(&st, &m.noisy).unwrap(), &m.clean).unwrap();
        let id = denoise_stream(&st, &mut FloatStream::new(&identity), &m.noisy, 16_000, Mode::FallThrough).unwrap();
        worst_identity = worst_identity.max((si_snr(&id.wave, &m.clean).unwrap() - rt).abs());
        let mut floor = SpectralFloor::new(257);
        let b = denoise_stream(&st, &mut floor, &m.noisy, 16_000, Mode::FallThrough).unwrap();
        gains.push(si_snr(&b.wave, &m.clean).unwrap() - rt);
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let secs = t0.elapsed().as_secs_f64();
    ensure!(worst_identity <= 0.1, "identity mask moved SI-SNR by {worst_identity}");
    ensure!(mean >= 1.0, "baseline mean gain {mean:.3} dB");
    ensure!(secs < 120.0, "took {secs:.1} s");
    Ok(format!("identity drift {worst_identity:.1e} dB, spectral floor +{mean:.2} dB mean, {secs:.1} s"))
}

// 11 (soft)
fn realtime_budget(dir: &Path) -> Check {
    let cfg = dir.join("rt.toml");
    std::fs::write(&cfg, "seed = 5\n\n[calibration]\nsequences = 4\nseconds = 1.0\n").unwrap();
    let f = |n: &str| dir.join(n);
    let (m, r, sp, sc, fx, wav, out) =
        (f("rt.srnn"), f("rt_r.srnn"), f("rt_p.srnn"), f("rt_s.srnn"), f("rt_f.srnn"), f("rt.wav"), f("rt.csv"));
    write_mixture_wav(&wav, 11, 3.0);
    lrnn(&["init", "--spec", p(&cfg), "--out", p(&m)])?;
    lrnn(&["surgery", "--relufy", "--in", p(&m), "--out", p(&r)])?;
    lrnn(&["prune", "--target", "0.9", "--in", p(&r), "--out", p(&sp)])?;
    lrnn(&["calibrate", "--in", p(&sp), "--synthetic", "4", "--out", p(&sc), "--config", p(&cfg)])?;
    lrnn(&["quantize", "--in", p(&sp), "--scales", p(&sc), "--out", p(&fx)])?;
    let line = lrnn(&["profile", "--in", p(&fx), "--wav", p(&wav), "--out", p(&out)])?;
    let text = std::fs::read_to_string(&out).unwrap();
    ensure!(text.contains("latency,p95,") && text.contains("latency,budget,"), "latency rows missing");
    let p95: f64 = field(&line, "latency_p95_ms").ok_or("no latency")?.parse().unwrap();
    ensure!(p95 > 0.0, "latency not measured");
    let meets = field(&line, "meets_budget") == Some("true");
    ensure!(meets, "k=1 sparse FXP p95 {p95:.3} ms exceeds 8 ms");
    Ok(format!("k=1 sparse FXP p95 {p95:.3} ms per frame vs 8 ms budget"))
}

fn random_entities(seed: u64) -> Vec<Entity> {
    let mut r = rng(seed);
    let sp = spec(r.gen_range(1..=3), r.gen_range(1..=20), r.gen_range(1..=24), r.gen_range(1..=24), r.gen_range(1..=20));
    let dense = init_random(&sp, seed).unwrap();
    let sparse = sparse_relu_model(seed, &sp, r.gen_range(0.1..0.95));
    let scales = calibrate_with_headroom(&sparse, &frames(&mut r, 6, sp.n_input));
    let ckpt = freeze(&sparse, &scales, &QuantRecipe::w8a16(sp.depth)).unwrap();
    vec![Entity::Model(dense), Entity::Model(sparse), Entity::Scales(scales), Entity::Fxp(ckpt)]
}

/// Points blob 0's manifest reference at a blob that does not exist.
fn with_dangling_reference(bytes: &[u8]) -> Vec<u8> {
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
    let json = json.replacen("\"blob\":0", "\"blob\":9999", 1);
    let mut out = bytes[..8].to_vec();
    out.extend((json.len() as u64).to_le_bytes());
    out.extend(json.as_bytes());
    while out.len() % 8 != 0 {
        out.push(0);
    }
    out.extend(&bytes[(16 + len).div_ceil(8) * 8..]);
    out
}

// 12
fn persistence() -> Check {
    let mut trips = 0;
    for seed in 0..25u64 {
        for e in random_entities(seed) {
            let bytes = save(&e);
            let back = load(&bytes).map_err(|err| format!("seed {seed} {}: {err}", e.kind()))?;
            ensure!(back == e && save(&back) == bytes, "seed {seed} {} not bit-exact", e.kind());
            trips += 1;
        }
    }
    let bytes = save(&random_entities(3).remove(0));
    let mut bad = bytes.clone();
    let i = bad.iter().rposition(|&b| b != 0).unwrap();
    bad[i] ^= 0x5a;
    ensure!(matches!(load(&bad), Err(Error::Store(StoreError::Crc { .. }))), "no CRC error");
    ensure!(
        matches!(load(&with_dangling_reference(&bytes)), Err(Error::Store(StoreError::Dangling { .. }))),
        "no dangling-entry error"
    );
    let mut magic = bytes.clone();
    magic[0] = b'X';
    ensure!(matches!(load(&magic), Err(Error::Store(StoreError::BadMagic))), "no bad-magic error");
    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&99u32.to_le_bytes());
    ensure!(
        matches!(load(&version), Err(Error::Store(StoreError::VersionTooNew { .. }))),
        "no version error"
    );
    ensure!(
        matches!(load(&bytes[..bytes.len() - 9]), Err(Error::Store(StoreError::Malformed(_)))),
        "truncation not reported"
    );
    Ok(format!("{trips} round trips bit-exact; CRC, dangling, magic, version and truncation faults named"))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let d = dir.path();
    let criteria: Vec<(u32, &str, bool, Box<dyn Fn() -> Check + '_>)> = vec![
        (1, "sparse equals dense execution", false, Box::new(sparse_equals_dense)),
        (2, "scan equals step", false, Box::new(scan_equals_step)),
        (3, "pruning targets", false, Box::new(|| pruning_targets(d))),
        (4, "quantizer bounds", false, Box::new(quantizer_bounds)),
        (5, "integer runtime matches oracle", false, Box::new(fxp_oracle)),
        (6, "overflow policies", false, Box::new(overflow_policies)),
        (7, "MAC accounting", false, Box::new(|| mac_accounting(d))),
        (8, "memory compression", false, Box::new(memory_ratio)),
        (9, "audio round trip and metric", false, Box::new(audio_and_metric)),
        (10, "end-to-end denoising sanity", false, Box::new(end_to_end)),
        (11, "real-time budget (soft)", true, Box::new(|| realtime_budget(d))),
        (12, "persistence", false, Box::new(persistence)),
    ];
    let mut hard_failures = 0;
    for (n, name, soft, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(|| check()))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        match outcome {
            Ok(detail) => println!("AC{n:<2} PASS  {name}: {detail}"),
            Err(why) => {
                println!("AC{n:<2} FAIL  {name}: {why}{}", if *soft { " (soft target, not fatal)" } else { "" });
                if !soft {
                    hard_failures += 1;
                }
            }
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} criteria failed");
        std::process::exit(1);
    }
}
