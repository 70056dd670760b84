//! `profile`: one fall-through pass that records taps, the MAC counter and
//! per-frame compute time, then reports formula and instrumented MACs side
//! by side with storage and activation densities.

use std::path::Path;
use std::time::{Duration, Instant};

use lrnn_core::analysis::{
    effective_macs, DensitySet, fxp_memory, measured_densities, model_memory, with_event_weights, LatencyStats,
    Layout, MacTally, MemoryReport,
};
use lrnn_core::fxp::{OverflowPolicy, Overflows};
use lrnn_core::s5::{Execution, FrameTaps};
use lrnn_core::ModelSpec;

use crate::commands::{features, load_config, read_artifact, read_wave, stft, Artifact};
use crate::error::{CliError, CliResult};
use crate::report::{self, num};
use crate::ConfigArg;

struct Pass {
    spec: ModelSpec,
    taps: Vec<FrameTaps>,
    tally: MacTally,
    times: Vec<Duration>,
    memory: MemoryReport,
    overflows: u64,
}

fn float_pass(model: &lrnn_core::S5Model, feats: &[Vec<f64>], execution: Execution) -> CliResult<Pass> {
    let cm = model.compile(execution)?;
    let mut state = cm.zero_state();
    let mut tally = cm.new_tally();
    let mut taps = Vec::with_capacity(feats.len());
    let mut times = Vec::with_capacity(feats.len());
    for f in feats {
        let t0 = Instant::now();
        let t = cm.step(&mut state, f, &mut tally)?;
        times.push(t0.elapsed());
        taps.push(t);
    }
    Ok(Pass {
        spec: model.spec.clone(),
        taps,
        tally,
        times,
        memory: model_memory(model, Layout::Auto),
        overflows: 0,
    })
}

fn fxp_pass(ckpt: &lrnn_core::fxp::FxpCheckpoint, feats: &[Vec<f64>]) -> CliResult<Pass> {
    let mut state = ckpt.zero_state();
    let mut tally = ckpt.new_tally();
    let mut overflows = Overflows::default();
    let mut taps = Vec::with_capacity(feats.len());
    let mut times = Vec::with_capacity(feats.len());
    for f in feats {
        let t0 = Instant::now();
        let q = ckpt.quantize_input(f)?;
        let t = ckpt.step(&mut state, &q, OverflowPolicy::Saturate, &mut overflows, &mut tally)?;
        times.push(t0.elapsed());
        taps.push(t.dequantize(&ckpt.scales)?);
    }
    Ok(Pass {
        spec: ckpt.spec.clone(),
        taps,
        tally,
        times,
        memory: fxp_memory(ckpt, Layout::Auto),
        overflows: overflows.total(),
    })
}

/// Per-frame value times frame count, as an integer when it is one.
fn frame_total(per_frame: f64, frames: u64) -> Option<u64> {
    let v = per_frame * frames as f64;
    let r = v.round();
    ((v - r).abs() <= 1e-6 * r.max(1.0)).then_some(r as u64)
}

/// `dense` executes every weight and is only available for float models; its
/// formula densities are all one.
pub fn parse_execution(s: &str) -> CliResult<Execution> {
    match s {
        "event-driven" => Ok(Execution::EventDriven),
        "dense" => Ok(Execution::Dense),
        other => Err(CliError::config(format!("unknown execution `{other}`"))),
    }
}

pub fn run(input: &Path, wav: &Path, out: &Path, execution: &str, config: &ConfigArg) -> CliResult<()> {
    let execution = parse_execution(execution)?;
    let cfg = load_config(config)?;
    let stft = stft(&cfg)?;
    let feats = features(&stft, &read_wave(wav, &cfg)?.samples)?;
    let pass = match read_artifact(input)? {
        Artifact::Float(m) => float_pass(&m, &feats, execution)?,
        Artifact::Fxp(_) if execution == Execution::Dense => {
            return Err(CliError::config("integer checkpoints always run event-driven"));
        }
        Artifact::Fxp(c) => fxp_pass(&c, &feats)?,
    };
    let s = &pass.spec;
    let d = match execution {
        Execution::Dense => DensitySet::unit(s.depth),
        Execution::EventDriven => {
            let (d, stats) = measured_densities(&pass.taps)?;
            with_event_weights((s.n_input, s.n_model, s.n_ssm, s.n_output), &pass.tally, &stats, d)
        }
    };
    let formula = effective_macs(s, &d)?;
    let measured = pass.tally.per_frame();
    let frames = pass.tally.frames;
    let latency = LatencyStats::from_samples(&pass.times)
        .ok_or_else(|| CliError::data("no frames to time"))?;

    let mut all_agree = true;
    let mut rows = Vec::new();
    for (f, m) in formula.records.iter().zip(&measured.records) {
        let ft = frame_total(f.macs, frames);
        let mt = frame_total(m.macs, frames);
        let agree = ft.is_some() && ft == mt && f.component == m.component;
        all_agree &= agree;
        rows.push((f.component.to_string(), f.layer, f.macs, m.macs, ft, mt, agree));
    }
    let (ft, mt) = (frame_total(formula.total, frames), Some(pass.tally.total()));
    let total_agree = ft.is_some() && ft == mt;
    all_agree &= total_agree;

    let fp32 = 4 * s.parameter_count();
    let stored = pass.memory.total();

    report::write(out, "profile", |buf| {
        let mut w = report::writer(buf);
        w.write_record([
            "section", "item", "layer", "formula", "instrumented", "formula_total",
            "instrumented_total", "agree", "value", "unit",
        ])?;
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut value_row = |section: &str, item: &str, layer: String, value: String, unit: &str| {
            w.write_record([section, item, &layer, "", "", "", "", "", &value, unit])
        };
        value_row("run", "frames", String::new(), frames.to_string(), "frames")?;
        value_row("run", "overflows", String::new(), pass.overflows.to_string(), "events")?;
        for (name, v) in d.named() {
            let (layer, item) = match name.split_once('.') {
                Some((l, i)) => (l.trim_start_matches("layer").to_string(), i.to_string()),
                None => (String::new(), name),
            };
            value_row("density", &item, layer, num(v), "fraction")?;
        }
        for t in &pass.memory.tensors {
            let unit = if t.csr { "bytes_csr" } else { "bytes_dense" };
            value_row("memory", &t.name, String::new(), t.total().to_string(), unit)?;
        }
        value_row("memory", "total", String::new(), stored.to_string(), "bytes")?;
        value_row("memory", "fp32_dense_reference", String::new(), fp32.to_string(), "bytes")?;
        value_row("memory", "reduction", String::new(), num(fp32 as f64 / stored as f64), "x")?;
        value_row("latency", "mean", String::new(), num(latency.mean_ms), "ms")?;
        value_row("latency", "p50", String::new(), num(latency.p50_ms), "ms")?;
        value_row("latency", "p95", String::new(), num(latency.p95_ms), "ms")?;
        value_row("latency", "max", String::new(), num(latency.max_ms), "ms")?;
        value_row("latency", "budget", String::new(), num(latency.budget_ms), "ms")?;
        value_row("latency", "meets_budget", String::new(), latency.meets_budget().to_string(), "bool")?;
        drop(value_row);
        for (c, l, fv, mv, ft, mt, agree) in &rows {
            w.write_record([
                "macs",
                c,
                &l.map(|x| x.to_string()).unwrap_or_default(),
                &num(*fv),
                &num(*mv),
                &opt(*ft),
                &opt(*mt),
                &agree.to_string(),
                "",
                "macs_per_frame",
            ])?;
        }
        w.write_record([
            "macs",
            "total",
            "",
            &num(formula.total),
            &num(measured.total),
            &opt(ft),
            &opt(mt),
            &total_agree.to_string(),
            "",
            "macs_per_frame",
        ])?;
        w.flush()?;
        Ok(())
    })?;

    println!(
        "frames={frames} macs_per_frame={:.3} macs_agree={all_agree} memory_bytes={stored} \
         latency_p95_ms={:.4} budget_ms={:.1} meets_budget={}",
        formula.total,
        latency.p95_ms,
        latency.budget_ms,
        latency.meets_budget()
    );
    if !all_agree {
        return Err(CliError::numeric("formula and instrumented MAC counts disagree"));
    }
    Ok(())
}
