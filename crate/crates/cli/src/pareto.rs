//! `pareto`: builds, prunes, calibrates and freezes one integer model per
//! (width, sparsity) pair of the family, scores it on a synthetic suite and
//! appends the reference points. Tasks run on a bounded pool; each one is
//! seeded from the config alone, so the output does not depend on scheduling.

use std::path::Path;

use lrnn_core::analysis::{fxp_memory, si_snr, Layout};
use lrnn_core::audio::{denoise_stream, synth_mixture, FrameModel, FxpStream, Mixture, Mode, SpectralFloor, Stft};
use lrnn_core::compressor::prune_to;
use lrnn_core::fxp::{freeze, OverflowPolicy};
use lrnn_core::quant::calibrate;
use lrnn_core::s5::init_random;
use lrnn_core::ModelSpec;
use rayon::prelude::*;
use serde::Deserialize;

use crate::commands::{calibration_set, stft, synthetic_sequences};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::report::{self, num};

/// Evaluation mixtures use seeds disjoint from calibration.
const EVAL_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Deserialize)]
struct Reference {
    family: String,
    label: String,
    macs_per_frame: Option<f64>,
    si_snr_db: f64,
    memory_mb: Option<f64>,
}

struct Row {
    source: String,
    family: String,
    label: String,
    width: Option<f64>,
    sparsity: Option<f64>,
    params: Option<usize>,
    macs: Option<f64>,
    memory_bytes: Option<usize>,
    memory_mb: Option<f64>,
    si_snr_db: f64,
}

fn read_reference(path: &Path) -> CliResult<Vec<Reference>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .context(path.display())?;
    r.deserialize().collect::<Result<Vec<Reference>, _>>().context(path.display())
}

fn mean_si_snr(stft: &Stft, model: &mut dyn FrameModel, suite: &[Mixture], rate: u32) -> CliResult<f64> {
    let mut sum = 0.0;
    for m in suite {
        let d = denoise_stream(stft, model, &m.noisy, rate, Mode::FallThrough)?;
        sum += si_snr(&d.wave, &m.clean)?;
    }
    Ok(sum / suite.len() as f64)
}

fn evaluate(cfg: &RunConfig, stft: &Stft, suite: &[Mixture], k: f64, s: f64) -> CliResult<Row> {
    let spec = ModelSpec::with_width(k);
    let mut model = init_random(&spec, cfg.seed)?.relufy();
    if s > 0.0 {
        model = prune_to(&model, s)?.1.model;
    }
    let calib = synthetic_sequences(cfg, stft, cfg.calibration.sequences, cfg.seed)?;
    let recipe = cfg.recipe(spec.depth)?;
    let scales = calibrate(&model, &recipe, &calibration_set(calib, cfg.calibration.headroom))?;
    let ckpt = freeze(&model, &scales, &recipe)?;
    let mut stream = FxpStream::new(&ckpt, OverflowPolicy::Saturate);
    let si = mean_si_snr(stft, &mut stream, suite, cfg.stft.sample_rate)?;
    let tally = &stream.tally;
    let bytes = fxp_memory(&ckpt, Layout::Auto).total();
    let family = if s > 0.0 { "sparse" } else { "dense" };
    Ok(Row {
        source: "measured".into(),
        family: family.into(),
        label: format!("{family}-k{k}"),
        width: Some(k),
        sparsity: Some(s),
        params: Some(spec.parameter_count()),
        macs: Some(tally.total() as f64 / tally.frames.max(1) as f64),
        memory_bytes: Some(bytes),
        memory_mb: Some(bytes as f64 / 1e6),
        si_snr_db: si,
    })
}

fn baseline(source: &str, label: &str, si: f64) -> Row {
    Row {
        source: source.into(),
        family: "baseline".into(),
        label: label.into(),
        width: None,
        sparsity: None,
        params: None,
        macs: None,
        memory_bytes: None,
        memory_mb: None,
        si_snr_db: si,
    }
}

pub fn run(family: &Path, reference: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(family)?;
    let stft = stft(&cfg)?;
    let p = &cfg.pareto;
    let rate = cfg.stft.sample_rate;
    let refs = reference.map(read_reference).transpose()?;

    let suite: Vec<Mixture> = (0..p.mixtures as u64)
        .map(|i| synth_mixture(cfg.seed + EVAL_SEED_OFFSET + i, p.seconds, p.snr_db, rate))
        .collect();
    let tasks: Vec<(f64, f64)> = p
        .widths
        .iter()
        .flat_map(|&k| p.sparsities.iter().map(move |&s| (k, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::config(format!("worker pool: {e}")))?;
    let measured: Vec<Row> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(k, s)| evaluate(&cfg, &stft, &suite, k, s))
            .collect::<CliResult<Vec<_>>>()
    })?;

    let mut rows = Vec::new();
    let noisy = suite
        .iter()
        .map(|m| si_snr(&m.noisy, &m.clean))
        .sum::<lrnn_core::Result<f64>>()?
        / suite.len() as f64;
    rows.push(baseline("measured", "noisy-input", noisy));
    let mut floor = SpectralFloor::new(cfg.stft.bins());
    rows.push(baseline("measured", "spectral-floor", mean_si_snr(&stft, &mut floor, &suite, rate)?));
    rows.extend(measured);
    for r in refs.unwrap_or_default() {
        rows.push(Row {
            source: "paper".into(),
            family: r.family,
            label: r.label,
            width: None,
            sparsity: None,
            params: None,
            macs: r.macs_per_frame,
            memory_bytes: None,
            memory_mb: r.memory_mb,
            si_snr_db: r.si_snr_db,
        });
    }

    report::write(out, "pareto", |buf| {
        let mut w = report::writer(buf);
        w.write_record([
            "source", "family", "label", "width", "sparsity", "params", "macs_per_frame",
            "memory_bytes", "memory_mb", "si_snr_db",
        ])?;
        let f = |v: Option<f64>| v.map(num).unwrap_or_default();
        let u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &rows {
            w.write_record([
                r.source.clone(),
                r.family.clone(),
                r.label.clone(),
                f(r.width),
                f(r.sparsity),
                u(r.params),
                f(r.macs),
                u(r.memory_bytes),
                f(r.memory_mb),
                num(r.si_snr_db),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    println!("rows={}", rows.len());
    Ok(())
}
