use std::path::{Path, PathBuf};

use lrnn_core::analysis::mismatch_report;
use lrnn_core::audio::{denoise_stream, synth_mixture, FloatStream, FrameModel, FxpStream, Mode, Stft, Wave};
use lrnn_core::compressor::{prune_to, PruneSchedule};
use lrnn_core::fxp::{freeze, FxpCheckpoint, OverflowPolicy};
use lrnn_core::quant::calibrate as calibrate_scales;
use lrnn_core::s5::{init_random, Execution};
use lrnn_core::store::{self, Entity};
use lrnn_core::S5Model;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::report::{self, num};
use crate::ConfigArg;

pub fn load_config(arg: &ConfigArg) -> CliResult<RunConfig> {
    RunConfig::load_or_default(arg.config.as_deref())
}

pub fn stft(cfg: &RunConfig) -> CliResult<Stft> {
    Stft::new(cfg.stft.clone()).map_err(|e| CliError::config(format!("stft: {e}")))
}

/// Magnitude frames of a waveform.
pub fn features(stft: &Stft, samples: &[f64]) -> CliResult<Vec<Vec<f64>>> {
    Ok(stft.stft(samples)?.iter().map(|f| f.magnitude()).collect())
}

pub fn read_wave(path: &Path, cfg: &RunConfig) -> CliResult<Wave> {
    Wave::read(path, cfg.stft.sample_rate).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub enum Artifact {
    Float(S5Model),
    Fxp(FxpCheckpoint),
}

pub fn read_artifact(path: &Path) -> CliResult<Artifact> {
    match store::read_file(path).context(path.display())? {
        Entity::Model(m) => Ok(Artifact::Float(m)),
        Entity::Fxp(c) => Ok(Artifact::Fxp(c)),
        Entity::Scales(_) => Err(CliError::data(format!(
            "{}: holds scales, expected a model or an integer checkpoint",
            path.display()
        ))),
    }
}

fn read_model(path: &Path) -> CliResult<S5Model> {
    store::read_model(path).context(path.display())
}

fn write_entity(path: &Path, entity: &Entity) -> CliResult<()> {
    store::write_file(path, entity).context(path.display())
}

pub fn init(spec_path: &Path, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(spec_path)?;
    let spec = cfg.model_spec()?;
    let model = init_random(&spec, seed.unwrap_or(cfg.seed))?;
    write_entity(out, &Entity::Model(model))?;
    println!("params={}", spec.parameter_count());
    Ok(())
}

pub fn surgery(relufy: bool, input: &Path, out: &Path) -> CliResult<()> {
    if !relufy {
        return Err(CliError::config("no surgery requested; pass --relufy"));
    }
    let model = read_model(input)?;
    write_entity(out, &Entity::Model(model.relufy()))
}

pub struct PruneArgs {
    pub target: Option<f64>,
    pub input: PathBuf,
    pub out: PathBuf,
    pub report: Option<PathBuf>,
    pub epochs: Option<u64>,
    pub steps_per_epoch: Option<u64>,
}

/// One-shot masking at the final sparsity. The schedule trace records the
/// sparsity a training loop would apply at each mask update.
pub fn prune(args: PruneArgs, config: &ConfigArg) -> CliResult<()> {
    let mut cfg = load_config(config)?;
    if let Some(t) = args.target {
        cfg.prune.target = t;
    }
    if let Some(e) = args.epochs {
        cfg.prune.epochs = e;
    }
    if let Some(s) = args.steps_per_epoch {
        cfg.prune.steps_per_epoch = s;
    }
    cfg.validate()?;
    let p = &cfg.prune;
    let schedule = PruneSchedule::standard(p.initial, p.target, p.epochs * p.steps_per_epoch)
        .map_err(|e| CliError::config(e.to_string()))?;
    let trace = schedule.trace(p.epochs)?;

    let model = read_model(&args.input)?;
    let (alloc, outcome) = prune_to(&model, p.target)?;
    let global = outcome.global_sparsity();
    write_entity(&args.out, &Entity::Model(outcome.model.clone()))?;

    if let Some(path) = &args.report {
        report::write(path, "prune", |buf| {
            let mut w = report::writer(buf);
            w.write_record([
                "section", "layer", "rows", "cols", "params", "erk_score", "target_sparsity",
                "realized_sparsity", "nnz", "epoch", "update", "step", "scheduled_sparsity",
            ])?;
            let blank = String::new;
            for (r, a) in outcome.records.iter().zip(&alloc.records) {
                w.write_record([
                    "layer".into(),
                    r.layer.clone(),
                    r.rows.to_string(),
                    r.cols.to_string(),
                    r.params.to_string(),
                    num(a.score),
                    num(r.target),
                    num(r.realized),
                    r.nnz.to_string(),
                    blank(),
                    blank(),
                    blank(),
                    blank(),
                ])?;
            }
            let params: usize = outcome.records.iter().map(|r| r.params).sum();
            let nnz: usize = outcome.records.iter().map(|r| r.nnz).sum();
            w.write_record([
                "global".into(),
                "all".into(),
                blank(),
                blank(),
                params.to_string(),
                blank(),
                num(p.target),
                num(global),
                nnz.to_string(),
                blank(),
                blank(),
                blank(),
                blank(),
            ])?;
            for t in &trace {
                let mut row = vec![String::new(); 13];
                row[0] = "schedule".into();
                row[9] = t.epoch.to_string();
                row[10] = t.update.to_string();
                row[11] = t.step.to_string();
                row[12] = num(t.sparsity);
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    println!("global_sparsity={global:.6}");
    Ok(())
}

/// Calibration sequences: each source once at unit gain and once at the
/// configured headroom gain.
pub fn calibration_set(frames: Vec<Vec<Vec<f64>>>, headroom: f64) -> Vec<Vec<Vec<f64>>> {
    let mut out = frames.clone();
    if headroom > 1.0 {
        out.extend(
            frames
                .into_iter()
                .map(|seq| seq.into_iter().map(|f| f.into_iter().map(|v| v * headroom).collect()).collect()),
        );
    }
    out
}

pub fn synthetic_sequences(cfg: &RunConfig, stft: &Stft, count: usize, seed: u64) -> CliResult<Vec<Vec<Vec<f64>>>> {
    let c = &cfg.calibration;
    (0..count as u64)
        .map(|i| {
            let mix = synth_mixture(seed.wrapping_add(i), c.seconds, c.snr_db, cfg.stft.sample_rate);
            features(stft, &mix.noisy)
        })
        .collect()
}

fn audio_sequences(cfg: &RunConfig, stft: &Stft, dir: &Path) -> CliResult<Vec<Vec<Vec<f64>>>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .context(dir.display())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!("{}: no .wav files", dir.display())));
    }
    files
        .iter()
        .map(|p| features(stft, &read_wave(p, cfg)?.samples).context(p.display()))
        .collect()
}

pub fn calibrate(
    input: &Path,
    audio: Option<PathBuf>,
    synthetic: Option<usize>,
    out: &Path,
    csv: Option<&Path>,
    config: &ConfigArg,
) -> CliResult<()> {
    let cfg = load_config(config)?;
    let stft = stft(&cfg)?;
    let model = read_model(input)?;
    let seqs = match (audio.or(cfg.paths.audio.clone()), synthetic) {
        (_, Some(n)) if n > 0 => synthetic_sequences(&cfg, &stft, n, cfg.seed)?,
        (_, Some(_)) => return Err(CliError::config("--synthetic needs a positive count")),
        (Some(dir), None) => audio_sequences(&cfg, &stft, &dir)?,
        (None, None) => synthetic_sequences(&cfg, &stft, cfg.calibration.sequences, cfg.seed)?,
    };
    let recipe = cfg.recipe(model.spec.depth)?;
    let scales = calibrate_scales(&model, &recipe, &calibration_set(seqs, cfg.calibration.headroom))?;
    if let Some(path) = csv {
        report::write(path, "scales", |buf| Ok(scales.write_csv(buf)?))?;
    }
    write_entity(out, &Entity::Scales(scales))
}

pub fn quantize(input: &Path, scales: &Path, out: &Path, config: &ConfigArg) -> CliResult<()> {
    let cfg = load_config(config)?;
    let model = read_model(input)?;
    let scales = store::read_scales(scales).context(scales.display())?;
    let recipe = cfg.recipe(model.spec.depth)?;
    let ckpt = freeze(&model, &scales, &recipe)?;
    write_entity(out, &Entity::Fxp(ckpt))
}

pub fn denoise(input: &Path, wav: &Path, out: &Path, mode: &str, policy: &str, config: &ConfigArg) -> CliResult<()> {
    let cfg = load_config(config)?;
    let mode: Mode = mode.parse().map_err(|e: lrnn_core::Error| CliError::config(e.to_string()))?;
    let policy: OverflowPolicy = policy
        .parse()
        .map_err(|e: lrnn_core::Error| CliError::config(e.to_string()))?;
    let stft = stft(&cfg)?;
    let wave = read_wave(wav, &cfg)?;
    let (denoised, overflows) = match read_artifact(input)? {
        Artifact::Float(model) => {
            let cm = model.compile(Execution::EventDriven)?;
            let mut s = FloatStream::new(&cm);
            (run_stream(&stft, &mut s, &wave, mode)?, 0)
        }
        Artifact::Fxp(ckpt) => {
            let mut s = FxpStream::new(&ckpt, policy);
            let d = run_stream(&stft, &mut s, &wave, mode)?;
            (d, s.overflows.total())
        }
    };
    Wave { sample_rate: wave.sample_rate, samples: denoised }
        .write(out)
        .context(out.display())?;
    println!("frames={} overflows={overflows}", stft.frame_count(wave.samples.len()));
    Ok(())
}

fn run_stream(stft: &Stft, model: &mut dyn FrameModel, wave: &Wave, mode: Mode) -> CliResult<Vec<f64>> {
    Ok(denoise_stream(stft, model, &wave.samples, wave.sample_rate, mode)?.wave)
}

pub fn compare(float: &Path, fxp: &Path, wav: &Path, out: &Path, config: &ConfigArg) -> CliResult<()> {
    let cfg = load_config(config)?;
    let stft = stft(&cfg)?;
    let model = read_model(float)?;
    let ckpt = store::read_fxp(fxp).context(fxp.display())?;
    if model.spec.n_model != ckpt.spec.n_model || model.spec.depth != ckpt.spec.depth {
        return Err(CliError::data("float model and checkpoint have different shapes"));
    }
    let feats = features(&stft, &read_wave(wav, &cfg)?.samples)?;
    let (float_taps, _) = model.compile(Execution::EventDriven)?.run_steps(&feats)?;
    let run = ckpt.run(&feats, OverflowPolicy::Saturate)?;
    let rep = mismatch_report(&float_taps, &run.taps, &ckpt.scales)?;
    report::write(out, "mismatch", |buf| Ok(rep.write_csv(buf)?))?;
    println!("frames={} overflows={}", feats.len(), run.overflows.total());
    Ok(())
}
