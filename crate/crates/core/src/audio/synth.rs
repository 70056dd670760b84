use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Synthetic noisy/clean pair. `noisy = clean + noise` sample by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Speech-like clean signal: 3 to 8 harmonic tones, each with a slowly
/// gliding pitch and syllable-rate bursts separated by pauses.
fn clean_signal(rng: &mut ChaCha8Rng, n: usize, sample_rate: f64) -> Vec<f64> {
    let mut clean = vec![0.0; n];
    let tones = rng.gen_range(3..=8);
    for _ in 0..tones {
        let f0 = rng.gen_range(90.0..320.0);
        let glide = rng.gen_range(-0.15..0.15);
        let harmonics = rng.gen_range(2..=6);
        let rolloff = rng.gen_range(0.5..0.85);
        let rate = rng.gen_range(1.5..4.0);
        let env_phase = rng.gen_range(0.0..2.0 * PI);
        let gain = rng.gen_range(0.3..1.0);
        let mut phase = vec![0.0; harmonics];
        for h in phase.iter_mut() {
            *h = rng.gen_range(0.0..2.0 * PI);
        }
        let mut theta = 0.0;
        for (i, c) in clean.iter_mut().enumerate() {
            let t = i as f64 / sample_rate;
            let f = f0 * (1.0 + glide * (2.0 * PI * 0.3 * t).sin());
            theta += 2.0 * PI * f / sample_rate;
            // Syllable-like bursts separated by pauses.
            let env = (2.0 * PI * rate * t + env_phase).sin().max(0.0).powi(2);
            let mut v = 0.0;
            let mut a = 1.0;
            for (h, p) in phase.iter().enumerate() {
                let fh = f * (h + 1) as f64;
                if fh < 0.45 * sample_rate {
                    v += a * (theta * (h + 1) as f64 + p).sin();
                }
                a *= rolloff;
            }
            *c += gain * env * v;
        }
    }
    let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        clean.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    clean
}

/// Deterministic mixture at exactly `snr_db` (energy ratio of clean to
/// noise). Noise is white Gaussian noise through a random one-pole filter.
pub fn synth_mixture(seed: u64, seconds: f64, snr_db: f64, sample_rate: u32) -> Mixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sample_rate as f64).round().max(0.0) as usize;
    let clean = clean_signal(&mut rng, n, sample_rate as f64);

    let pole: f64 = rng.gen_range(0.0..0.9);
    let mut prev = 0.0;
    let mut noise: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            prev = pole * prev + w;
            prev
        })
        .collect();

    let (ec, en) = (energy(&clean), energy(&noise));
    if en > 0.0 && ec > 0.0 {
        let g = (ec / en / 10f64.powf(snr_db / 10.0)).sqrt();
        noise.iter_mut().for_each(|v| *v *= g);
    }
    let noisy = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
    Mixture { noisy, clean, noise }
}
