use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ModelSpec, S5Layer, S5Model};
use crate::error::Result;
use crate::tensors::DenseMatrix;

const LAMBDA_MIN: f64 = 0.5;
const LAMBDA_MAX: f64 = 0.999;

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f32 {
    let z: f64 = StandardNormal.sample(rng);
    (z * std) as f32
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DenseMatrix<f32> {
    DenseMatrix::from_fn(rows, cols, |_, _| gaussian(rng, std))
}

/// Stable random initialization, deterministic in `seed`.
///
/// Eigenvalue moduli are log-uniform in `[0.5, 0.999)` with uniform phase;
/// projections are Gaussian with standard deviation `1/sqrt(fan_in)`.
pub fn init_random(spec: &ModelSpec, seed: u64) -> Result<S5Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (spec.n_model, spec.n_ssm);
    let fan = |f: usize| 1.0 / (f as f64).sqrt();

    let encoder = matrix(&mut rng, m, spec.n_input, fan(spec.n_input));
    let mut layers = Vec::with_capacity(spec.depth);
    for _ in 0..spec.depth {
        let (log_lo, log_hi) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
        let mut lambda_re = Vec::with_capacity(n);
        let mut lambda_im = Vec::with_capacity(n);
        for _ in 0..n {
            let modulus = rng.gen_range(log_lo..log_hi).exp();
            let phase = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            lambda_re.push((modulus * phase.cos()) as f32);
            lambda_im.push((modulus * phase.sin()) as f32);
        }
        let b_re = matrix(&mut rng, n, m, fan(2 * m));
        let b_im = matrix(&mut rng, n, m, fan(2 * m));
        let c_re = matrix(&mut rng, m, n, fan(2 * n));
        let c_im = matrix(&mut rng, m, n, fan(2 * n));
        let d = (0..m).map(|_| gaussian(&mut rng, 0.5)).collect();
        let glu = matrix(&mut rng, m, m, fan(m));
        let norm_scale = (0..m).map(|_| 1.0 + gaussian(&mut rng, 0.1)).collect();
        let norm_shift = (0..m).map(|_| gaussian(&mut rng, 0.1)).collect();
        layers.push(S5Layer {
            lambda_re,
            lambda_im,
            b_re,
            b_im,
            c_re,
            c_im,
            d,
            glu,
            norm_scale,
            norm_shift,
        });
    }
    let decoder = matrix(&mut rng, spec.n_output, m, fan(m));
    let decoder_bias = (0..spec.n_output).map(|_| gaussian(&mut rng, 0.1)).collect();

    let model = S5Model {
        spec: spec.clone(),
        encoder,
        layers,
        decoder,
        decoder_bias,
        masks: None,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let spec = ModelSpec::with_width(0.1);
        assert_eq!(init_random(&spec, 7).unwrap(), init_random(&spec, 7).unwrap());
        assert_ne!(init_random(&spec, 7).unwrap(), init_random(&spec, 8).unwrap());
    }

    #[test]
    fn eigenvalues_inside_unit_disk() {
        let model = init_random(&ModelSpec::base(), 1).unwrap();
        for layer in &model.layers {
            for (&r, &i) in layer.lambda_re.iter().zip(&layer.lambda_im) {
                let modulus = (r as f64).hypot(i as f64);
                assert!((0.49..0.999).contains(&modulus), "{modulus}");
            }
        }
    }
}
