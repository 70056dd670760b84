use crate::error::{Error, Result};

/// Upper bound reported for (numerically) perfect reconstructions.
pub const SI_SNR_CAP_DB: f64 = 60.0;
const CAP_EPS: f64 = 1e-12;

/// Scale-invariant signal-to-noise ratio in dB.
///
/// Both signals are made zero-mean, the estimate is projected onto the target
/// and the residual is treated as noise.
pub fn si_snr(estimate: &[f64], target: &[f64]) -> Result<f64> {
    if estimate.len() != target.len() {
        return Err(Error::Dimension(format!(
            "estimate has {} samples, target {}",
            estimate.len(),
            target.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::Empty("SI-SNR needs at least one sample".into()));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (me, mt) = (mean(estimate), mean(target));
    let est: Vec<f64> = estimate.iter().map(|v| v - me).collect();
    let tgt: Vec<f64> = target.iter().map(|v| v - mt).collect();

    let energy: f64 = tgt.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::ZeroTarget);
    }
    let dot: f64 = est.iter().zip(&tgt).map(|(a, b)| a * b).sum();
    let alpha = dot / energy;
    let (mut s_energy, mut e_energy) = (0.0, 0.0);
    for (e, t) in est.iter().zip(&tgt) {
        let s = alpha * t;
        s_energy += s * s;
        e_energy += (e - s) * (e - s);
    }
    if e_energy < CAP_EPS * s_energy {
        return Ok(SI_SNR_CAP_DB);
    }
    Ok((10.0 * (s_energy / e_energy).log10()).min(SI_SNR_CAP_DB))
}
