use rayon::prelude::*;

use super::exec::{compose, BlockInput, CompiledModel, FrameTaps, ModelState, NoHook};
use crate::analysis::{LayerMacs, MacTally};
use crate::error::{Error, Result};
use crate::tensors::ComplexVector;

/// Affine map `x -> a x + b` applied channel-wise to a complex vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanElement {
    pub a: ComplexVector,
    pub b: ComplexVector,
}

impl ScanElement {
    pub fn identity(n: usize) -> Self {
        Self {
            a: ComplexVector::new(vec![1.0; n], vec![0.0; n]).unwrap(),
            b: ComplexVector::zeros(n),
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &ScanElement) -> ScanElement {
        let n = self.a.len();
        let mut out = ScanElement::identity(n);
        for i in 0..n {
            let (ar, ai, br, bi) = compose(
                (self.a.re[i], self.a.im[i], self.b.re[i], self.b.im[i]),
                (next.a.re[i], next.a.im[i], next.b.re[i], next.b.im[i]),
            );
            out.a.re[i] = ar;
            out.a.im[i] = ai;
            out.b.re[i] = br;
            out.b.im[i] = bi;
        }
        out
    }

    pub fn apply(&self, x: &ComplexVector) -> ComplexVector {
        let n = x.len();
        let mut out = ComplexVector::zeros(n);
        for i in 0..n {
            out.re[i] = self.a.re[i] * x.re[i] - self.a.im[i] * x.im[i] + self.b.re[i];
            out.im[i] = self.a.re[i] * x.im[i] + self.a.im[i] * x.re[i] + self.b.im[i];
        }
        out
    }
}

/// Evaluates `x_t = lambda * x_{t-1} + drive_t` for all `t` as a chunked
/// prefix scan: inclusive scans inside each chunk run in parallel, chunk
/// summaries are chained, then every chunk applies its incoming state.
///
/// `drives[t]` holds `[re; im]` (length `2N`). Chunking is fixed by `chunk`,
/// so the result does not depend on the number of worker threads.
pub fn scan_linear_recurrence(
    lambda_re: &[f64],
    lambda_im: &[f64],
    drives: &[Vec<f64>],
    x0: &ComplexVector,
    chunk: usize,
) -> Result<Vec<ComplexVector>> {
    if chunk == 0 {
        return Err(Error::Range("scan chunk must be at least 1".into()));
    }
    let n = lambda_re.len();
    let lambda = ComplexVector::new(lambda_re.to_vec(), lambda_im.to_vec())?;
    let element = |d: &Vec<f64>| ScanElement {
        a: lambda.clone(),
        b: ComplexVector::new(d[..n].to_vec(), d[n..].to_vec()).unwrap(),
    };

    let local: Vec<Vec<ScanElement>> = drives
        .par_chunks(chunk)
        .map(|c| {
            let mut out: Vec<ScanElement> = Vec::with_capacity(c.len());
            for d in c {
                let e = element(d);
                let next = match out.last() {
                    Some(prev) => prev.then(&e),
                    None => e,
                };
                out.push(next);
            }
            out
        })
        .collect();

    let mut carries = Vec::with_capacity(local.len());
    let mut carry = x0.clone();
    for c in &local {
        carries.push(carry.clone());
        carry = c.last().unwrap().apply(&carry);
    }

    Ok(local
        .par_iter()
        .zip(carries.par_iter())
        .flat_map_iter(|(c, carry)| c.iter().map(move |e| e.apply(carry)))
        .collect())
}

impl CompiledModel {
    /// Sequence-parallel evaluation: each layer processes the whole sequence,
    /// with the linear recurrence evaluated by [`scan_linear_recurrence`].
    /// Updates `state` to the final recurrent state.
    pub fn run_scan_with(
        &self,
        state: &mut ModelState,
        inputs: &[Vec<f64>],
        chunk: usize,
        tally: &mut MacTally,
    ) -> Result<Vec<FrameTaps>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let encoded: Vec<(Vec<f64>, Vec<f64>, MacTally)> = inputs
            .par_iter()
            .map(|u| {
                let mut t = self.new_tally();
                let (input, z) = self.encode(u, &NoHook, &mut t)?;
                Ok((input, z, t))
            })
            .collect::<Result<_>>()?;

        let mut frames: Vec<FrameTaps> = Vec::with_capacity(inputs.len());
        let mut streams = Vec::with_capacity(inputs.len());
        for (input, z, t) in encoded {
            tally.merge(&t);
            streams.push(z.clone());
            frames.push(FrameTaps {
                input,
                encoder_out: z,
                layers: Vec::with_capacity(self.depth()),
                output: Vec::new(),
            });
        }

        for l in 0..self.depth() {
            let pre: Vec<(BlockInput, LayerMacs)> = streams
                .par_iter()
                .map(|z| {
                    let mut m = LayerMacs::default();
                    let bi = self.block_input(l, z, &NoHook, &mut m)?;
                    Ok((bi, m))
                })
                .collect::<Result<_>>()?;
            let drives: Vec<Vec<f64>> = pre.iter().map(|(bi, _)| bi.drive.clone()).collect();
            let p = &self.layers[l];
            let states =
                scan_linear_recurrence(&p.lambda_re, &p.lambda_im, &drives, &state.layers[l], chunk)?;

            let post: Vec<(crate::s5::LayerTaps, LayerMacs)> = pre
                .into_par_iter()
                .zip(streams.par_iter())
                .zip(states.par_iter())
                .map(|(((bi, mut m), z), x)| {
                    let taps = self.block_output(l, z, bi, x, &NoHook, &mut m)?;
                    Ok((taps, m))
                })
                .collect::<Result<_>>()?;

            state.layers[l] = states.last().unwrap().clone();
            for ((taps, m), (frame, z)) in post.into_iter().zip(frames.iter_mut().zip(streams.iter_mut())) {
                tally.layers[l].merge(&m);
                z.clone_from(&taps.residual);
                frame.layers.push(taps);
            }
        }

        let outputs: Vec<(Vec<f64>, MacTally)> = streams
            .par_iter()
            .map(|z| {
                let mut t = self.new_tally();
                let out = self.decode(z, &NoHook, &mut t)?;
                Ok((out, t))
            })
            .collect::<Result<_>>()?;
        for (frame, (out, t)) in frames.iter_mut().zip(outputs) {
            tally.merge(&t);
            frame.output = out;
        }
        tally.frames += inputs.len() as u64;
        Ok(frames)
    }

    /// Scan evaluation from zero state.
    pub fn run_scan(&self, inputs: &[Vec<f64>], chunk: usize) -> Result<(Vec<FrameTaps>, MacTally)> {
        let mut state = self.zero_state();
        let mut tally = self.new_tally();
        let taps = self.run_scan_with(&mut state, inputs, chunk, &mut tally)?;
        Ok((taps, tally))
    }
}
