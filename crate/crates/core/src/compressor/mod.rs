//! Unstructured magnitude pruning.
//!
//! The per-layer budget follows the Erdős–Rényi-kernel rule: layer density is
//! proportional to `(N + M) / (N M)`, normalized so that the parameter-weighted
//! density equals `1 - S`, with layers that would exceed density 1 clamped
//! dense and the constant re-solved over the rest. Within a layer the `k`
//! largest magnitudes survive, `k = round((1 - s) N M)`, ties broken in
//! row-major order. Complex projections are ranked by complex magnitude so
//! both planes share one mask. Diagonals and norm parameters are never pruned.

mod schedule;

pub use schedule::{PruneSchedule, ScheduleTracePoint};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::s5::{LayerMasks, ModelMasks, ModelSpec, S5Model};
use crate::tensors::{DenseMatrix, Mask, SparseMatrix};

/// A prunable weight matrix: `rows x cols` mask positions, each carrying
/// `planes` real parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunableLayer {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub planes: usize,
}

impl PrunableLayer {
    pub fn positions(&self) -> usize {
        self.rows * self.cols
    }

    pub fn params(&self) -> usize {
        self.positions() * self.planes
    }

    /// ERK score `(N + M) / (N M)`.
    pub fn score(&self) -> f64 {
        (self.rows + self.cols) as f64 / (self.rows * self.cols) as f64
    }
}

/// Prunable matrices of a model, in execution order.
pub fn prunable_layers(spec: &ModelSpec) -> Vec<PrunableLayer> {
    let (m, n) = (spec.n_model, spec.n_ssm);
    let layer = |id: String, rows, cols, planes| PrunableLayer { id, rows, cols, planes };
    let mut v = vec![layer("encoder".into(), m, spec.n_input, 1)];
    for l in 0..spec.depth {
        v.push(layer(format!("layer{l}.b"), n, m, 2));
        v.push(layer(format!("layer{l}.c"), m, n, 2));
        v.push(layer(format!("layer{l}.glu"), m, m, 1));
    }
    v.push(layer("decoder".into(), spec.n_output, m, 1));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErkRecord {
    pub layer: PrunableLayer,
    pub score: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErkAllocation {
    pub target: f64,
    pub records: Vec<ErkRecord>,
}

impl ErkAllocation {
    /// Parameter-weighted density implied by the allocated sparsities.
    pub fn density(&self) -> f64 {
        let total: usize = self.records.iter().map(|r| r.layer.params()).sum();
        let kept: f64 = self
            .records
            .iter()
            .map(|r| (1.0 - r.sparsity) * r.layer.params() as f64)
            .sum();
        kept / total as f64
    }

    pub fn get(&self, id: &str) -> Result<&ErkRecord> {
        self.records
            .iter()
            .find(|r| r.layer.id == id)
            .ok_or_else(|| Error::Allocation(format!("no allocation for layer `{id}`")))
    }
}

/// Distributes the global sparsity `target` over `layers`.
pub fn erk_allocate(layers: &[PrunableLayer], target: f64) -> Result<ErkAllocation> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::Allocation(format!("target sparsity {target} outside [0, 1)")));
    }
    if layers.is_empty() || layers.iter().any(|l| l.params() == 0) {
        return Err(Error::Allocation("no prunable parameters".into()));
    }
    let total: f64 = layers.iter().map(|l| l.params() as f64).sum();
    let budget = (1.0 - target) * total;

    let mut dense = vec![false; layers.len()];
    let scale = loop {
        let fixed: f64 = layers
            .iter()
            .zip(&dense)
            .filter(|(_, &d)| d)
            .map(|(l, _)| l.params() as f64)
            .sum();
        let weighted: f64 = layers
            .iter()
            .zip(&dense)
            .filter(|(_, &d)| !d)
            .map(|(l, _)| l.params() as f64 * l.score())
            .sum();
        if weighted == 0.0 {
            // Everything clamped dense.
            if fixed + 1e-9 * total < budget {
                return Err(Error::Allocation(format!(
                    "target sparsity {target} is infeasible"
                )));
            }
            break 0.0;
        }
        let c = (budget - fixed) / weighted;
        let mut changed = false;
        for (l, d) in layers.iter().zip(dense.iter_mut()) {
            if !*d && c * l.score() > 1.0 {
                *d = true;
                changed = true;
            }
        }
        if !changed {
            break c;
        }
    };

    let records = layers
        .iter()
        .zip(&dense)
        .map(|(l, &d)| {
            let density = if d { 1.0 } else { (scale * l.score()).clamp(0.0, 1.0) };
            ErkRecord {
                layer: l.clone(),
                score: l.score(),
                sparsity: 1.0 - density,
            }
        })
        .collect();
    Ok(ErkAllocation { target, records })
}

/// Number of entries kept out of `len` at sparsity `s`.
pub fn kept_count(len: usize, s: f64) -> usize {
    (((1.0 - s) * len as f64).round() as usize).min(len)
}

/// Keeps the `round((1 - s) len)` largest magnitudes (ties in row-major order).
pub fn mask_from_magnitudes(rows: usize, cols: usize, magnitudes: &[f64], s: f64) -> Result<Mask> {
    if magnitudes.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{} magnitudes for a {rows}x{cols} mask",
            magnitudes.len()
        )));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Range(format!("sparsity {s} outside [0, 1]")));
    }
    let k = kept_count(magnitudes.len(), s);
    let mut order: Vec<usize> = (0..magnitudes.len()).collect();
    order.sort_by(|&a, &b| magnitudes[b].total_cmp(&magnitudes[a]).then(a.cmp(&b)));
    let mut mask = Mask::zeros(rows, cols);
    for &i in &order[..k] {
        mask.set_flat(i, true);
    }
    Ok(mask)
}

pub fn magnitude_mask(w: &DenseMatrix<f32>, s: f64) -> Result<Mask> {
    let mags: Vec<f64> = w.values().iter().map(|v| (*v as f64).abs()).collect();
    mask_from_magnitudes(w.rows(), w.cols(), &mags, s)
}

/// Shared mask of a complex matrix ranked by `sqrt(re^2 + im^2)`.
pub fn complex_magnitude_mask(re: &DenseMatrix<f32>, im: &DenseMatrix<f32>, s: f64) -> Result<Mask> {
    if re.shape() != im.shape() {
        return Err(Error::Dimension("complex planes differ in shape".into()));
    }
    let mags: Vec<f64> = re
        .values()
        .iter()
        .zip(im.values())
        .map(|(&a, &b)| (a as f64).hypot(b as f64))
        .collect();
    mask_from_magnitudes(re.rows(), re.cols(), &mags, s)
}

/// Row of the pruning summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub layer: String,
    pub rows: usize,
    pub cols: usize,
    pub params: usize,
    pub target: f64,
    pub realized: f64,
    pub nnz: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub model: S5Model,
    pub masks: ModelMasks,
    pub records: Vec<PruneRecord>,
}

impl PruneOutcome {
    /// Zero fraction over every prunable parameter.
    pub fn global_sparsity(&self) -> f64 {
        let params: usize = self.records.iter().map(|r| r.params).sum();
        let nnz: usize = self.records.iter().map(|r| r.nnz).sum();
        1.0 - nnz as f64 / params as f64
    }

    /// CSR forms of every prunable matrix (complex ones per plane).
    pub fn csr_weights(&self) -> Vec<(String, SparseMatrix<f32>)> {
        let m = &self.model;
        let mut v = vec![("encoder".to_string(), SparseMatrix::from_dense(&m.encoder))];
        for (l, p) in m.layers.iter().enumerate() {
            for (name, w) in [
                ("b_re", &p.b_re),
                ("b_im", &p.b_im),
                ("c_re", &p.c_re),
                ("c_im", &p.c_im),
                ("glu", &p.glu),
            ] {
                v.push((format!("layer{l}.{name}"), SparseMatrix::from_dense(w)));
            }
        }
        v.push(("decoder".to_string(), SparseMatrix::from_dense(&m.decoder)));
        v
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_records(&self.records, out)
    }
}

pub fn write_records<W: Write>(records: &[PruneRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "rows", "cols", "params", "target_sparsity", "realized_sparsity", "nnz"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.layer.clone(),
            r.rows.to_string(),
            r.cols.to_string(),
            r.params.to_string(),
            format!("{:.6}", r.target),
            format!("{:.6}", r.realized),
            r.nnz.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn record(layer: &PrunableLayer, target: f64, mask: &Mask) -> PruneRecord {
    let nnz = mask.count_ones() * layer.planes;
    PruneRecord {
        layer: layer.id.clone(),
        rows: layer.rows,
        cols: layer.cols,
        params: layer.params(),
        target,
        realized: 1.0 - nnz as f64 / layer.params() as f64,
        nnz,
    }
}

/// Masks every prunable matrix at its allocated sparsity and zeroes the
/// dropped weights. The returned model carries its masks.
pub fn prune_model(model: &S5Model, allocation: &ErkAllocation) -> Result<PruneOutcome> {
    model.validate()?;
    let layers = prunable_layers(&model.spec);
    if allocation.records.len() != layers.len() {
        return Err(Error::Allocation(format!(
            "allocation covers {} layers, model has {}",
            allocation.records.len(),
            layers.len()
        )));
    }
    let mut out = model.clone();
    let mut records = Vec::with_capacity(layers.len());
    let mut take = |layer: &PrunableLayer, mask: Mask, s: f64| {
        records.push(record(layer, s, &mask));
        mask
    };
    let lookup = |layer: &PrunableLayer| -> Result<f64> {
        let r = allocation.get(&layer.id)?;
        if (r.layer.rows, r.layer.cols) != (layer.rows, layer.cols) {
            return Err(Error::Allocation(format!("shape mismatch for `{}`", layer.id)));
        }
        Ok(r.sparsity)
    };

    let mut it = layers.iter();
    let enc = it.next().unwrap();
    let s = lookup(enc)?;
    let encoder = take(enc, magnitude_mask(&model.encoder, s)?, s);
    out.encoder = model.encoder.mask_apply(&encoder)?;

    let mut layer_masks = Vec::with_capacity(model.spec.depth);
    for (src, dst) in model.layers.iter().zip(out.layers.iter_mut()) {
        let (lb, lc, lg) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        let sb = lookup(lb)?;
        let b = take(lb, complex_magnitude_mask(&src.b_re, &src.b_im, sb)?, sb);
        let sc = lookup(lc)?;
        let c = take(lc, complex_magnitude_mask(&src.c_re, &src.c_im, sc)?, sc);
        let sg = lookup(lg)?;
        let glu = take(lg, magnitude_mask(&src.glu, sg)?, sg);
        dst.b_re = src.b_re.mask_apply(&b)?;
        dst.b_im = src.b_im.mask_apply(&b)?;
        dst.c_re = src.c_re.mask_apply(&c)?;
        dst.c_im = src.c_im.mask_apply(&c)?;
        dst.glu = src.glu.mask_apply(&glu)?;
        layer_masks.push(LayerMasks { b, c, glu });
    }

    let dec = it.next().unwrap();
    let s = lookup(dec)?;
    let decoder = take(dec, magnitude_mask(&model.decoder, s)?, s);
    out.decoder = model.decoder.mask_apply(&decoder)?;

    let masks = ModelMasks {
        encoder,
        layers: layer_masks,
        decoder,
    };
    out.masks = Some(masks.clone());
    Ok(PruneOutcome {
        model: out,
        masks,
        records,
    })
}

/// ERK allocation at `target` followed by [`prune_model`].
pub fn prune_to(model: &S5Model, target: f64) -> Result<(ErkAllocation, PruneOutcome)> {
    let alloc = erk_allocate(&prunable_layers(&model.spec), target)?;
    let outcome = prune_model(model, &alloc)?;
    Ok((alloc, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::s5::init_random;

    fn square(id: &str, n: usize) -> PrunableLayer {
        PrunableLayer {
            id: id.into(),
            rows: n,
            cols: n,
            planes: 1,
        }
    }

    #[test]
    fn topk_small_example() {
        let w = DenseMatrix::from_vec(2, 2, vec![0.1f32, 0.9, 0.5, 0.3]).unwrap();
        let m = magnitude_mask(&w, 0.5).unwrap();
        assert!(!m.get(0, 0) && m.get(0, 1) && m.get(1, 0) && !m.get(1, 1));
        assert_eq!(magnitude_mask(&w, 0.0).unwrap().count_ones(), 4);
        assert_eq!(magnitude_mask(&w, 1.0).unwrap().count_ones(), 0);
    }

    #[test]
    fn ties_resolved_in_row_major_order() {
        let w = DenseMatrix::from_vec(2, 2, vec![1.0f32, 1.0, 1.0, 1.0]).unwrap();
        let m = magnitude_mask(&w, 0.5).unwrap();
        assert!(m.get(0, 0) && m.get(0, 1) && !m.get(1, 0) && !m.get(1, 1));
    }

    #[test]
    fn erk_single_and_identical_layers() {
        let one = erk_allocate(&[square("a", 10)], 0.7).unwrap();
        assert!((one.records[0].sparsity - 0.7).abs() < 1e-12);
        let two = erk_allocate(&[square("a", 10), square("b", 10)], 0.4).unwrap();
        assert!((two.records[0].sparsity - 0.4).abs() < 1e-12);
        assert!((two.records[1].sparsity - 0.4).abs() < 1e-12);
    }

    #[test]
    fn erk_waterfills_clamped_layers() {
        // A tiny layer would exceed density 1 at this target and is clamped.
        let layers = [square("tiny", 2), square("big", 100)];
        let a = erk_allocate(&layers, 0.5).unwrap();
        assert_eq!(a.records[0].sparsity, 0.0);
        assert!((a.density() - 0.5).abs() < 1e-12);
        assert!(erk_allocate(&layers, 1.0).is_err());
        assert!(erk_allocate(&[], 0.5).is_err());
    }

    #[test]
    fn pruned_planes_share_masks() {
        let spec = ModelSpec::with_width(0.1);
        let model = init_random(&spec, 8).unwrap();
        let (_, out) = prune_to(&model, 0.8).unwrap();
        for p in &out.model.layers {
            for (re, im) in p.b_re.values().iter().zip(p.b_im.values()) {
                assert_eq!(*re == 0.0, *im == 0.0);
            }
        }
        assert_eq!(out.model.layers[0].lambda_re, model.layers[0].lambda_re);
        assert_eq!(out.model.layers[0].d, model.layers[0].d);
        assert!((out.global_sparsity() - 0.8).abs() < 0.01);
    }

    #[test]
    fn zero_target_leaves_model_unchanged() {
        let model = init_random(&ModelSpec::with_width(0.1), 9).unwrap();
        let (_, out) = prune_to(&model, 0.0).unwrap();
        assert_eq!(out.model.layers, model.layers);
        assert_eq!(out.model.encoder, model.encoder);
        assert_eq!(out.masks.encoder.count_ones(), model.encoder.len());
    }
}
