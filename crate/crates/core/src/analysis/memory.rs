//! Storage accounting.
//!
//! Float tensors cost 4 bytes per value. Integer tensors cost their declared
//! width (1 byte at 8 bits, 2 at 16, 4 for 32-bit biases and LUT entries).
//! A CSR matrix stores only its nonzeros plus a 2-byte column index per
//! nonzero and a 4-byte offset per row boundary.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fxp::FxpCheckpoint;
use crate::s5::S5Model;
use crate::sites::{LayerWeight, WeightSite};
use crate::tensors::{DenseMatrix, SparseMatrix};

/// How matrices are laid out in storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Dense,
    Csr,
    /// Whichever of the two is smaller, per matrix.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBytes {
    pub name: String,
    pub dtype: String,
    pub csr: bool,
    pub elements: usize,
    pub value_bytes: usize,
    pub index_bytes: usize,
}

impl TensorBytes {
    pub fn total(&self) -> usize {
        self.value_bytes + self.index_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub tensors: Vec<TensorBytes>,
}

impl MemoryReport {
    pub fn total(&self) -> usize {
        self.tensors.iter().map(TensorBytes::total).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = crate::compressor::csv_err;
        w.write_record(["tensor", "dtype", "layout", "elements", "value_bytes", "index_bytes", "total_bytes"])
            .map_err(e)?;
        for t in &self.tensors {
            w.write_record([
                t.name.clone(),
                t.dtype.clone(),
                if t.csr { "csr" } else { "dense" }.to_string(),
                t.elements.to_string(),
                t.value_bytes.to_string(),
                t.index_bytes.to_string(),
                t.total().to_string(),
            ])
            .map_err(e)?;
        }
        w.write_record(["total", "", "", "", "", "", &self.total().to_string()])
            .map_err(e)?;
        w.flush()?;
        Ok(())
    }
}

fn dtype_name(bytes: usize, float: bool) -> String {
    match (float, bytes) {
        (true, _) => "f32".into(),
        (false, 1) => "i8".into(),
        (false, 2) => "i16".into(),
        _ => "i32".into(),
    }
}

fn vector(name: String, len: usize, bytes: usize, float: bool) -> TensorBytes {
    TensorBytes {
        name,
        dtype: dtype_name(bytes, float),
        csr: false,
        elements: len,
        value_bytes: len * bytes,
        index_bytes: 0,
    }
}

fn matrix(
    name: String,
    (rows, cols): (usize, usize),
    nnz: usize,
    bytes: usize,
    float: bool,
    layout: Layout,
) -> TensorBytes {
    let dense = rows * cols * bytes;
    let csr_values = nnz * bytes;
    let csr_index = nnz * 2 + (rows + 1) * 4;
    let use_csr = match layout {
        Layout::Dense => false,
        Layout::Csr => true,
        Layout::Auto => csr_values + csr_index < dense,
    };
    TensorBytes {
        name,
        dtype: dtype_name(bytes, float),
        csr: use_csr,
        elements: if use_csr { nnz } else { rows * cols },
        value_bytes: if use_csr { csr_values } else { dense },
        index_bytes: if use_csr { csr_index } else { 0 },
    }
}

fn nnz_f32(m: &DenseMatrix<f32>) -> usize {
    m.values().iter().filter(|&&v| v != 0.0).count()
}

/// Float model: 4 bytes per stored value.
pub fn model_memory(model: &S5Model, layout: Layout) -> MemoryReport {
    let mat = |name: String, m: &DenseMatrix<f32>| matrix(name, m.shape(), nnz_f32(m), 4, true, layout);
    let vec = |name: String, len: usize| vector(name, len, 4, true);
    let mut t = vec![mat("encoder".into(), &model.encoder)];
    for (l, p) in model.layers.iter().enumerate() {
        t.push(vec(format!("layer{l}.lambda"), p.lambda_re.len() + p.lambda_im.len()));
        t.push(mat(format!("layer{l}.b_re"), &p.b_re));
        t.push(mat(format!("layer{l}.b_im"), &p.b_im));
        t.push(mat(format!("layer{l}.c_re"), &p.c_re));
        t.push(mat(format!("layer{l}.c_im"), &p.c_im));
        t.push(vec(format!("layer{l}.d"), p.d.len()));
        t.push(mat(format!("layer{l}.glu"), &p.glu));
        t.push(vec(format!("layer{l}.norm_scale"), p.norm_scale.len()));
        t.push(vec(format!("layer{l}.norm_shift"), p.norm_shift.len()));
    }
    t.push(mat("decoder".into(), &model.decoder));
    t.push(vec("decoder_bias".into(), model.decoder_bias.len()));
    MemoryReport { tensors: t }
}

fn bytes_of(ckpt: &FxpCheckpoint, site: WeightSite) -> usize {
    ckpt.scales
        .weight(site)
        .map(|s| (s.bits as usize).div_ceil(8))
        .unwrap_or(1)
}

/// Integer checkpoint, including sigmoid tables and requantizers.
pub fn fxp_memory(ckpt: &FxpCheckpoint, layout: Layout) -> MemoryReport {
    let mat = |name: String, m: &SparseMatrix<i16>, bytes: usize| {
        matrix(name, m.shape(), m.nnz(), bytes, false, layout)
    };
    let mut t = vec![mat("encoder".into(), &ckpt.encoder, bytes_of(ckpt, WeightSite::Encoder))];
    let mut requantizers = 2;
    for (l, p) in ckpt.layers.iter().enumerate() {
        let b = |w| bytes_of(ckpt, WeightSite::Layer(l, w));
        t.push(vector(
            format!("layer{l}.lambda"),
            p.lambda_re.len() + p.lambda_im.len(),
            b(LayerWeight::Lambda),
            false,
        ));
        t.push(mat(format!("layer{l}.b"), &p.b, b(LayerWeight::B)));
        t.push(mat(format!("layer{l}.c"), &p.c, b(LayerWeight::C)));
        t.push(vector(format!("layer{l}.d"), p.d.len(), b(LayerWeight::D), false));
        t.push(mat(format!("layer{l}.glu"), &p.glu, b(LayerWeight::Glu)));
        t.push(vector(
            format!("layer{l}.norm_scale"),
            p.norm_scale.len(),
            b(LayerWeight::NormScale),
            false,
        ));
        t.push(vector(format!("layer{l}.norm_shift"), p.norm_shift.len(), 4, false));
        t.push(vector(format!("layer{l}.sigmoid_lut"), p.sigmoid.entries.len(), 4, false));
        requantizers += 9;
    }
    t.push(mat("decoder".into(), &ckpt.decoder, bytes_of(ckpt, WeightSite::Decoder)));
    t.push(vector("decoder_bias".into(), ckpt.decoder_bias.len(), 4, false));
    // Multiplier (u32) and shift (i32) per requantizer.
    t.push(vector("requantizers".into(), 2 * requantizers, 4, false));
    MemoryReport { tensors: t }
}
