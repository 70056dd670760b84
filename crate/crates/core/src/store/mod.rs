//! Single-file persistence for float models, scale sets and integer
//! checkpoints. Tensor payloads round-trip bit for bit; see `FORMAT.md` at
//! the repository root for the byte layout.

mod container;

pub use container::{DType, Layout, Manifest, TensorEntry, FORMAT_VERSION, MAGIC};

use std::collections::HashMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fxp::{FxpCheckpoint, FxpLayer, LayerBits, SigmoidLut};
use crate::fxp::Requantizer;
use crate::quant::ScaleSet;
use crate::s5::{LayerMasks, ModelMasks, ModelSpec, S5Layer, S5Model};
use crate::sites::{LayerWeight, Site, WeightSite};
use crate::tensors::{DenseMatrix, Mask, SparseMatrix};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("bad magic: not a checkpoint container")]
    BadMagic,
    #[error("container version {found} is newer than supported version {supported}")]
    VersionTooNew { found: u32, supported: u32 },
    #[error("CRC mismatch in tensor `{tensor}`")]
    Crc { tensor: String },
    #[error("manifest entry `{tensor}` points at a missing blob")]
    Dangling { tensor: String },
    #[error("malformed container: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> Error {
    StoreError::Malformed(msg.into()).into()
}

/// Anything the container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Entity {
    Model(S5Model),
    Scales(ScaleSet),
    Fxp(FxpCheckpoint),
}

impl Entity {
    pub fn kind(&self) -> &'static str {
        match self {
            Entity::Model(_) => "model",
            Entity::Scales(_) => "scales",
            Entity::Fxp(_) => "fxp",
        }
    }
}

/// Spectral interface the model was trained against.
fn convention() -> serde_json::Value {
    json!({ "feature": "magnitude", "output": "real-mask" })
}

#[derive(Default)]
struct Builder {
    entries: Vec<TensorEntry>,
    blobs: Vec<Vec<u8>>,
}

fn fits_i8(v: &[i16]) -> bool {
    v.iter().all(|&x| i8::try_from(x).is_ok())
}

impl Builder {
    fn push(&mut self, mut entry: TensorEntry, blob: Vec<u8>) {
        entry.blob = self.blobs.len();
        self.entries.push(entry);
        self.blobs.push(blob);
    }

    fn entry(name: &str, role: &str, shape: Vec<usize>, dtype: DType, layout: Layout) -> TensorEntry {
        TensorEntry {
            name: name.to_string(),
            role: role.to_string(),
            shape,
            dtype,
            layout,
            nnz: None,
            site: None,
            scale: None,
            blob: 0,
        }
    }

    fn f32(&mut self, name: &str, role: &str, shape: Vec<usize>, v: &[f32]) {
        let blob = v.iter().flat_map(|x| x.to_bits().to_le_bytes()).collect();
        self.push(Self::entry(name, role, shape, DType::F32, Layout::Dense), blob);
    }

    fn matrix(&mut self, name: &str, role: &str, m: &DenseMatrix<f32>) {
        self.f32(name, role, vec![m.rows(), m.cols()], m.values());
    }

    fn mask(&mut self, name: &str, m: &Mask) {
        let (r, c) = m.shape();
        let blob = m.words().iter().flat_map(|w| w.to_le_bytes()).collect();
        self.push(Self::entry(name, "mask", vec![r, c], DType::Bitmask, Layout::Packed), blob);
    }

    fn ints16(v: &[i16]) -> (DType, Vec<u8>) {
        if fits_i8(v) {
            (DType::I8, v.iter().map(|&x| x as i8 as u8).collect())
        } else {
            (DType::I16, v.iter().flat_map(|x| x.to_le_bytes()).collect())
        }
    }

    fn i16(&mut self, name: &str, role: &str, v: &[i16], site: Option<Site>, scale: Option<f64>) {
        let (dtype, blob) = Self::ints16(v);
        let mut e = Self::entry(name, role, vec![v.len()], dtype, Layout::Dense);
        e.site = site.map(|s| s.to_string());
        e.scale = scale;
        self.push(e, blob);
    }

    fn i32(&mut self, name: &str, role: &str, v: &[i32]) {
        let blob = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.push(Self::entry(name, role, vec![v.len()], DType::I32, Layout::Dense), blob);
    }

    /// Offsets and indices as u32, then values as i8 or i16.
    fn csr(&mut self, name: &str, m: &SparseMatrix<i16>, site: Site, scale: f64) {
        let mut blob: Vec<u8> = Vec::new();
        m.row_offsets().iter().for_each(|x| blob.extend(x.to_le_bytes()));
        m.col_indices().iter().for_each(|x| blob.extend(x.to_le_bytes()));
        let (dtype, values) = Self::ints16(m.values());
        blob.extend(values);
        let dtype = if dtype == DType::I8 { DType::CsrI8 } else { DType::CsrI16 };
        let mut e = Self::entry(name, "weight", vec![m.rows(), m.cols()], dtype, Layout::Csr);
        e.nnz = Some(m.nnz());
        e.site = Some(site.to_string());
        e.scale = Some(scale);
        self.push(e, blob);
    }

    fn finish(self, kind: &str, meta: serde_json::Value) -> Vec<u8> {
        let manifest = Manifest {
            kind: kind.to_string(),
            meta,
            tensors: self.entries,
        };
        container::write(&manifest, &self.blobs)
    }
}

struct Reader<'a> {
    tensors: HashMap<&'a str, (&'a TensorEntry, &'a [u8])>,
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| malformed("tensor shape overflows"))
}

impl<'a> Reader<'a> {
    fn new(manifest: &'a Manifest, payloads: &[&'a [u8]]) -> Result<Self> {
        let mut tensors = HashMap::new();
        for (e, p) in manifest.tensors.iter().zip(payloads) {
            if tensors.insert(e.name.as_str(), (e, *p)).is_some() {
                return Err(malformed(format!("duplicate tensor `{}`", e.name)));
            }
        }
        Ok(Self { tensors })
    }

    fn get(&self, name: &str) -> Result<(&'a TensorEntry, &'a [u8])> {
        self.tensors
            .get(name)
            .copied()
            .ok_or_else(|| malformed(format!("missing tensor `{name}`")))
    }

    fn expect(&self, name: &str, dtypes: &[DType], rank: usize) -> Result<(&'a TensorEntry, &'a [u8])> {
        let (e, p) = self.get(name)?;
        if !dtypes.contains(&e.dtype) || e.shape.len() != rank {
            return Err(malformed(format!(
                "tensor `{name}` has dtype {:?} and rank {}",
                e.dtype,
                e.shape.len()
            )));
        }
        Ok((e, p))
    }

    fn sized<'b>(name: &str, p: &'b [u8], count: usize, width: usize) -> Result<&'b [u8]> {
        if Some(p.len()) != count.checked_mul(width) {
            return Err(malformed(format!("tensor `{name}` payload has {} bytes", p.len())));
        }
        Ok(p)
    }

    fn f32_raw(&self, name: &str, rank: usize) -> Result<(Vec<usize>, Vec<f32>)> {
        let (e, p) = self.expect(name, &[DType::F32], rank)?;
        let p = Self::sized(name, p, element_count(&e.shape)?, 4)?;
        let v = p
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok((e.shape.clone(), v))
    }

    fn f32(&self, name: &str) -> Result<Vec<f32>> {
        Ok(self.f32_raw(name, 1)?.1)
    }

    fn matrix(&self, name: &str) -> Result<DenseMatrix<f32>> {
        let (shape, v) = self.f32_raw(name, 2)?;
        DenseMatrix::from_vec(shape[0], shape[1], v)
    }

    fn mask(&self, name: &str) -> Result<Mask> {
        let (e, p) = self.expect(name, &[DType::Bitmask], 2)?;
        let words = element_count(&e.shape)?.div_ceil(64);
        let p = Self::sized(name, p, words, 8)?;
        let words = p
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Mask::from_words(e.shape[0], e.shape[1], words)
    }

    fn ints16(name: &str, dtype: DType, p: &[u8], count: usize) -> Result<Vec<i16>> {
        match dtype {
            DType::I8 | DType::CsrI8 => {
                Ok(Self::sized(name, p, count, 1)?.iter().map(|&b| b as i8 as i16).collect())
            }
            _ => Ok(Self::sized(name, p, count, 2)?
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect()),
        }
    }

    fn i16(&self, name: &str) -> Result<Vec<i16>> {
        let (e, p) = self.expect(name, &[DType::I8, DType::I16], 1)?;
        Self::ints16(name, e.dtype, p, e.shape[0])
    }

    fn i32(&self, name: &str) -> Result<Vec<i32>> {
        let (e, p) = self.expect(name, &[DType::I32], 1)?;
        Ok(Self::sized(name, p, e.shape[0], 4)?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn csr(&self, name: &str) -> Result<SparseMatrix<i16>> {
        let (e, p) = self.expect(name, &[DType::CsrI8, DType::CsrI16], 2)?;
        let (rows, cols) = (e.shape[0], e.shape[1]);
        let nnz = e.nnz.ok_or_else(|| malformed(format!("tensor `{name}` lacks nnz")))?;
        let width = if e.dtype == DType::CsrI8 { 1 } else { 2 };
        let index_bytes = (rows + 1 + nnz) * 4;
        if p.len() != index_bytes + nnz * width {
            return Err(malformed(format!("tensor `{name}` payload has {} bytes", p.len())));
        }
        let u32s = |b: &[u8]| -> Vec<u32> {
            b.chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let offsets = u32s(&p[..(rows + 1) * 4]);
        let indices = u32s(&p[(rows + 1) * 4..index_bytes]);
        let values = Self::ints16(name, e.dtype, &p[index_bytes..], nnz)?;
        SparseMatrix::from_parts(rows, cols, offsets, indices, values)
    }
}

fn meta_field<T: DeserializeOwned>(meta: &serde_json::Value, key: &str) -> Result<T> {
    let v = meta
        .get(key)
        .ok_or_else(|| malformed(format!("manifest meta lacks `{key}`")))?;
    serde_json::from_value(v.clone()).map_err(|e| malformed(format!("meta `{key}`: {e}")))
}

fn save_model(m: &S5Model) -> Vec<u8> {
    let mut b = Builder::default();
    b.matrix("encoder", "weight", &m.encoder);
    for (l, layer) in m.layers.iter().enumerate() {
        let p = |s: &str| format!("layer{l}.{s}");
        b.f32(&p("lambda_re"), "weight", vec![layer.lambda_re.len()], &layer.lambda_re);
        b.f32(&p("lambda_im"), "weight", vec![layer.lambda_im.len()], &layer.lambda_im);
        b.matrix(&p("b_re"), "weight", &layer.b_re);
        b.matrix(&p("b_im"), "weight", &layer.b_im);
        b.matrix(&p("c_re"), "weight", &layer.c_re);
        b.matrix(&p("c_im"), "weight", &layer.c_im);
        b.f32(&p("d"), "weight", vec![layer.d.len()], &layer.d);
        b.matrix(&p("glu"), "weight", &layer.glu);
        b.f32(&p("norm_scale"), "weight", vec![layer.norm_scale.len()], &layer.norm_scale);
        b.f32(&p("norm_shift"), "bias", vec![layer.norm_shift.len()], &layer.norm_shift);
    }
    b.matrix("decoder", "weight", &m.decoder);
    b.f32("decoder_bias", "bias", vec![m.decoder_bias.len()], &m.decoder_bias);
    if let Some(masks) = &m.masks {
        b.mask("mask.encoder", &masks.encoder);
        for (l, lm) in masks.layers.iter().enumerate() {
            b.mask(&format!("mask.layer{l}.b"), &lm.b);
            b.mask(&format!("mask.layer{l}.c"), &lm.c);
            b.mask(&format!("mask.layer{l}.glu"), &lm.glu);
        }
        b.mask("mask.decoder", &masks.decoder);
    }
    b.finish(
        "model",
        json!({ "spec": m.spec, "masked": m.masks.is_some(), "convention": convention() }),
    )
}

fn load_model(meta: &serde_json::Value, r: &Reader) -> Result<S5Model> {
    let spec: ModelSpec = meta_field(meta, "spec")?;
    let masked: bool = meta_field(meta, "masked")?;
    let mut layers = Vec::with_capacity(spec.depth);
    for l in 0..spec.depth {
        let p = |s: &str| format!("layer{l}.{s}");
        layers.push(S5Layer {
            lambda_re: r.f32(&p("lambda_re"))?,
            lambda_im: r.f32(&p("lambda_im"))?,
            b_re: r.matrix(&p("b_re"))?,
            b_im: r.matrix(&p("b_im"))?,
            c_re: r.matrix(&p("c_re"))?,
            c_im: r.matrix(&p("c_im"))?,
            d: r.f32(&p("d"))?,
            glu: r.matrix(&p("glu"))?,
            norm_scale: r.f32(&p("norm_scale"))?,
            norm_shift: r.f32(&p("norm_shift"))?,
        });
    }
    let masks = if masked {
        Some(ModelMasks {
            encoder: r.mask("mask.encoder")?,
            layers: (0..spec.depth)
                .map(|l| {
                    Ok(LayerMasks {
                        b: r.mask(&format!("mask.layer{l}.b"))?,
                        c: r.mask(&format!("mask.layer{l}.c"))?,
                        glu: r.mask(&format!("mask.layer{l}.glu"))?,
                    })
                })
                .collect::<Result<_>>()?,
            decoder: r.mask("mask.decoder")?,
        })
    } else {
        None
    };
    let model = S5Model {
        encoder: r.matrix("encoder")?,
        layers,
        decoder: r.matrix("decoder")?,
        decoder_bias: r.f32("decoder_bias")?,
        masks,
        spec,
    };
    model.validate()?;
    Ok(model)
}

/// Non-tensor parts of one integer block.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FxpLayerMeta {
    req_norm: Requantizer,
    req_lambda: Requantizer,
    req_b: Requantizer,
    req_c: Requantizer,
    req_d: Requantizer,
    req_gate: Requantizer,
    req_glu: Requantizer,
    req_skip: Requantizer,
    req_branch: Requantizer,
    sigmoid_q_lim: i32,
    bits: LayerBits,
}

fn weight_scale(scales: &ScaleSet, site: WeightSite) -> f64 {
    scales.weight(site).map_or(f64::NAN, |s| s.scale)
}

fn save_fxp(c: &FxpCheckpoint) -> Vec<u8> {
    let mut b = Builder::default();
    let ws = |s| (Site::Weight(s), weight_scale(&c.scales, s));
    let (site, scale) = ws(WeightSite::Encoder);
    b.csr("encoder", &c.encoder, site, scale);
    let mut layer_meta = Vec::with_capacity(c.layers.len());
    for (l, layer) in c.layers.iter().enumerate() {
        let p = |s: &str| format!("layer{l}.{s}");
        let w = |lw| ws(WeightSite::Layer(l, lw));
        let (site, scale) = w(LayerWeight::Lambda);
        b.i16(&p("lambda_re"), "weight", &layer.lambda_re, Some(site), Some(scale));
        b.i16(&p("lambda_im"), "weight", &layer.lambda_im, Some(site), Some(scale));
        let (site, scale) = w(LayerWeight::B);
        b.csr(&p("b"), &layer.b, site, scale);
        let (site, scale) = w(LayerWeight::C);
        b.csr(&p("c"), &layer.c, site, scale);
        let (site, scale) = w(LayerWeight::D);
        b.i16(&p("d"), "weight", &layer.d, Some(site), Some(scale));
        let (site, scale) = w(LayerWeight::Glu);
        b.csr(&p("glu"), &layer.glu, site, scale);
        let (site, scale) = w(LayerWeight::NormScale);
        b.i16(&p("norm_scale"), "weight", &layer.norm_scale, Some(site), Some(scale));
        b.i32(&p("norm_shift"), "bias", &layer.norm_shift);
        b.i32(&p("sigmoid_lut"), "lut", &layer.sigmoid.entries);
        layer_meta.push(FxpLayerMeta {
            req_norm: layer.req_norm,
            req_lambda: layer.req_lambda,
            req_b: layer.req_b,
            req_c: layer.req_c,
            req_d: layer.req_d,
            req_gate: layer.req_gate,
            req_glu: layer.req_glu,
            req_skip: layer.req_skip,
            req_branch: layer.req_branch,
            sigmoid_q_lim: layer.sigmoid.q_lim,
            bits: layer.bits,
        });
    }
    let (site, scale) = ws(WeightSite::Decoder);
    b.csr("decoder", &c.decoder, site, scale);
    b.i32("decoder_bias", "bias", &c.decoder_bias);
    b.finish(
        "fxp",
        json!({
            "spec": c.spec,
            "scales": c.scales,
            "req_encoder": c.req_encoder,
            "req_decoder": c.req_decoder,
            "input_bits": c.input_bits,
            "encoder_bits": c.encoder_bits,
            "output_bits": c.output_bits,
            "layers": layer_meta,
            "convention": convention(),
        }),
    )
}

fn load_fxp(meta: &serde_json::Value, r: &Reader) -> Result<FxpCheckpoint> {
    let spec: ModelSpec = meta_field(meta, "spec")?;
    let layer_meta: Vec<FxpLayerMeta> = meta_field(meta, "layers")?;
    if layer_meta.len() != spec.depth {
        return Err(malformed("layer metadata does not match depth"));
    }
    let mut layers = Vec::with_capacity(spec.depth);
    for (l, m) in layer_meta.into_iter().enumerate() {
        let p = |s: &str| format!("layer{l}.{s}");
        layers.push(FxpLayer {
            lambda_re: r.i16(&p("lambda_re"))?,
            lambda_im: r.i16(&p("lambda_im"))?,
            b: r.csr(&p("b"))?,
            c: r.csr(&p("c"))?,
            d: r.i16(&p("d"))?,
            glu: r.csr(&p("glu"))?,
            norm_scale: r.i16(&p("norm_scale"))?,
            norm_shift: r.i32(&p("norm_shift"))?,
            req_norm: m.req_norm,
            req_lambda: m.req_lambda,
            req_b: m.req_b,
            req_c: m.req_c,
            req_d: m.req_d,
            req_gate: m.req_gate,
            req_glu: m.req_glu,
            req_skip: m.req_skip,
            req_branch: m.req_branch,
            sigmoid: SigmoidLut {
                q_lim: m.sigmoid_q_lim,
                entries: r.i32(&p("sigmoid_lut"))?,
            },
            bits: m.bits,
        });
    }
    Ok(FxpCheckpoint {
        scales: meta_field(meta, "scales")?,
        encoder: r.csr("encoder")?,
        req_encoder: meta_field(meta, "req_encoder")?,
        layers,
        decoder: r.csr("decoder")?,
        decoder_bias: r.i32("decoder_bias")?,
        req_decoder: meta_field(meta, "req_decoder")?,
        input_bits: meta_field(meta, "input_bits")?,
        encoder_bits: meta_field(meta, "encoder_bits")?,
        output_bits: meta_field(meta, "output_bits")?,
        spec,
    })
}

/// Serializes an entity into a self-describing container.
pub fn save(entity: &Entity) -> Vec<u8> {
    match entity {
        Entity::Model(m) => save_model(m),
        Entity::Scales(s) => Builder::default().finish("scales", json!({ "scales": s })),
        Entity::Fxp(c) => save_fxp(c),
    }
}

pub fn load(bytes: &[u8]) -> Result<Entity> {
    let (manifest, payloads) = container::read(bytes)?;
    let reader = Reader::new(&manifest, &payloads)?;
    let meta = &manifest.meta;
    match manifest.kind.as_str() {
        "model" => Ok(Entity::Model(load_model(meta, &reader)?)),
        "scales" => Ok(Entity::Scales(meta_field(meta, "scales")?)),
        "fxp" => Ok(Entity::Fxp(load_fxp(meta, &reader)?)),
        other => Err(malformed(format!("unknown entity kind `{other}`"))),
    }
}

pub fn write_file(path: &Path, entity: &Entity) -> Result<()> {
    std::fs::write(path, save(entity))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Entity> {
    load(&std::fs::read(path)?)
}

fn wrong_kind(expected: &str, got: &Entity) -> Error {
    malformed(format!("expected a {expected} container, found {}", got.kind()))
}

pub fn read_model(path: &Path) -> Result<S5Model> {
    match read_file(path)? {
        Entity::Model(m) => Ok(m),
        other => Err(wrong_kind("model", &other)),
    }
}

pub fn read_scales(path: &Path) -> Result<ScaleSet> {
    match read_file(path)? {
        Entity::Scales(s) => Ok(s),
        other => Err(wrong_kind("scales", &other)),
    }
}

pub fn read_fxp(path: &Path) -> Result<FxpCheckpoint> {
    match read_file(path)? {
        Entity::Fxp(c) => Ok(c),
        other => Err(wrong_kind("fxp", &other)),
    }
}
