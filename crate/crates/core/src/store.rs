//! On-disk formats.
//!
//! Every stored object is a directory holding a UTF-8 `manifest.json` plus
//! zero or more raw tensor blobs named `<name>.f32`. Blobs are headerless
//! little-endian IEEE-754 f32 in row-major order; their shapes live in the
//! manifest. In memory everything is widened to f64.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::mft::{Foundation, FoundationScorecard, Subscale};
use crate::tensor::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

// ---------------------------------------------------------------------------
// Blobs
// ---------------------------------------------------------------------------

/// A shaped block of finite f32 values, exactly as it sits on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl TensorBlob {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                context: "tensor blob".into(),
                expected: format!("{expected} values for shape {shape:?}"),
                found: format!("{} values", data.len()),
            });
        }
        let blob = Self { shape, data };
        blob.check_finite("tensor blob")?;
        Ok(blob)
    }

    /// Narrows an f64 matrix to f32. Values that overflow f32 are rejected.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        let data = m.as_slice().iter().map(|&v| v as f32).collect();
        Self::new(vec![m.rows(), m.cols()], data)
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        Self::new(vec![v.len()], v.iter().map(|&x| x as f32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Views the blob as a matrix: rank-2 blobs map directly, rank-1 blobs
    /// become a single row.
    pub fn to_matrix(&self) -> Result<Matrix> {
        let (rows, cols) = match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                return Err(Error::Shape {
                    context: "tensor blob".into(),
                    expected: "rank 1 or 2".into(),
                    found: format!("shape {other:?}"),
                })
            }
        };
        Matrix::from_vec(rows, cols, self.data.iter().map(|&v| v as f64).collect())
    }

    pub fn to_vec_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    fn row_width(&self) -> usize {
        self.shape.iter().skip(1).product::<usize>().max(1)
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite {
                context: context.to_string(),
                row: i / self.row_width(),
            }),
            None => Ok(()),
        }
    }
}

pub fn write_blob(path: &Path, blob: &TensorBlob) -> Result<()> {
    let mut bytes = Vec::with_capacity(blob.len() * 4);
    for v in &blob.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a blob whose shape is known from its manifest. `context` names the
/// owning object in error messages (e.g. `layer 3`).
pub fn read_blob(path: &Path, shape: &[usize], context: &str) -> Result<TensorBlob> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::format(format!(
                "{context}: missing blob {}",
                path.display()
            )))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let n: usize = shape.iter().product();
    if bytes.len() != n * 4 {
        let width = shape.iter().skip(1).product::<usize>().max(1);
        let found_vals = bytes.len() / 4;
        let found = if shape.len() == 2 && shape[0] > 0 && found_vals % shape[0] == 0 {
            format!(
                "{} bytes ({} rows x {} columns)",
                bytes.len(),
                shape[0],
                found_vals / shape[0]
            )
        } else {
            format!("{} bytes", bytes.len())
        };
        return Err(Error::Shape {
            context: context.to_string(),
            expected: format!("{} bytes for shape {shape:?} ({width} columns)", n * 4),
            found,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let blob = TensorBlob {
        shape: shape.to_vec(),
        data,
    };
    blob.check_finite(context)?;
    Ok(blob)
}

/// Writes `blob` to a scratch file and reads it back.
pub fn roundtrip_blob(blob: &TensorBlob) -> Result<TensorBlob> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let path = dir.path().join("roundtrip.f32");
    write_blob(&path, blob)?;
    read_blob(&path, &blob.shape, "roundtrip")
}

/// Reference from a manifest to a blob file next to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobRef {
    pub file: String,
    pub shape: Vec<usize>,
}

impl BlobRef {
    fn new(name: &str, shape: &[usize]) -> Self {
        Self {
            file: format!("{name}.f32"),
            shape: shape.to_vec(),
        }
    }

    fn read(&self, dir: &Path, context: &str) -> Result<TensorBlob> {
        if self.file.contains('/') || self.file.contains('\\') || !self.file.ends_with(".f32") {
            return Err(Error::format(format!(
                "{context}: blob file name `{}` must be a bare `<name>.f32`",
                self.file
            )));
        }
        read_blob(&dir.join(&self.file), &self.shape, context)
    }
}

fn save_blob(dir: &Path, name: &str, blob: &TensorBlob) -> Result<BlobRef> {
    let r = BlobRef::new(name, blob.shape());
    write_blob(&dir.join(&r.file), blob)?;
    Ok(r)
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

/// The object types a store directory can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestKind {
    ActivationSet,
    Sae,
    TokenCorpus,
    SweepResult,
    ConceptVectors,
}

impl ManifestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ManifestKind::ActivationSet => "activation_set",
            ManifestKind::Sae => "sae",
            ManifestKind::TokenCorpus => "token_corpus",
            ManifestKind::SweepResult => "sweep_result",
            ManifestKind::ConceptVectors => "concept_vectors",
        }
    }
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
    kind: ManifestKind,
}

fn read_manifest_value(dir: &Path) -> Result<Value> {
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::format(format!("missing {}", path.display())))
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// Reads just the `kind` of the manifest in `dir`, checking the version.
pub fn manifest_kind(dir: &Path) -> Result<ManifestKind> {
    let v = read_manifest_value(dir)?;
    let h: Header = serde_json::from_value(v)
        .map_err(|e| Error::format(format!("{}: bad manifest header: {e}", dir.display())))?;
    if h.format_version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            h.format_version
        )));
    }
    Ok(h.kind)
}

pub(crate) fn read_manifest<T: DeserializeOwned>(dir: &Path, kind: ManifestKind) -> Result<T> {
    let found = manifest_kind(dir)?;
    if found != kind {
        return Err(Error::format(format!(
            "{}: expected a `{}` manifest, found `{}`",
            dir.display(),
            kind.as_str(),
            found.as_str()
        )));
    }
    let v = read_manifest_value(dir)?;
    serde_json::from_value(v)
        .map_err(|e| Error::format(format!("{}/{MANIFEST_FILE}: {e}", dir.display())))
}

pub(crate) fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::format(format!("serializing manifest: {e}")))?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn check_header(format_version: u32, kind: ManifestKind, expected: ManifestKind) -> Result<()> {
    if format_version != FORMAT_VERSION || kind != expected {
        return Err(Error::format(format!(
            "expected {} manifest version {FORMAT_VERSION}",
            expected.as_str()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Activation sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRecord {
    pub input_id: String,
    pub group_label: String,
    pub token_index: usize,
    pub repeat_count: usize,
}

/// Per-layer last-token residual vectors for a labeled collection of inputs.
///
/// Each layer holds one row per (input, repeat), inputs in manifest order and
/// each input's repeats contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    model_id: String,
    d_model: usize,
    label_vocab: Vec<String>,
    inputs: Vec<InputRecord>,
    tensors: BTreeMap<usize, Matrix>,
    row_offsets: Vec<usize>,
    metadata: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActivationManifest {
    format_version: u32,
    kind: ManifestKind,
    model_id: String,
    d_model: usize,
    layers: Vec<usize>,
    label_vocab: Vec<String>,
    inputs: Vec<InputRecord>,
    tensors: BTreeMap<usize, BlobRef>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    metadata: Map<String, Value>,
}

impl ActivationSet {
    pub fn new(
        model_id: impl Into<String>,
        d_model: usize,
        label_vocab: Vec<String>,
        inputs: Vec<InputRecord>,
        tensors: BTreeMap<usize, Matrix>,
    ) -> Result<Self> {
        if d_model == 0 {
            return Err(Error::validation("d_model must be positive"));
        }
        let mut seen = BTreeSet::new();
        for l in &label_vocab {
            if !seen.insert(l.as_str()) {
                return Err(Error::validation(format!("duplicate label `{l}` in label_vocab")));
            }
        }
        let mut ids = BTreeSet::new();
        let mut row_offsets = Vec::with_capacity(inputs.len() + 1);
        let mut rows = 0usize;
        for inp in &inputs {
            if !seen.contains(inp.group_label.as_str()) {
                return Err(Error::validation(format!(
                    "input `{}` has label `{}` not in label_vocab",
                    inp.input_id, inp.group_label
                )));
            }
            if inp.repeat_count == 0 {
                return Err(Error::validation(format!(
                    "input `{}` has repeat_count 0",
                    inp.input_id
                )));
            }
            if !ids.insert(inp.input_id.as_str()) {
                return Err(Error::validation(format!("duplicate input_id `{}`", inp.input_id)));
            }
            row_offsets.push(rows);
            rows += inp.repeat_count;
        }
        row_offsets.push(rows);
        for (layer, m) in &tensors {
            if m.rows() != rows || m.cols() != d_model {
                return Err(Error::Shape {
                    context: format!("layer {layer}"),
                    expected: format!("{rows} x {d_model}"),
                    found: format!("{} x {}", m.rows(), m.cols()),
                });
            }
            if let Some(row) = m.first_non_finite_row() {
                return Err(Error::NonFinite {
                    context: format!("layer {layer}"),
                    row,
                });
            }
        }
        Ok(Self {
            model_id: model_id.into(),
            d_model,
            label_vocab,
            inputs,
            tensors,
            row_offsets,
            metadata: Map::new(),
        })
    }

    pub fn with_metadata(mut self, metadata: Map<String, Value>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn label_vocab(&self) -> &[String] {
        &self.label_vocab
    }

    pub fn inputs(&self) -> &[InputRecord] {
        &self.inputs
    }

    pub fn metadata(&self) -> &Map<String, Value> {
        &self.metadata
    }

    pub fn layers(&self) -> Vec<usize> {
        self.tensors.keys().copied().collect()
    }

    pub fn has_layer(&self, layer: usize) -> bool {
        self.tensors.contains_key(&layer)
    }

    pub fn layer(&self, layer: usize) -> Result<&Matrix> {
        self.tensors
            .get(&layer)
            .ok_or_else(|| Error::validation(format!("layer {layer} not present in activation set")))
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.label_vocab.iter().any(|l| l == label)
    }

    /// Rows (one per repeat) belonging to input `idx` at `layer`.
    pub fn input_rows(&self, layer: usize, idx: usize) -> Result<impl Iterator<Item = &[f64]> + '_> {
        let m = self.layer(layer)?;
        let (lo, hi) = (self.row_offsets[idx], self.row_offsets[idx + 1]);
        Ok((lo..hi).map(move |r| m.row(r)))
    }

    /// Repeat-averaged representation of input `idx` at `layer`.
    pub fn input_mean(&self, layer: usize, idx: usize) -> Result<Vec<f64>> {
        let (mean, _) = crate::tensor::mean_rows(self.input_rows(layer, idx)?, self.d_model);
        Ok(mean)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let mut tensors = BTreeMap::new();
        for (layer, m) in &self.tensors {
            let blob = TensorBlob::from_matrix(m)?;
            tensors.insert(*layer, save_blob(dir, &format!("layer_{layer}"), &blob)?);
        }
        write_manifest(
            dir,
            &ActivationManifest {
                format_version: FORMAT_VERSION,
                kind: ManifestKind::ActivationSet,
                model_id: self.model_id.clone(),
                d_model: self.d_model,
                layers: self.layers(),
                label_vocab: self.label_vocab.clone(),
                inputs: self.inputs.clone(),
                tensors,
                metadata: self.metadata.clone(),
            },
        )
    }
}

pub fn load_activation_set(dir: &Path) -> Result<ActivationSet> {
    let m: ActivationManifest = read_manifest(dir, ManifestKind::ActivationSet)?;
    check_header(m.format_version, m.kind, ManifestKind::ActivationSet)?;
    let declared: Vec<usize> = m.tensors.keys().copied().collect();
    if m.layers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("manifest `layers` must be strictly increasing"));
    }
    if declared != m.layers {
        return Err(Error::validation(format!(
            "manifest `layers` {:?} disagree with tensor entries {declared:?}",
            m.layers
        )));
    }
    let rows: usize = m.inputs.iter().map(|i| i.repeat_count).sum();
    let mut tensors = BTreeMap::new();
    for (layer, r) in &m.tensors {
        let ctx = format!("layer {layer}");
        if r.shape != [rows, m.d_model] {
            return Err(Error::Shape {
                context: ctx,
                expected: format!("[{rows}, {}]", m.d_model),
                found: format!("{:?}", r.shape),
            });
        }
        let blob = r.read(dir, &ctx)?;
        tensors.insert(*layer, blob.to_matrix()?);
    }
    Ok(
        ActivationSet::new(m.model_id, m.d_model, m.label_vocab, m.inputs, tensors)?
            .with_metadata(m.metadata),
    )
}

// ---------------------------------------------------------------------------
// SAE dictionaries
// ---------------------------------------------------------------------------

/// Inference-time sparsity rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActivationKind {
    /// Keep the `k` largest positive pre-activations.
    Topk,
    /// Keep every post-ReLU value strictly above `theta`.
    BatchtopkThreshold { theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeMetadata {
    pub layer: usize,
    pub d_model: usize,
    pub n_features: usize,
    pub k: usize,
    pub activation_kind: ActivationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl SaeMetadata {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_features == 0 || self.k == 0 {
            return Err(Error::validation("d_model, n_features and k must be positive"));
        }
        if self.n_features < self.d_model {
            return Err(Error::validation(format!(
                "dictionary is not overcomplete: n_features {} < d_model {}",
                self.n_features, self.d_model
            )));
        }
        if self.k > self.n_features {
            return Err(Error::validation(format!(
                "k {} exceeds n_features {}",
                self.k, self.n_features
            )));
        }
        if let ActivationKind::BatchtopkThreshold { theta } = self.activation_kind {
            if !theta.is_finite() {
                return Err(Error::validation("threshold theta must be finite"));
            }
        }
        Ok(())
    }

    pub fn expansion_factor(&self) -> f64 {
        self.n_features as f64 / self.d_model as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeDictionary {
    meta: SaeMetadata,
    w_enc: Matrix,
    b_enc: Vec<f64>,
    /// Row `i` is decoder direction `d_i` (the on-disk `[d_model x M]` layout transposed).
    decoder: Matrix,
    b_dec: Vec<f64>,
    decoder_norms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SaeTensors {
    w_enc: BlobRef,
    b_enc: BlobRef,
    w_dec: BlobRef,
    b_dec: BlobRef,
}

#[derive(Serialize, Deserialize)]
struct SaeManifest {
    format_version: u32,
    kind: ManifestKind,
    #[serde(flatten)]
    meta: SaeMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tensors: Option<SaeTensors>,
}

impl SaeDictionary {
    /// `w_enc` is `[M x d]`, `w_dec` is `[d x M]` (columns are features).
    pub fn new(
        meta: SaeMetadata,
        w_enc: Matrix,
        b_enc: Vec<f64>,
        w_dec: Matrix,
        b_dec: Vec<f64>,
    ) -> Result<Self> {
        if w_dec.rows() != meta.d_model || w_dec.cols() != meta.n_features {
            return Err(Error::Shape {
                context: "w_dec".into(),
                expected: format!("{} x {}", meta.d_model, meta.n_features),
                found: format!("{} x {}", w_dec.rows(), w_dec.cols()),
            });
        }
        Self::from_decoder_rows(meta, w_enc, b_enc, w_dec.transpose(), b_dec)
    }

    /// Like [`SaeDictionary::new`] but takes the decoder as `[M x d]`, one
    /// feature direction per row.
    pub fn from_decoder_rows(
        meta: SaeMetadata,
        w_enc: Matrix,
        b_enc: Vec<f64>,
        decoder: Matrix,
        b_dec: Vec<f64>,
    ) -> Result<Self> {
        meta.validate()?;
        let (m, d) = (meta.n_features, meta.d_model);
        let shape_err = |name: &str, exp: String, found: String| Error::Shape {
            context: name.to_string(),
            expected: exp,
            found,
        };
        if w_enc.rows() != m || w_enc.cols() != d {
            return Err(shape_err(
                "w_enc",
                format!("{m} x {d}"),
                format!("{} x {}", w_enc.rows(), w_enc.cols()),
            ));
        }
        if decoder.rows() != m || decoder.cols() != d {
            return Err(shape_err(
                "w_dec",
                format!("{d} x {m}"),
                format!("{} x {}", decoder.cols(), decoder.rows()),
            ));
        }
        if b_enc.len() != m {
            return Err(shape_err("b_enc", m.to_string(), b_enc.len().to_string()));
        }
        if b_dec.len() != d {
            return Err(shape_err("b_dec", d.to_string(), b_dec.len().to_string()));
        }
        for (name, mat) in [("w_enc", &w_enc), ("w_dec", &decoder)] {
            if let Some(row) = mat.first_non_finite_row() {
                return Err(Error::NonFinite {
                    context: name.into(),
                    row,
                });
            }
        }
        for (name, v) in [("b_enc", &b_enc), ("b_dec", &b_dec)] {
            if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: name.into(),
                    row,
                });
            }
        }
        let decoder_norms: Vec<f64> = decoder.iter_rows().map(crate::tensor::norm).collect();
        if let Some(i) = decoder_norms.iter().position(|&n| n == 0.0) {
            return Err(Error::validation(format!(
                "decoder column for feature {i} has zero norm"
            )));
        }
        Ok(Self {
            meta,
            w_enc,
            b_enc,
            decoder,
            b_dec,
            decoder_norms,
        })
    }

    pub fn meta(&self) -> &SaeMetadata {
        &self.meta
    }

    pub fn layer(&self) -> usize {
        self.meta.layer
    }

    pub fn d_model(&self) -> usize {
        self.meta.d_model
    }

    pub fn n_features(&self) -> usize {
        self.meta.n_features
    }

    pub fn k(&self) -> usize {
        self.meta.k
    }

    pub fn encoder(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn encoder_bias(&self) -> &[f64] {
        &self.b_enc
    }

    pub fn decoder_rows(&self) -> &Matrix {
        &self.decoder
    }

    pub fn decoder_direction(&self, i: usize) -> &[f64] {
        self.decoder.row(i)
    }

    pub fn decoder_norm(&self, i: usize) -> f64 {
        self.decoder_norms[i]
    }

    pub fn decoder_bias(&self) -> &[f64] {
        &self.b_dec
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let tensors = SaeTensors {
            w_enc: save_blob(dir, "w_enc", &TensorBlob::from_matrix(&self.w_enc)?)?,
            b_enc: save_blob(dir, "b_enc", &TensorBlob::from_vector(&self.b_enc)?)?,
            w_dec: save_blob(dir, "w_dec", &TensorBlob::from_matrix(&self.decoder.transpose())?)?,
            b_dec: save_blob(dir, "b_dec", &TensorBlob::from_vector(&self.b_dec)?)?,
        };
        write_manifest(
            dir,
            &SaeManifest {
                format_version: FORMAT_VERSION,
                kind: ManifestKind::Sae,
                meta: self.meta.clone(),
                tensors: Some(tensors),
            },
        )
    }
}

/// Reads and validates only the dictionary header; weight blobs may be absent.
pub fn load_sae_metadata(dir: &Path) -> Result<SaeMetadata> {
    let m: SaeManifest = read_manifest(dir, ManifestKind::Sae)?;
    m.meta.validate()?;
    Ok(m.meta)
}

pub fn load_sae(dir: &Path) -> Result<SaeDictionary> {
    let m: SaeManifest = read_manifest(dir, ManifestKind::Sae)?;
    check_header(m.format_version, m.kind, ManifestKind::Sae)?;
    m.meta.validate()?;
    let t = m
        .tensors
        .ok_or_else(|| Error::format("sae manifest has no `tensors` entry (metadata only)"))?;
    let (d, n) = (m.meta.d_model, m.meta.n_features);
    let expect = |r: &BlobRef, name: &str, shape: &[usize]| -> Result<()> {
        if r.shape != shape {
            return Err(Error::Shape {
                context: name.to_string(),
                expected: format!("{shape:?}"),
                found: format!("{:?}", r.shape),
            });
        }
        Ok(())
    };
    expect(&t.w_enc, "w_enc", &[n, d])?;
    expect(&t.b_enc, "b_enc", &[n])?;
    expect(&t.w_dec, "w_dec", &[d, n])?;
    expect(&t.b_dec, "b_dec", &[d])?;
    let w_enc = t.w_enc.read(dir, "w_enc")?.to_matrix()?;
    let b_enc = t.b_enc.read(dir, "b_enc")?.to_vec_f64();
    let w_dec = t.w_dec.read(dir, "w_dec")?.to_matrix()?;
    let b_dec = t.b_dec.read(dir, "b_dec")?.to_vec_f64();
    SaeDictionary::new(m.meta, w_enc, b_enc, w_dec, b_dec)
}

// ---------------------------------------------------------------------------
// Token corpora
// ---------------------------------------------------------------------------

/// One document: its token strings (concatenating them reproduces the text)
/// and one residual row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub residuals: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenCorpus {
    d_model: usize,
    documents: Vec<Document>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentEntry {
    doc_id: String,
    tokens: Vec<String>,
    residuals: BlobRef,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusManifest {
    format_version: u32,
    kind: ManifestKind,
    d_model: usize,
    documents: Vec<DocumentEntry>,
}

impl TokenCorpus {
    pub fn new(d_model: usize, documents: Vec<Document>) -> Result<Self> {
        if d_model == 0 {
            return Err(Error::validation("d_model must be positive"));
        }
        let mut ids = BTreeSet::new();
        for doc in &documents {
            if !ids.insert(doc.doc_id.as_str()) {
                return Err(Error::validation(format!("duplicate doc_id `{}`", doc.doc_id)));
            }
            if doc.residuals.rows() != doc.tokens.len() || doc.residuals.cols() != d_model {
                return Err(Error::Shape {
                    context: format!("document `{}`", doc.doc_id),
                    expected: format!("{} x {d_model}", doc.tokens.len()),
                    found: format!("{} x {}", doc.residuals.rows(), doc.residuals.cols()),
                });
            }
            if let Some(row) = doc.residuals.first_non_finite_row() {
                return Err(Error::NonFinite {
                    context: format!("document `{}`", doc.doc_id),
                    row,
                });
            }
        }
        Ok(Self { d_model, documents })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let mut documents = Vec::with_capacity(self.documents.len());
        for (i, doc) in self.documents.iter().enumerate() {
            let blob = TensorBlob::from_matrix(&doc.residuals)?;
            documents.push(DocumentEntry {
                doc_id: doc.doc_id.clone(),
                tokens: doc.tokens.clone(),
                residuals: save_blob(dir, &format!("doc_{i}"), &blob)?,
            });
        }
        write_manifest(
            dir,
            &CorpusManifest {
                format_version: FORMAT_VERSION,
                kind: ManifestKind::TokenCorpus,
                d_model: self.d_model,
                documents,
            },
        )
    }
}

pub fn load_token_corpus(dir: &Path) -> Result<TokenCorpus> {
    let m: CorpusManifest = read_manifest(dir, ManifestKind::TokenCorpus)?;
    check_header(m.format_version, m.kind, ManifestKind::TokenCorpus)?;
    let mut docs = Vec::with_capacity(m.documents.len());
    for e in m.documents {
        let ctx = format!("document `{}`", e.doc_id);
        if e.residuals.shape != [e.tokens.len(), m.d_model] {
            return Err(Error::Shape {
                context: ctx,
                expected: format!("[{}, {}]", e.tokens.len(), m.d_model),
                found: format!("{:?}", e.residuals.shape),
            });
        }
        let residuals = e.residuals.read(dir, &ctx)?.to_matrix()?;
        docs.push(Document {
            doc_id: e.doc_id,
            tokens: e.tokens,
            residuals,
        });
    }
    TokenCorpus::new(m.d_model, docs)
}

// ---------------------------------------------------------------------------
// Sweep results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Macro,
    MicroAdd,
    MicroClamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRef {
    pub item_id: String,
    pub subscale: Subscale,
}

/// Raw five-option logits per (alpha, item), as dumped by an external
/// extractor. Scores are always recomputed from these.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionLogits {
    pub items: Vec<ItemRef>,
    /// Indexed `[alpha][item]`.
    pub logits: Vec<Vec<[f64; 5]>>,
}

/// Behavioral scores for one (foundation, mode, layer) over an alpha grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub foundation: Foundation,
    pub mode: SweepMode,
    pub layer: usize,
    alphas: Vec<f64>,
    scores: Vec<FoundationScorecard>,
    capability: Option<Vec<f64>>,
    option_logits: Option<OptionLogits>,
    pub metadata: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaScore {
    alpha: f64,
    scorecard: FoundationScorecard,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaAccuracy {
    alpha: f64,
    accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct LogitsEntry {
    items: Vec<ItemRef>,
    #[serde(flatten)]
    blob: BlobRef,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepManifest {
    format_version: u32,
    kind: ManifestKind,
    foundation: Foundation,
    mode: SweepMode,
    layer: usize,
    alphas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<AlphaScore>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capability: Option<Vec<AlphaAccuracy>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    option_logits: Option<LogitsEntry>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    metadata: Map<String, Value>,
}

fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.iter().any(|a| !a.is_finite()) {
        return Err(Error::validation("alpha grid contains a non-finite value"));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("alpha grid must be strictly increasing"));
    }
    if !alphas.contains(&0.0) {
        return Err(Error::validation("alpha grid must contain 0"));
    }
    Ok(())
}

impl SweepResult {
    pub fn new(
        foundation: Foundation,
        mode: SweepMode,
        layer: usize,
        alphas: Vec<f64>,
        scores: Vec<FoundationScorecard>,
    ) -> Result<Self> {
        validate_alphas(&alphas)?;
        if scores.len() != alphas.len() {
            return Err(Error::validation(format!(
                "{} scorecards for {} alphas",
                scores.len(),
                alphas.len()
            )));
        }
        for s in &scores {
            s.validate()?;
        }
        Ok(Self {
            foundation,
            mode,
            layer,
            alphas,
            scores,
            capability: None,
            option_logits: None,
            metadata: Map::new(),
        })
    }

    /// Builds a sweep from raw option logits, computing every scorecard.
    pub fn from_option_logits(
        foundation: Foundation,
        mode: SweepMode,
        layer: usize,
        alphas: Vec<f64>,
        option_logits: OptionLogits,
    ) -> Result<Self> {
        if option_logits.logits.len() != alphas.len() {
            return Err(Error::validation(format!(
                "option logits cover {} alphas, grid has {}",
                option_logits.logits.len(),
                alphas.len()
            )));
        }
        let scores = option_logits
            .logits
            .iter()
            .map(|row| crate::steering::scorecard_from_logits(&option_logits.items, row))
            .collect::<Result<Vec<_>>>()?;
        let mut s = Self::new(foundation, mode, layer, alphas, scores)?;
        s.option_logits = Some(option_logits);
        Ok(s)
    }

    pub fn with_capability(mut self, accuracy: Vec<f64>) -> Result<Self> {
        if accuracy.len() != self.alphas.len() {
            return Err(Error::validation("capability must have one accuracy per alpha"));
        }
        if accuracy.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::validation("capability accuracy outside [0, 1]"));
        }
        self.capability = Some(accuracy);
        Ok(self)
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn scores(&self) -> &[FoundationScorecard] {
        &self.scores
    }

    pub fn capability(&self) -> Option<&[f64]> {
        self.capability.as_deref()
    }

    pub fn option_logits(&self) -> Option<&OptionLogits> {
        self.option_logits.as_ref()
    }

    pub fn baseline(&self) -> &FoundationScorecard {
        let i = self.alphas.iter().position(|&a| a == 0.0).expect("validated");
        &self.scores[i]
    }

    /// Score series of foundation `f`, aligned with [`SweepResult::alphas`].
    pub fn series(&self, f: Foundation) -> Vec<f64> {
        self.scores.iter().map(|s| s.get(f)).collect()
    }

    /// Baseline-subtracted scores `Score(alpha) - Score(0)`.
    pub fn delta_series(&self, f: Foundation) -> Vec<f64> {
        let base = self.baseline().get(f);
        self.scores.iter().map(|s| s.get(f) - base).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let option_logits = match &self.option_logits {
            Some(ol) => {
                let n_items = ol.items.len();
                let mut data = Vec::with_capacity(self.alphas.len() * n_items * 5);
                for row in &ol.logits {
                    for item in row {
                        data.extend(item.iter().map(|&v| v as f32));
                    }
                }
                let blob = TensorBlob::new(vec![self.alphas.len(), n_items, 5], data)?;
                Some(LogitsEntry {
                    items: ol.items.clone(),
                    blob: save_blob(dir, "option_logits", &blob)?,
                })
            }
            None => None,
        };
        let scores = self
            .alphas
            .iter()
            .zip(&self.scores)
            .map(|(&alpha, &scorecard)| AlphaScore { alpha, scorecard })
            .collect();
        let capability = self.capability.as_ref().map(|c| {
            self.alphas
                .iter()
                .zip(c)
                .map(|(&alpha, &accuracy)| AlphaAccuracy { alpha, accuracy })
                .collect()
        });
        write_manifest(
            dir,
            &SweepManifest {
                format_version: FORMAT_VERSION,
                kind: ManifestKind::SweepResult,
                foundation: self.foundation,
                mode: self.mode,
                layer: self.layer,
                alphas: self.alphas.clone(),
                scores: Some(scores),
                capability,
                option_logits,
                metadata: self.metadata.clone(),
            },
        )
    }
}

pub fn load_sweep_result(dir: &Path) -> Result<SweepResult> {
    let m: SweepManifest = read_manifest(dir, ManifestKind::SweepResult)?;
    check_header(m.format_version, m.kind, ManifestKind::SweepResult)?;
    validate_alphas(&m.alphas)?;
    let mut result = match (m.option_logits, m.scores) {
        (Some(entry), stored) => {
            let (a, n) = (m.alphas.len(), entry.items.len());
            if entry.blob.shape != [a, n, 5] {
                return Err(Error::Shape {
                    context: "option_logits".into(),
                    expected: format!("[{a}, {n}, 5]"),
                    found: format!("{:?}", entry.blob.shape),
                });
            }
            let flat = entry.blob.read(dir, "option_logits")?.to_vec_f64();
            let logits = flat
                .chunks_exact(n * 5)
                .map(|row| {
                    row.chunks_exact(5)
                        .map(|c| [c[0], c[1], c[2], c[3], c[4]])
                        .collect()
                })
                .collect();
            let r = SweepResult::from_option_logits(
                m.foundation,
                m.mode,
                m.layer,
                m.alphas,
                OptionLogits {
                    items: entry.items,
                    logits,
                },
            )?;
            if let Some(stored) = stored {
                check_stored_scores(&r, &stored)?;
            }
            r
        }
        (None, Some(stored)) => {
            let alphas: Vec<f64> = stored.iter().map(|s| s.alpha).collect();
            if alphas != m.alphas {
                return Err(Error::validation("`scores` alphas disagree with `alphas`"));
            }
            SweepResult::new(
                m.foundation,
                m.mode,
                m.layer,
                m.alphas,
                stored.into_iter().map(|s| s.scorecard).collect(),
            )?
        }
        (None, None) => {
            return Err(Error::format(
                "sweep manifest needs `scores` or `option_logits`",
            ))
        }
    };
    if let Some(cap) = m.capability {
        if cap.iter().map(|c| c.alpha).ne(result.alphas.iter().copied()) {
            return Err(Error::validation("`capability` alphas disagree with `alphas`"));
        }
        result = result.with_capability(cap.into_iter().map(|c| c.accuracy).collect())?;
    }
    result.metadata = m.metadata;
    Ok(result)
}

fn check_stored_scores(computed: &SweepResult, stored: &[AlphaScore]) -> Result<()> {
    if stored.len() != computed.scores.len() {
        return Err(Error::validation("stored `scores` length disagrees with option logits"));
    }
    for (s, c) in stored.iter().zip(&computed.scores) {
        for f in Foundation::ALL {
            // f32 logits on disk; stored scores may come from f64 logits upstream.
            if (s.scorecard.get(f) - c.get(f)).abs() > 1e-5 {
                return Err(Error::validation(format!(
                    "stored score for {f} at alpha {} disagrees with option logits",
                    s.alpha
                )));
            }
        }
    }
    Ok(())
}

/// Every sweep result found at `root` or in its descendants, sorted by
/// (foundation, mode, layer).
pub fn find_sweep_results(root: &Path) -> Result<Vec<SweepResult>> {
    let mut out = Vec::new();
    collect_sweeps(root, &mut out)?;
    out.sort_by(|a, b| {
        (a.foundation, a.mode as u8, a.layer).cmp(&(b.foundation, b.mode as u8, b.layer))
    });
    Ok(out)
}

fn collect_sweeps(dir: &Path, out: &mut Vec<SweepResult>) -> Result<()> {
    if dir.join(MANIFEST_FILE).is_file() && manifest_kind(dir)? == ManifestKind::SweepResult {
        out.push(load_sweep_result(dir)?);
        return Ok(());
    }
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for p in entries {
        collect_sweeps(&p, out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> ActivationSet {
        let inputs = vec![
            InputRecord {
                input_id: "a".into(),
                group_label: "care".into(),
                token_index: 3,
                repeat_count: 2,
            },
            InputRecord {
                input_id: "b".into(),
                group_label: "social_norm".into(),
                token_index: 5,
                repeat_count: 2,
            },
        ];
        let mut tensors = BTreeMap::new();
        for l in 0..2 {
            let data = (0..4 * 3).map(|i| (i + l * 100) as f64 * 0.5).collect();
            tensors.insert(l, Matrix::from_vec(4, 3, data).unwrap());
        }
        ActivationSet::new(
            "toy",
            3,
            vec!["care".into(), "social_norm".into()],
            inputs,
            tensors,
        )
        .unwrap()
    }

    #[test]
    fn activation_set_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let set = tiny_set();
        set.save(dir.path()).unwrap();
        let back = load_activation_set(dir.path()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.layers(), vec![0, 1]);
    }

    #[test]
    fn column_mismatch_names_layer() {
        let dir = tempfile::tempdir().unwrap();
        tiny_set().save(dir.path()).unwrap();
        // Truncate layer 1 to 4 x 2 floats while the manifest still says 4 x 3.
        let blob = TensorBlob::new(vec![4, 2], vec![0.0; 8]).unwrap();
        write_blob(&dir.path().join("layer_1.f32"), &blob).unwrap();
        let err = load_activation_set(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Shape { .. }), "{msg}");
        assert!(msg.contains("layer 1"), "{msg}");
        assert!(msg.contains("2 columns"), "{msg}");
    }

    #[test]
    fn nan_row_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        tiny_set().save(dir.path()).unwrap();
        let mut data = [1.0f32; 12];
        data[3 * 3 + 1] = f32::NAN;
        let path = dir.path().join("layer_0.f32");
        let mut bytes = Vec::new();
        data.iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
        fs::write(&path, bytes).unwrap();
        match load_activation_set(dir.path()).unwrap_err() {
            Error::NonFinite { context, row } => {
                assert_eq!(row, 3);
                assert_eq!(context, "layer 0");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_blob_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        tiny_set().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("layer_0.f32")).unwrap();
        assert!(matches!(
            load_activation_set(dir.path()).unwrap_err(),
            Error::Format(_)
        ));
    }

    #[test]
    fn row_count_mismatch_is_deterministic() {
        let mut tensors = BTreeMap::new();
        tensors.insert(7, Matrix::zeros(3, 2));
        let inputs = vec![InputRecord {
            input_id: "x".into(),
            group_label: "care".into(),
            token_index: 0,
            repeat_count: 2,
        }];
        let e1 = ActivationSet::new("m", 2, vec!["care".into()], inputs.clone(), tensors.clone())
            .unwrap_err()
            .to_string();
        let e2 = ActivationSet::new("m", 2, vec!["care".into()], inputs, tensors)
            .unwrap_err()
            .to_string();
        assert_eq!(e1, e2);
        assert!(e1.contains("layer 7"));
    }

    #[test]
    fn unknown_label_rejected() {
        let inputs = vec![InputRecord {
            input_id: "x".into(),
            group_label: "justice".into(),
            token_index: 0,
            repeat_count: 1,
        }];
        assert!(ActivationSet::new("m", 2, vec!["care".into()], inputs, BTreeMap::new()).is_err());
    }

    #[test]
    fn blob_roundtrip_small_cases() {
        let b = TensorBlob::new(vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        assert_eq!(roundtrip_blob(&b).unwrap(), b);
        let z = TensorBlob::new(vec![1, 1], vec![-0.0]).unwrap();
        let back = roundtrip_blob(&z).unwrap();
        assert_eq!(back.data()[0].to_bits(), (-0.0f32).to_bits());
    }

    fn sae_meta(d: usize, m: usize, k: usize) -> SaeMetadata {
        SaeMetadata {
            layer: 3,
            d_model: d,
            n_features: m,
            k,
            activation_kind: ActivationKind::Topk,
            source: None,
        }
    }

    fn synthetic_sae(d: usize, m: usize, k: usize) -> SaeDictionary {
        let w_enc = Matrix::from_vec(m, d, (0..m * d).map(|i| ((i * 7) % 11) as f64 - 5.0).collect())
            .unwrap();
        let dec = Matrix::from_vec(m, d, (0..m * d).map(|i| ((i * 3) % 5) as f64 + 1.0).collect())
            .unwrap();
        SaeDictionary::from_decoder_rows(sae_meta(d, m, k), w_enc, vec![0.125; m], dec, vec![0.5; d])
            .unwrap()
    }

    #[test]
    fn sae_roundtrip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let sae = synthetic_sae(4, 16, 2);
        sae.save(dir.path()).unwrap();
        let back = load_sae(dir.path()).unwrap();
        assert_eq!(back, sae);
        // On disk w_dec is [d x M]: element (r, c) is feature c's r-th coordinate.
        let raw = read_blob(&dir.path().join("w_dec.f32"), &[4, 16], "w_dec").unwrap();
        assert_eq!(raw.data()[16 + 5] as f64, sae.decoder_direction(5)[1]);
    }

    #[test]
    fn sae_metadata_only_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = serde_json::json!({
            "format_version": 1,
            "kind": "sae",
            "layer": 15,
            "d_model": 4096,
            "n_features": 131072,
            "k": 64,
            "activation_kind": {"type": "topk"}
        });
        fs::write(dir.path().join(MANIFEST_FILE), manifest.to_string()).unwrap();
        let meta = load_sae_metadata(dir.path()).unwrap();
        assert_eq!(meta.expansion_factor(), 32.0);
        assert!(matches!(load_sae(dir.path()).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn sae_rejects_undercomplete_and_zero_columns() {
        let meta = sae_meta(4, 2, 1);
        assert!(meta.validate().unwrap_err().to_string().contains("overcomplete"));

        let mut dec = Matrix::from_vec(8, 2, vec![1.0; 16]).unwrap();
        dec.row_mut(5).fill(0.0);
        let err = SaeDictionary::from_decoder_rows(
            sae_meta(2, 8, 1),
            Matrix::zeros(8, 2),
            vec![0.0; 8],
            dec,
            vec![0.0; 2],
        )
        .unwrap_err();
        assert!(err.to_string().contains("feature 5"), "{err}");
    }

    #[test]
    fn corpus_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let docs = vec![Document {
            doc_id: "d0".into(),
            tokens: vec!["a".into(), " b".into()],
            residuals: Matrix::from_vec(2, 2, vec![1., 2., 3., 4.]).unwrap(),
        }];
        let c = TokenCorpus::new(2, docs).unwrap();
        c.save(dir.path()).unwrap();
        assert_eq!(load_token_corpus(dir.path()).unwrap(), c);
    }

    #[test]
    fn sweep_requires_zero_and_order() {
        let sc = FoundationScorecard::from_subscales([3.0; 6]);
        assert!(SweepResult::new(Foundation::Care, SweepMode::Macro, 0, vec![-1.0, 1.0], vec![sc; 2])
            .is_err());
        assert!(SweepResult::new(Foundation::Care, SweepMode::Macro, 0, vec![1.0, 0.0], vec![sc; 2])
            .is_err());
        let ok = SweepResult::new(Foundation::Care, SweepMode::Macro, 0, vec![-1.0, 0.0, 1.0], vec![sc; 3])
            .unwrap();
        assert_eq!(ok.delta_series(Foundation::Care), vec![0.0; 3]);
    }

    #[test]
    fn sweep_roundtrip_with_logits() {
        let dir = tempfile::tempdir().unwrap();
        let items: Vec<ItemRef> = Subscale::ALL
            .iter()
            .enumerate()
            .map(|(i, &s)| ItemRef {
                item_id: format!("q{i}"),
                subscale: s,
            })
            .collect();
        let logits = vec![
            vec![[0.0, 0.0, 0.0, 0.0, 0.0]; 6],
            vec![[0.0, 0.0, 0.0, 0.0, 1.0]; 6],
        ];
        let r = SweepResult::from_option_logits(
            Foundation::Loyalty,
            SweepMode::MicroAdd,
            4,
            vec![0.0, 1.0],
            OptionLogits { items, logits },
        )
        .unwrap()
        .with_capability(vec![0.5, 0.25])
        .unwrap();
        r.save(dir.path()).unwrap();
        let back = load_sweep_result(dir.path()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.baseline().care, 3.0);
    }
}
