//! Difference-in-means concept vectors.
//!
//! A concept vector at layer `l` is the normalized difference between the
//! mean representation of a target group and that of a contrast group. Each
//! input is first reduced to the mean of its repeats, then inputs are
//! averaged within their group.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{
    self, ActivationSet, BlobRef, ManifestKind, TensorBlob, FORMAT_VERSION,
};
use crate::tensor::{self, Matrix};

/// Raw-norm floor below which two groups are considered indistinguishable.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Contrast {
    /// Every input whose label differs from the target.
    VsRest,
    /// Inputs carrying one specific other label.
    VsLabel { label: String },
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contrast::VsRest => f.write_str("rest"),
            Contrast::VsLabel { label } => f.write_str(label),
        }
    }
}

impl Contrast {
    pub fn vs(label: impl Into<String>) -> Self {
        Contrast::VsLabel {
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    pub target_label: String,
    pub contrast: Contrast,
    /// `None` means every layer in the activation set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
}

impl ContrastSpec {
    pub fn new(target_label: impl Into<String>, contrast: Contrast) -> Self {
        Self {
            target_label: target_label.into(),
            contrast,
            layers: None,
        }
    }

    pub fn with_layers(mut self, layers: Vec<usize>) -> Self {
        self.layers = Some(layers);
        self
    }

    fn validate(&self, set: &ActivationSet) -> Result<()> {
        if !set.has_label(&self.target_label) {
            return Err(Error::validation(format!(
                "target label `{}` not in label vocabulary",
                self.target_label
            )));
        }
        if let Contrast::VsLabel { label } = &self.contrast {
            if label == &self.target_label {
                return Err(Error::validation(format!(
                    "contrast label `{label}` equals the target label"
                )));
            }
            if !set.has_label(label) {
                return Err(Error::validation(format!(
                    "contrast label `{label}` not in label vocabulary"
                )));
            }
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!("{} vs {}", self.target_label, self.contrast)
    }
}

/// A unit-norm direction at one layer plus the norm of its raw difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector {
    pub target_label: String,
    pub contrast: Contrast,
    pub layer: usize,
    pub direction: Vec<f64>,
    pub raw_norm: f64,
}

impl ConceptVector {
    /// Normalizes a raw difference vector, rejecting near-zero ones.
    pub fn from_raw(
        target_label: impl Into<String>,
        contrast: Contrast,
        layer: usize,
        raw: &[f64],
    ) -> Result<Self> {
        let target_label = target_label.into();
        let raw_norm = tensor::norm(raw);
        if raw_norm.is_nan() || raw_norm < DEGENERATE_NORM {
            return Err(Error::DegenerateContrast {
                contrast: format!("{target_label} vs {contrast}"),
                layer,
                norm: raw_norm,
            });
        }
        Ok(Self {
            target_label,
            contrast,
            layer,
            direction: tensor::scale(raw, 1.0 / raw_norm),
            raw_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    /// Short identifier such as `care_vs_social_norm@12`.
    pub fn descriptor(&self) -> String {
        format!("{}_vs_{}@{}", self.target_label, self.contrast, self.layer)
    }

    /// The same axis with the roles of target and contrast swapped.
    pub fn negated(&self, new_target: impl Into<String>, new_contrast: Contrast) -> Self {
        Self {
            target_label: new_target.into(),
            contrast: new_contrast,
            layer: self.layer,
            direction: self.direction.iter().map(|v| -v).collect(),
            raw_norm: self.raw_norm,
        }
    }
}

/// Mean over the inputs labeled `label` at `layer`, each input first reduced
/// to the mean of its repeats.
pub fn mean_activation(set: &ActivationSet, label: &str, layer: usize) -> Result<Vec<f64>> {
    set.layer(layer)?;
    group_mean(set, layer, |l| l == label).ok_or_else(|| Error::EmptyGroup {
        label: label.to_string(),
        layer,
    })
}

fn group_mean(set: &ActivationSet, layer: usize, member: impl Fn(&str) -> bool) -> Option<Vec<f64>> {
    set.layer(layer).ok()?;
    let d = set.d_model();
    let mut acc = vec![0.0; d];
    let mut n = 0usize;
    for (idx, inp) in set.inputs().iter().enumerate() {
        if !member(&inp.group_label) {
            continue;
        }
        let m = set.input_mean(layer, idx).ok()?;
        for (a, v) in acc.iter_mut().zip(&m) {
            *a += v;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let inv = n as f64;
    acc.iter_mut().for_each(|a| *a /= inv);
    Some(acc)
}

pub fn build_concept_vector(
    set: &ActivationSet,
    spec: &ContrastSpec,
    layer: usize,
) -> Result<ConceptVector> {
    spec.validate(set)?;
    set.layer(layer)?;
    if set.d_model() < 2 {
        return Err(Error::validation("concept vectors need d_model >= 2"));
    }
    let target = mean_activation(set, &spec.target_label, layer)?;
    let contrast = match &spec.contrast {
        Contrast::VsLabel { label } => mean_activation(set, label, layer)?,
        Contrast::VsRest => group_mean(set, layer, |l| l != spec.target_label).ok_or_else(|| {
            Error::EmptyGroup {
                label: format!("rest of {}", spec.target_label),
                layer,
            }
        })?,
    };
    let raw = tensor::sub(&target, &contrast);
    ConceptVector::from_raw(spec.target_label.clone(), spec.contrast.clone(), layer, &raw)
}

/// One vector per (spec, layer), ordered by spec then ascending layer.
pub fn build_all_vectors(set: &ActivationSet, specs: &[ContrastSpec]) -> Result<Vec<ConceptVector>> {
    let mut jobs = Vec::new();
    for spec in specs {
        spec.validate(set)?;
        let mut layers = spec.layers.clone().unwrap_or_else(|| set.layers());
        layers.sort_unstable();
        layers.dedup();
        jobs.extend(layers.into_iter().map(|l| (spec, l)));
    }
    jobs.par_iter()
        .map(|(spec, layer)| {
            build_concept_vector(set, spec, *layer).map_err(|e| match e {
                Error::DegenerateContrast { norm, .. } => Error::DegenerateContrast {
                    contrast: spec.describe(),
                    layer: *layer,
                    norm,
                },
                other => other,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// An ordered collection of concept vectors sharing one dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVectorSet {
    d_model: usize,
    vectors: Vec<ConceptVector>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VectorEntry {
    target_label: String,
    contrast: Contrast,
    layer: usize,
    raw_norm: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VectorsManifest {
    format_version: u32,
    kind: ManifestKind,
    d_model: usize,
    vectors: Vec<VectorEntry>,
    directions: BlobRef,
}

impl ConceptVectorSet {
    pub fn new(d_model: usize, vectors: Vec<ConceptVector>) -> Result<Self> {
        for v in &vectors {
            if v.dim() != d_model {
                return Err(Error::Dimension {
                    expected: d_model,
                    found: v.dim(),
                });
            }
        }
        Ok(Self { d_model, vectors })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn vectors(&self) -> &[ConceptVector] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<ConceptVector> {
        self.vectors
    }

    pub fn find(&self, target: &str, contrast: &Contrast, layer: usize) -> Option<&ConceptVector> {
        self.vectors
            .iter()
            .find(|v| v.layer == layer && v.target_label == target && &v.contrast == contrast)
    }

    /// Distinct contrasts available for `target`, in first-seen order.
    pub fn contrasts_for(&self, target: &str) -> Vec<Contrast> {
        let mut out: Vec<Contrast> = Vec::new();
        for v in self.vectors.iter().filter(|v| v.target_label == target) {
            if !out.contains(&v.contrast) {
                out.push(v.contrast.clone());
            }
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        store::ensure_dir(dir)?;
        let mut data = Vec::with_capacity(self.vectors.len() * self.d_model);
        for v in &self.vectors {
            data.extend(v.direction.iter().map(|&x| x as f32));
        }
        let blob = TensorBlob::new(vec![self.vectors.len(), self.d_model], data)?;
        let directions = BlobRef {
            file: "directions.f32".into(),
            shape: blob.shape().to_vec(),
        };
        store::write_blob(&dir.join(&directions.file), &blob)?;
        store::write_manifest(
            dir,
            &VectorsManifest {
                format_version: FORMAT_VERSION,
                kind: ManifestKind::ConceptVectors,
                d_model: self.d_model,
                vectors: self
                    .vectors
                    .iter()
                    .map(|v| VectorEntry {
                        target_label: v.target_label.clone(),
                        contrast: v.contrast.clone(),
                        layer: v.layer,
                        raw_norm: v.raw_norm,
                    })
                    .collect(),
                directions,
            },
        )
    }

    /// Loads a vector set. Directions are renormalized in f64 after the f32
    /// round trip; `raw_norm` comes from the manifest unchanged.
    pub fn load(dir: &Path) -> Result<Self> {
        let m: VectorsManifest = store::read_manifest(dir, ManifestKind::ConceptVectors)?;
        let n = m.vectors.len();
        if m.directions.shape != [n, m.d_model] {
            return Err(Error::Shape {
                context: "directions".into(),
                expected: format!("[{n}, {}]", m.d_model),
                found: format!("{:?}", m.directions.shape),
            });
        }
        if m.directions.file != "directions.f32" {
            return Err(Error::format("concept vector blob must be `directions.f32`"));
        }
        let blob = store::read_blob(&dir.join(&m.directions.file), &m.directions.shape, "directions")?;
        let mat = blob.to_matrix()?;
        let mat = if n == 0 { Matrix::zeros(0, m.d_model) } else { mat };
        let mut vectors = Vec::with_capacity(n);
        for (e, row) in m.vectors.into_iter().zip(mat.iter_rows()) {
            if !(e.raw_norm > 0.0 && e.raw_norm.is_finite()) {
                return Err(Error::validation(format!(
                    "vector {} vs {} @ {} has invalid raw_norm {}",
                    e.target_label, e.contrast, e.layer, e.raw_norm
                )));
            }
            let mut v = ConceptVector::from_raw(e.target_label, e.contrast, e.layer, row)?;
            v.raw_norm = e.raw_norm;
            vectors.push(v);
        }
        Self::new(m.d_model, vectors)
    }
}
