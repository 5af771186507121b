use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use moralgeo_core::concept::build_all_vectors;
use moralgeo_core::geometry::project_scores;
use moralgeo_core::report::projection_csv;
use moralgeo_core::store::{self, ManifestKind};
use moralgeo_core::{ConceptVectorSet, Contrast, ContrastSpec};
use serde_json::{json, Value};

use crate::io::{self, invalid};
use crate::{GeometryInputs, VectorChoice};

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Store directory (any kind).
    pub path: PathBuf,
    /// Write the JSON summary here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn summarize(path: &Path, kind: ManifestKind) -> Result<Value> {
    Ok(match kind {
        ManifestKind::ActivationSet => {
            let s = store::load_activation_set(path)?;
            let rows: usize = s.inputs().iter().map(|i| i.repeat_count).sum();
            json!({
                "model_id": s.model_id(),
                "d_model": s.d_model(),
                "layers": s.layers(),
                "label_vocab": s.label_vocab(),
                "n_inputs": s.inputs().len(),
                "n_rows": rows,
            })
        }
        ManifestKind::Sae => {
            let raw: Value = io::read_json(&path.join(store::MANIFEST_FILE))?;
            let weights = raw.get("tensors").is_some();
            let meta = if weights {
                store::load_sae(path)?.meta().clone()
            } else {
                store::load_sae_metadata(path)?
            };
            json!({
                "layer": meta.layer,
                "d_model": meta.d_model,
                "n_features": meta.n_features,
                "k": meta.k,
                "expansion_factor": meta.expansion_factor(),
                "weights_loaded": weights,
            })
        }
        ManifestKind::TokenCorpus => {
            let c = store::load_token_corpus(path)?;
            let tokens: usize = c.documents().iter().map(|d| d.tokens.len()).sum();
            json!({
                "d_model": c.d_model(),
                "n_documents": c.documents().len(),
                "n_tokens": tokens,
            })
        }
        ManifestKind::SweepResult => {
            let r = store::load_sweep_result(path)?;
            json!({
                "foundation": r.foundation,
                "mode": r.mode,
                "layer": r.layer,
                "alphas": r.alphas(),
                "has_option_logits": r.option_logits().is_some(),
                "has_capability": r.capability().is_some(),
            })
        }
        ManifestKind::ConceptVectors => {
            let v = ConceptVectorSet::load(path)?;
            let mut layers: Vec<usize> = v.vectors().iter().map(|v| v.layer).collect();
            layers.sort_unstable();
            layers.dedup();
            json!({
                "d_model": v.d_model(),
                "n_vectors": v.vectors().len(),
                "layers": layers,
            })
        }
    })
}

pub fn validate(a: ValidateArgs) -> Result<()> {
    io::require_dir(&a.path)?;
    let kind = store::manifest_kind(&a.path)?;
    let summary = summarize(&a.path, kind).with_context(|| format!("validating {}", a.path.display()))?;
    let report = json!({
        "path": a.path.display().to_string(),
        "kind": kind.as_str(),
        "valid": true,
        "summary": summary,
    });
    io::emit(a.out.as_deref(), &io::json(&report)?)
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Activation-set directory.
    #[arg(long)]
    pub activations: PathBuf,
    /// `rest`, a contrast label such as `social_norm`, or `pairwise` for
    /// one vector per pair of targets.
    #[arg(long)]
    pub contrast: String,
    /// Target labels; defaults to every label other than the contrast.
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<String>>,
    /// Layers to build; defaults to every stored layer.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Output concept-vector directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn build(a: BuildArgs) -> Result<()> {
    let set = io::activations(&a.activations)?;
    let vocab = set.label_vocab().to_vec();
    let mut specs = Vec::new();
    if a.contrast == "pairwise" {
        let targets = a.targets.clone().unwrap_or_else(|| vocab.clone());
        if targets.len() < 2 {
            return Err(invalid("pairwise vectors need at least two targets").into());
        }
        for (i, t) in targets.iter().enumerate() {
            for other in &targets[i + 1..] {
                specs.push(ContrastSpec::new(t.clone(), Contrast::vs(other.clone())));
            }
        }
    } else {
        let contrast = io::parse_contrast(&a.contrast);
        let targets = a.targets.clone().unwrap_or_else(|| {
            vocab
                .iter()
                .filter(|l| !matches!(&contrast, Contrast::VsLabel { label } if label == *l))
                .cloned()
                .collect()
        });
        specs.extend(targets.into_iter().map(|t| ContrastSpec::new(t, contrast.clone())));
    }
    if let Some(layers) = &a.layers {
        specs = specs.into_iter().map(|s| s.with_layers(layers.clone())).collect();
    }
    let vectors = build_all_vectors(&set, &specs)?;
    log::info!("built {} vectors from {} specs", vectors.len(), specs.len());
    ConceptVectorSet::new(set.d_model(), vectors)?.save(&a.out)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub inputs: GeometryInputs,
    #[command(flatten)]
    pub choice: VectorChoice,
    #[arg(long)]
    pub layer: usize,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn project(a: ProjectArgs) -> Result<()> {
    let set = io::activations(&a.inputs.activations)?;
    let vs = io::vector_set(&a.inputs.vectors)?;
    let v = io::vector_at(&vs, &a.choice, a.layer)?;
    let scores = project_scores(&set, &v)?;
    io::write_file(&a.out, &projection_csv(&scores)?)
}
