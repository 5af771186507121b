use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use moralgeo_core::store::load_activation_set;
use moralgeo_core::{ActivationSet, ConceptVector, ConceptVectorSet, Contrast};
use serde::Serialize;

use crate::VectorChoice;

/// Writes `text` to `path`, creating parent directories.
pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Writes to `out` when given, stdout otherwise.
pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            let mut s = std::io::stdout().lock();
            s.write_all(text.as_bytes()).context("writing stdout")?;
            s.flush().context("writing stdout")
        }
    }
}

pub fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| moralgeo_core::Error::Format(format!("{}: {e}", path.display())).into())
}

/// `rest` means every other label; anything else names one label.
pub fn parse_contrast(s: &str) -> Contrast {
    if s == "rest" {
        Contrast::VsRest
    } else {
        Contrast::vs(s)
    }
}

/// Fails with an I/O error when `path` is not an existing directory, so a
/// mistyped path exits as an environment failure rather than bad data.
pub fn require_dir(path: &Path) -> Result<()> {
    match fs::metadata(path) {
        Ok(m) if m.is_dir() => Ok(()),
        Ok(_) => Err(std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"))
            .with_context(|| path.display().to_string()),
        Err(e) => Err(e).with_context(|| path.display().to_string()),
    }
}

pub fn activations(path: &Path) -> Result<ActivationSet> {
    require_dir(path)?;
    load_activation_set(path).with_context(|| format!("loading activations from {}", path.display()))
}

pub fn vector_set(path: &Path) -> Result<ConceptVectorSet> {
    require_dir(path)?;
    ConceptVectorSet::load(path).with_context(|| format!("loading concept vectors from {}", path.display()))
}

/// Resolves the contrast for `label`: the requested one, or the only one
/// present.
pub fn resolve_contrast(set: &ConceptVectorSet, choice: &VectorChoice) -> Result<Contrast> {
    if let Some(c) = &choice.contrast {
        return Ok(parse_contrast(c));
    }
    let available = set.contrasts_for(&choice.label);
    match available.as_slice() {
        [] => bail!(invalid(format!("no concept vectors for label `{}`", choice.label))),
        [one] => Ok(one.clone()),
        many => {
            let names: Vec<String> = many.iter().map(ToString::to_string).collect();
            bail!(invalid(format!(
                "label `{}` has vectors for several contrasts ({}); pass --contrast",
                choice.label,
                names.join(", ")
            )))
        }
    }
}

/// Every vector of the chosen family, ascending by layer.
pub fn choose_vectors(set: &ConceptVectorSet, choice: &VectorChoice) -> Result<Vec<ConceptVector>> {
    let contrast = resolve_contrast(set, choice)?;
    let mut out: Vec<ConceptVector> = set
        .vectors()
        .iter()
        .filter(|v| v.target_label == choice.label && v.contrast == contrast)
        .cloned()
        .collect();
    if out.is_empty() {
        bail!(invalid(format!(
            "no concept vectors for `{}` vs `{contrast}`",
            choice.label
        )));
    }
    out.sort_by_key(|v| v.layer);
    Ok(out)
}

pub fn vector_at(set: &ConceptVectorSet, choice: &VectorChoice, layer: usize) -> Result<ConceptVector> {
    choose_vectors(set, choice)?
        .into_iter()
        .find(|v| v.layer == layer)
        .ok_or_else(|| invalid(format!("no `{}` concept vector at layer {layer}", choice.label)).into())
}

/// A validation-class error carrying `msg`.
pub fn invalid(msg: impl Into<String>) -> moralgeo_core::Error {
    moralgeo_core::Error::validation(msg)
}
