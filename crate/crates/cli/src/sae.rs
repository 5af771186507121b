use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use moralgeo_core::report::{alignment_csv, fingerprint_csv};
use moralgeo_core::saelab::{
    build_interpretation_prompt, fingerprint as fingerprint_of, layer_alignment_profile, lexicon_overlap,
    mine_evidence, validate_interpretation, FeatureMetadata,
};
use moralgeo_core::store::{load_sae, load_token_corpus, MANIFEST_FILE};
use moralgeo_core::{EvidenceWindow, SaeDictionary};
use serde_json::json;

use crate::io::{self, invalid};
use crate::VectorChoice;

/// Loads every dictionary named by `paths`. A path without a manifest is
/// treated as a folder of dictionaries, one per subdirectory.
pub fn load_saes(paths: &[PathBuf]) -> Result<Vec<SaeDictionary>> {
    let mut dirs = Vec::new();
    for p in paths {
        io::require_dir(p)?;
        if p.join(MANIFEST_FILE).is_file() {
            dirs.push(p.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("listing {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join(MANIFEST_FILE).is_file())
            .collect();
        subs.sort();
        if subs.is_empty() {
            return Err(invalid(format!("no SAE dictionaries under {}", p.display())).into());
        }
        dirs.extend(subs);
    }
    let mut dicts = dirs
        .iter()
        .map(|d| load_sae(d).with_context(|| format!("loading SAE from {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    dicts.sort_by_key(SaeDictionary::layer);
    Ok(dicts)
}

fn load_one(path: &Path) -> Result<SaeDictionary> {
    io::require_dir(path)?;
    load_sae(path).with_context(|| format!("loading SAE from {}", path.display()))
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// SAE directories, or folders holding one per subdirectory.
    #[arg(long, required = true)]
    pub sae: Vec<PathBuf>,
    /// Concept-vector directory.
    #[arg(long)]
    pub vectors: PathBuf,
    #[command(flatten)]
    pub choice: VectorChoice,
    /// Cosines averaged per direction.
    #[arg(long, default_value_t = 3)]
    pub top_n: usize,
    /// Random directions in the baseline.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn align(a: AlignArgs) -> Result<()> {
    let dicts = load_saes(&a.sae)?;
    let vs = io::vector_set(&a.vectors)?;
    let vectors = dicts
        .iter()
        .map(|d| io::vector_at(&vs, &a.choice, d.layer()))
        .collect::<Result<Vec<_>>>()?;
    let points = layer_alignment_profile(&dicts, &vectors, a.top_n, a.trials, a.seed)?;
    io::write_file(&a.out, &alignment_csv(&points)?)
}

#[derive(Args, Debug)]
pub struct FingerprintArgs {
    /// SAE directory; its layer selects the concept vector.
    #[arg(long)]
    pub sae: PathBuf,
    /// Concept-vector directory.
    #[arg(long)]
    pub vectors: PathBuf,
    #[command(flatten)]
    pub choice: VectorChoice,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn fingerprint(a: FingerprintArgs) -> Result<()> {
    let dict = load_one(&a.sae)?;
    let vs = io::vector_set(&a.vectors)?;
    let v = io::vector_at(&vs, &a.choice, dict.layer())?;
    let fp = fingerprint_of(&dict, &v, a.top_k)?;
    io::write_file(&a.out, &fingerprint_csv(&fp)?)
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[arg(long)]
    pub sae: PathBuf,
    /// Token-corpus directory.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub feature: usize,
    /// Documents to keep, ranked by peak activation.
    #[arg(long, default_value_t = 20)]
    pub top_docs: usize,
    /// Tokens kept on each side of the peak.
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn mine(a: MineArgs) -> Result<()> {
    let dict = load_one(&a.sae)?;
    io::require_dir(&a.corpus)?;
    let corpus = load_token_corpus(&a.corpus)
        .with_context(|| format!("loading corpus from {}", a.corpus.display()))?;
    let windows = mine_evidence(&corpus, &dict, a.feature, a.top_docs, a.window)?;
    io::emit(a.out.as_deref(), &io::json(&windows)?)
}

#[derive(Args, Debug)]
pub struct PromptArgs {
    /// Evidence windows as written by `sae mine`.
    #[arg(long)]
    pub windows: PathBuf,
    #[arg(long)]
    pub layer: usize,
    #[arg(long)]
    pub feature: usize,
    #[arg(long)]
    pub model_id: Option<String>,
    /// Concept descriptor the feature was found for.
    #[arg(long)]
    pub concept: Option<String>,
    /// Cosine between the feature and that concept.
    #[arg(long)]
    pub cosine: Option<f64>,
    /// Output text; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn prompt(a: PromptArgs) -> Result<()> {
    let windows: Vec<EvidenceWindow> = io::read_json(&a.windows)?;
    let meta = FeatureMetadata {
        layer: a.layer,
        feature_index: a.feature,
        model_id: a.model_id,
        concept: a.concept,
        cosine: a.cosine,
    };
    io::emit(a.out.as_deref(), &build_interpretation_prompt(&meta, &windows)?)
}

#[derive(Args, Debug)]
pub struct ValidateInterpArgs {
    /// Interpretation record (JSON object).
    #[arg(long)]
    pub record: PathBuf,
    /// Number of snippets shown, to bound evidence_ids.
    #[arg(long)]
    pub snippets: Option<usize>,
    /// Word list, one per line, to match against the short label.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn validate_interp(a: ValidateInterpArgs) -> Result<()> {
    let text = fs::read_to_string(&a.record).with_context(|| format!("reading {}", a.record.display()))?;
    let record = validate_interpretation(&text, a.snippets)?;
    let warnings = record.warnings();
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut out = json!({ "valid": true, "record": record, "warnings": warnings });
    if let Some(p) = &a.lexicon {
        let words: Vec<String> = fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        out["lexicon_overlap"] = json!(lexicon_overlap(&record.short_label, &words));
    }
    io::emit(a.out.as_deref(), &io::json(&out)?)
}
