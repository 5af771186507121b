//! Sparse-autoencoder feature attribution: encoding, concept fingerprints,
//! layer alignment profiles, evidence mining and interpretation records.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::concept::ConceptVector;
use crate::error::{Error, Result};
use crate::store::{ActivationKind, SaeDictionary, TokenCorpus};
use crate::tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureActivation {
    pub feature_index: usize,
    pub value: f64,
}

fn check_dim(dict: &SaeDictionary, len: usize) -> Result<()> {
    if len != dict.d_model() {
        return Err(Error::Dimension {
            expected: dict.d_model(),
            found: len,
        });
    }
    Ok(())
}

/// `W_enc x + b_enc`, before any nonlinearity.
pub fn sae_pre_activations(x: &[f64], dict: &SaeDictionary) -> Result<Vec<f64>> {
    check_dim(dict, x.len())?;
    let mut pre = dict.encoder().matvec(x);
    for (p, b) in pre.iter_mut().zip(dict.encoder_bias()) {
        *p += b;
    }
    Ok(pre)
}

/// Encodes `x` into its active features, sorted by feature index.
///
/// ReLU is applied first. In top-k mode the `k` largest positive values
/// survive, ties at the cutoff going to the lower index; in threshold mode
/// every value strictly above `theta` survives.
pub fn sae_encode(x: &[f64], dict: &SaeDictionary) -> Result<Vec<FeatureActivation>> {
    let pre = sae_pre_activations(x, dict)?;
    let mut active: Vec<FeatureActivation> = pre
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| FeatureActivation {
            feature_index: i,
            value: v,
        })
        .collect();
    match dict.meta().activation_kind {
        ActivationKind::Topk => {
            let k = dict.k();
            if active.len() > k {
                active.sort_by(|a, b| {
                    b.value
                        .total_cmp(&a.value)
                        .then(a.feature_index.cmp(&b.feature_index))
                });
                active.truncate(k);
                active.sort_by_key(|f| f.feature_index);
            }
        }
        ActivationKind::BatchtopkThreshold { theta } => active.retain(|f| f.value > theta),
    }
    Ok(active)
}

/// `x_hat = sum f_i d_i + b_dec`.
pub fn sae_decode(features: &[FeatureActivation], dict: &SaeDictionary) -> Result<Vec<f64>> {
    let mut out = dict.decoder_bias().to_vec();
    for f in features {
        if f.feature_index >= dict.n_features() {
            return Err(Error::OutOfRange {
                what: "feature index",
                index: f.feature_index,
                limit: dict.n_features(),
            });
        }
        tensor::axpy(&mut out, f.value, dict.decoder_direction(f.feature_index));
    }
    Ok(out)
}

/// Cosine between every decoder direction and `v`.
pub fn feature_cosines(dict: &SaeDictionary, v: &[f64]) -> Result<Vec<f64>> {
    check_dim(dict, v.len())?;
    let vn = tensor::norm(v);
    if vn == 0.0 {
        return Err(Error::validation("cannot take cosines against a zero vector"));
    }
    (0..dict.n_features())
        .map(|i| {
            let dn = dict.decoder_norm(i);
            if dn == 0.0 {
                return Err(Error::validation(format!(
                    "decoder column for feature {i} has zero norm"
                )));
            }
            let c = tensor::dot(dict.decoder_direction(i), v) / (dn * vn);
            Ok(c.clamp(-1.0, 1.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerprintEntry {
    pub feature_index: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFingerprint {
    pub concept: String,
    pub layer: usize,
    pub entries: Vec<FingerprintEntry>,
}

fn by_cosine_desc(a: &FingerprintEntry, b: &FingerprintEntry) -> std::cmp::Ordering {
    b.cosine
        .total_cmp(&a.cosine)
        .then(a.feature_index.cmp(&b.feature_index))
}

/// The `k` largest cosines, descending, ties broken by ascending index.
pub fn top_features(cosines: &[f64], k: usize) -> Result<Vec<FingerprintEntry>> {
    if k == 0 {
        return Err(Error::validation("fingerprint size must be at least 1"));
    }
    if k > cosines.len() {
        return Err(Error::OutOfRange {
            what: "fingerprint size",
            index: k,
            limit: cosines.len(),
        });
    }
    let mut all: Vec<FingerprintEntry> = cosines
        .iter()
        .enumerate()
        .map(|(feature_index, &cosine)| FingerprintEntry {
            feature_index,
            cosine,
        })
        .collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_cosine_desc);
        all.truncate(k);
    }
    all.sort_by(by_cosine_desc);
    Ok(all)
}

pub fn fingerprint(dict: &SaeDictionary, v: &ConceptVector, k: usize) -> Result<FeatureFingerprint> {
    let cos = feature_cosines(dict, &v.direction)?;
    Ok(FeatureFingerprint {
        concept: v.descriptor(),
        layer: v.layer,
        entries: top_features(&cos, k)?,
    })
}

// ---------------------------------------------------------------------------
// Layer alignment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPoint {
    pub layer: usize,
    pub observed_mean_top_n: f64,
    pub baseline_mean_top_n: f64,
    pub baseline_trials: usize,
}

fn mean_top_n(cosines: &[f64], n: usize) -> Result<f64> {
    let top = top_features(cosines, n)?;
    Ok(top.iter().map(|e| e.cosine).sum::<f64>() / n as f64)
}

/// A unit vector drawn uniformly from the sphere.
pub fn random_unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = tensor::norm(&v);
        if n > 0.0 {
            return tensor::scale(&v, 1.0 / n);
        }
    }
}

/// Mean top-`n` cosine per layer for the true concept vector and, as a
/// baseline, averaged over `trials` random unit directions. Layer `l` draws
/// from ChaCha8 stream `l` of `seed`, so results do not depend on which
/// other layers are present.
pub fn layer_alignment_profile(
    dicts: &[SaeDictionary],
    vectors: &[ConceptVector],
    top_n: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<AlignmentPoint>> {
    if trials == 0 {
        return Err(Error::validation("baseline needs at least one trial"));
    }
    let mut dl: Vec<usize> = dicts.iter().map(SaeDictionary::layer).collect();
    let mut vl: Vec<usize> = vectors.iter().map(|v| v.layer).collect();
    dl.sort_unstable();
    vl.sort_unstable();
    if dl != vl || dl.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::validation(format!(
            "dictionary layers {dl:?} do not match concept-vector layers {vl:?}"
        )));
    }
    let mut points = dicts
        .par_iter()
        .map(|dict| {
            let layer = dict.layer();
            let v = vectors.iter().find(|v| v.layer == layer).expect("layers matched");
            let observed = mean_top_n(&feature_cosines(dict, &v.direction)?, top_n)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(layer as u64);
            let mut acc = 0.0;
            for _ in 0..trials {
                let r = random_unit_vector(&mut rng, dict.d_model());
                acc += mean_top_n(&feature_cosines(dict, &r)?, top_n)?;
            }
            Ok(AlignmentPoint {
                layer,
                observed_mean_top_n: observed,
                baseline_mean_top_n: acc / trials as f64,
                baseline_trials: trials,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by_key(|p| p.layer);
    Ok(points)
}

// ---------------------------------------------------------------------------
// Evidence mining
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceWindow {
    pub doc_id: String,
    pub peak_token_index: usize,
    pub peak_activation: f64,
    /// Inclusive token range.
    pub window_start: usize,
    pub window_end: usize,
    pub text: String,
}

/// Inclusive `[peak - window, peak + window]`, clipped to `[0, n_tokens)`.
pub fn window_bounds(peak: usize, window: usize, n_tokens: usize) -> (usize, usize) {
    let start = peak.saturating_sub(window);
    let end = (peak + window).min(n_tokens.saturating_sub(1));
    (start, end)
}

/// Lowercased text with whitespace runs collapsed to one space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Post-ReLU activation of one feature at every token of `x`.
fn token_activations(rows: &tensor::Matrix, dict: &SaeDictionary, feature: usize) -> Vec<f64> {
    let w = dict.encoder().row(feature);
    let b = dict.encoder_bias()[feature];
    rows.iter_rows()
        .map(|r| (tensor::dot(w, r) + b).max(0.0))
        .collect()
}

/// Highest value of one feature's post-ReLU activation over a corpus.
pub fn feature_max_activation(corpus: &TokenCorpus, dict: &SaeDictionary, feature: usize) -> Result<f64> {
    check_feature(dict, feature)?;
    check_dim(dict, corpus.d_model())?;
    Ok(corpus
        .documents()
        .par_iter()
        .map(|d| {
            token_activations(&d.residuals, dict, feature)
                .into_iter()
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max))
}

fn check_feature(dict: &SaeDictionary, feature: usize) -> Result<()> {
    if feature >= dict.n_features() {
        return Err(Error::OutOfRange {
            what: "feature index",
            index: feature,
            limit: dict.n_features(),
        });
    }
    Ok(())
}

/// Peak-centered windows from the `top_docs` documents where `feature`
/// fires hardest, ordered by peak activation (descending) then doc_id.
///
/// Documents where the feature never fires are skipped. Windows whose
/// normalized text repeats an earlier one are dropped.
pub fn mine_evidence(
    corpus: &TokenCorpus,
    dict: &SaeDictionary,
    feature: usize,
    top_docs: usize,
    window: usize,
) -> Result<Vec<EvidenceWindow>> {
    check_feature(dict, feature)?;
    check_dim(dict, corpus.d_model())?;
    if top_docs == 0 {
        return Err(Error::validation("top_docs must be at least 1"));
    }
    if corpus.documents().is_empty() {
        return Err(Error::validation("token corpus has no documents"));
    }
    let mut peaks: Vec<(usize, usize, f64)> = corpus
        .documents()
        .par_iter()
        .enumerate()
        .filter_map(|(di, d)| {
            let acts = token_activations(&d.residuals, dict, feature);
            let mut best: Option<(usize, f64)> = None;
            for (t, &a) in acts.iter().enumerate() {
                if a > 0.0 && best.is_none_or(|(_, b)| a > b) {
                    best = Some((t, a));
                }
            }
            best.map(|(t, a)| (di, t, a))
        })
        .collect();
    let docs = corpus.documents();
    peaks.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| docs[a.0].doc_id.cmp(&docs[b.0].doc_id))
    });
    peaks.truncate(top_docs);

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (di, peak, act) in peaks {
        let doc = &docs[di];
        let (start, end) = window_bounds(peak, window, doc.tokens.len());
        let text: String = doc.tokens[start..=end].concat();
        if seen.insert(normalize_text(&text)) {
            out.push(EvidenceWindow {
                doc_id: doc.doc_id.clone(),
                peak_token_index: peak,
                peak_activation: act,
                window_start: start,
                window_end: end,
                text,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Interpretation prompt and records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetadata {
    pub layer: usize,
    pub feature_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine: Option<f64>,
}

const PROMPT_HEADER: &str = "\
Role: You are interpreting a sparse autoencoder (SAE) feature from an LLM.
Goal: Infer the most likely semantic pattern that triggers the feature, based ONLY on the evidence snippets.

Instructions:
1. Neutral Description First: Describe the dominant pattern (topic, style, rhetorical function, or social behavior) neutrally.
2. Conservative MFT Mapping: Map to a Moral Foundations Theory category only if strongly supported. Otherwise, output mft_alignment=\"none\". Do not force morality; many features are not moral.
3. Format: Provide a short label (5-10 words) and a 1-2 sentence description.
4. Citations: Cite evidence_ids (indices of snippets) that justify your decision.

Moral Foundations Theory (MFT) definitions:
- Care/harm: dislike others' suffering; kindness, gentleness, nurturance vs cruelty, violence.
- Fairness/cheating: justice, rights, autonomy vs fraud, exploitation, cheating.
- Loyalty/betrayal: group allegiance, patriotism, self-sacrifice vs betrayal, treason, disloyalty.
- Authority/subversion: respect for legitimate authority, leadership/followership, traditions vs defiance, disrespect, subversion.
- Sanctity/degradation: purity, elevation above the carnal, disgust sensitivity vs degradation, contamination, depravity.
";

const PROMPT_SCHEMA: &str = "\
Output: a single JSON object with exactly these fields:
- short_label: string, 5-10 words
- long_description: string, 1-2 sentences
- mft_alignment: one of \"care\", \"fairness\", \"loyalty\", \"authority\", \"sanctity\", \"none\"
- mft_polarity: one of \"virtue\", \"vice\", \"mixed\", \"none\"
- rationale: string grounded in specific snippets
- evidence_ids: list of 1-6 snippet indices
- confidence: number in [0, 1]
";

/// Renders the annotation prompt for one feature. Snippets are numbered
/// from 1 in the order given.
pub fn build_interpretation_prompt(meta: &FeatureMetadata, windows: &[EvidenceWindow]) -> Result<String> {
    if windows.is_empty() {
        return Err(Error::validation("interpretation prompt needs at least one evidence window"));
    }
    let meta_json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    let mut s = String::from(PROMPT_HEADER);
    s.push_str("\nFeature metadata:\n");
    s.push_str(&meta_json);
    s.push_str("\n\nEvidence snippets:\n");
    for (i, w) in windows.iter().enumerate() {
        let one_line = w.text.split_whitespace().collect::<Vec<_>>().join(" ");
        s.push_str(&format!("{}: {}\n", i + 1, one_line));
    }
    s.push('\n');
    s.push_str(PROMPT_SCHEMA);
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MftAlignment {
    Care,
    Fairness,
    Loyalty,
    Authority,
    Sanctity,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MftPolarity {
    Virtue,
    Vice,
    Mixed,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationRecord {
    pub short_label: String,
    pub long_description: String,
    pub mft_alignment: MftAlignment,
    pub mft_polarity: MftPolarity,
    pub rationale: String,
    pub evidence_ids: Vec<u32>,
    pub confidence: f64,
}

impl InterpretationRecord {
    /// Soft issues that do not invalidate the record.
    pub fn warnings(&self) -> Vec<String> {
        let words = self.short_label.split_whitespace().count();
        if (5..=10).contains(&words) {
            Vec::new()
        } else {
            vec![format!("short_label has {words} words, expected 5-10")]
        }
    }
}

const RECORD_FIELDS: [&str; 7] = [
    "short_label",
    "long_description",
    "mft_alignment",
    "mft_polarity",
    "rationale",
    "evidence_ids",
    "confidence",
];

fn schema_err(field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        field: field.to_string(),
        message: message.into(),
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, field: &str) -> Result<String> {
    match obj.get(field) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(schema_err(field, "must not be empty")),
        Some(_) => Err(schema_err(field, "must be a string")),
        None => Err(schema_err(field, "missing")),
    }
}

fn enum_field<T: serde::de::DeserializeOwned>(
    obj: &serde_json::Map<String, Value>,
    field: &str,
    allowed: &str,
) -> Result<T> {
    let s = string_field(obj, field)?;
    serde_json::from_value(Value::String(s.clone()))
        .map_err(|_| schema_err(field, format!("`{s}` is not one of {allowed}")))
}

/// Parses an annotator response, enforcing every field constraint.
/// With `n_snippets`, evidence ids must also point at existing snippets.
pub fn validate_interpretation(json_text: &str, n_snippets: Option<usize>) -> Result<InterpretationRecord> {
    let value: Value = serde_json::from_str(json_text)
        .map_err(|e| Error::format(format!("interpretation record is not valid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(Error::format("interpretation record must be a JSON object"));
    };
    if let Some(extra) = obj.keys().find(|k| !RECORD_FIELDS.contains(&k.as_str())) {
        return Err(schema_err(extra, "unknown field"));
    }
    let short_label = string_field(&obj, "short_label")?;
    let long_description = string_field(&obj, "long_description")?;
    let mft_alignment = enum_field(
        &obj,
        "mft_alignment",
        "care|fairness|loyalty|authority|sanctity|none",
    )?;
    let mft_polarity = enum_field(&obj, "mft_polarity", "virtue|vice|mixed|none")?;
    let rationale = string_field(&obj, "rationale")?;

    let ids = match obj.get("evidence_ids") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(schema_err("evidence_ids", "must be a list")),
        None => return Err(schema_err("evidence_ids", "missing")),
    };
    if ids.is_empty() || ids.len() > 6 {
        return Err(schema_err(
            "evidence_ids",
            format!("must hold 1-6 items, found {}", ids.len()),
        ));
    }
    let evidence_ids = ids
        .iter()
        .map(|v| {
            let id = v
                .as_u64()
                .filter(|&n| n >= 1 && n <= u32::MAX as u64)
                .ok_or_else(|| schema_err("evidence_ids", format!("`{v}` is not a positive integer")))?;
            if let Some(n) = n_snippets {
                if id as usize > n {
                    return Err(schema_err(
                        "evidence_ids",
                        format!("id {id} exceeds snippet count {n}"),
                    ));
                }
            }
            Ok(id as u32)
        })
        .collect::<Result<Vec<_>>>()?;

    let confidence = match obj.get("confidence") {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| schema_err("confidence", "must be a number"))?,
        None => return Err(schema_err("confidence", "missing")),
    };
    if !(0.0..=1.0).contains(&confidence) {
        return Err(schema_err(
            "confidence",
            format!("{confidence} outside [0, 1]"),
        ));
    }

    Ok(InterpretationRecord {
        short_label,
        long_description,
        mft_alignment,
        mft_polarity,
        rationale,
        evidence_ids,
        confidence,
    })
}

/// Words of `label` that appear in `lexicon`, compared case-insensitively
/// as whole alphanumeric tokens. Each match is returned once, with its
/// original casing, in order of first appearance.
pub fn lexicon_overlap(label: &str, lexicon: &[String]) -> Vec<String> {
    let lex: HashSet<String> = lexicon.iter().map(|w| w.trim().to_lowercase()).collect();
    let mut seen = HashSet::new();
    label
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| {
            let low = t.to_lowercase();
            lex.contains(&low) && seen.insert(low)
        })
        .map(str::to_string)
        .collect()
}
