//! Residual-stream interventions, logit-based questionnaire scoring, alpha
//! sweeps and slope fits.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::argmax_lowest;
use crate::mft::{Foundation, FoundationScorecard, Subscale};
use crate::saelab::sae_encode;
use crate::store::{ItemRef, OptionLogits, SaeDictionary, SweepMode, SweepResult};
use crate::tensor::{self, Matrix};
use crate::toymodel::{tokenize, ResidualEdit, ToyModel};

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampFeature {
    pub index: usize,
    pub f_max: f64,
}

#[derive(Debug, Clone)]
pub enum Steer {
    /// Add `alpha * v` for a unit vector `v`.
    Direction(Vec<f64>),
    /// Move the listed SAE features toward `multiple * f_max`, scaled by
    /// `alpha`: `alpha = 1` clamps exactly, `alpha = 0` leaves `h` alone.
    Clamp {
        dict: Arc<SaeDictionary>,
        features: Vec<ClampFeature>,
        multiple: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Intervention {
    pub layers: Vec<usize>,
    pub steer: Steer,
    pub alpha: f64,
}

impl Intervention {
    pub fn add(layers: Vec<usize>, direction: Vec<f64>, alpha: f64) -> Result<Self> {
        let n = tensor::norm(&direction);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::validation(format!(
                "steering direction must be unit-norm, found norm {n}"
            )));
        }
        Self::checked(layers, Steer::Direction(direction), alpha)
    }

    pub fn clamp(
        layers: Vec<usize>,
        dict: Arc<SaeDictionary>,
        features: Vec<ClampFeature>,
        multiple: f64,
        alpha: f64,
    ) -> Result<Self> {
        validate_clamp(&dict, &features, multiple)?;
        Self::checked(
            layers,
            Steer::Clamp {
                dict,
                features,
                multiple,
            },
            alpha,
        )
    }

    pub fn from_steer(layers: Vec<usize>, steer: Steer, alpha: f64) -> Result<Self> {
        match steer {
            Steer::Direction(v) => Self::add(layers, v, alpha),
            Steer::Clamp {
                dict,
                features,
                multiple,
            } => Self::clamp(layers, dict, features, multiple, alpha),
        }
    }

    fn checked(mut layers: Vec<usize>, steer: Steer, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::validation("alpha must be finite"));
        }
        layers.sort_unstable();
        layers.dedup();
        Ok(Self {
            layers,
            steer,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        match &self.steer {
            Steer::Direction(v) => v.len(),
            Steer::Clamp { dict, .. } => dict.d_model(),
        }
    }

    pub fn touches(&self, layer: usize) -> bool {
        self.layers.binary_search(&layer).is_ok()
    }
}

fn validate_clamp(dict: &SaeDictionary, features: &[ClampFeature], multiple: f64) -> Result<()> {
    if !multiple.is_finite() || multiple < 0.0 {
        return Err(Error::validation(format!(
            "clamp multiple must be finite and >= 0, found {multiple}"
        )));
    }
    for f in features {
        if f.index >= dict.n_features() {
            return Err(Error::OutOfRange {
                what: "feature index",
                index: f.index,
                limit: dict.n_features(),
            });
        }
        if !f.f_max.is_finite() || f.f_max <= 0.0 {
            return Err(Error::validation(format!(
                "f_max for feature {} must be positive, found {}",
                f.index, f.f_max
            )));
        }
    }
    Ok(())
}

/// Sets each listed feature to `multiple * f_max` by adding the change in
/// its activation along its decoder direction. The SAE's reconstruction
/// error stays in `h` untouched.
pub fn clamp_features(
    h: &[f64],
    dict: &SaeDictionary,
    features: &[ClampFeature],
    multiple: f64,
) -> Result<Vec<f64>> {
    clamp_scaled(h, dict, features, multiple, 1.0)
}

fn clamp_scaled(
    h: &[f64],
    dict: &SaeDictionary,
    features: &[ClampFeature],
    multiple: f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    validate_clamp(dict, features, multiple)?;
    let active = sae_encode(h, dict)?;
    let mut out = h.to_vec();
    for f in features {
        let old = active
            .iter()
            .find(|a| a.feature_index == f.index)
            .map_or(0.0, |a| a.value);
        let delta = multiple * f.f_max - old;
        if delta != 0.0 {
            tensor::axpy(&mut out, alpha * delta, dict.decoder_direction(f.index));
        }
    }
    Ok(out)
}

/// Applies `iv` to one residual vector. `alpha == 0` returns `h` unchanged.
pub fn apply_intervention(h: &[f64], iv: &Intervention) -> Result<Vec<f64>> {
    if h.len() != iv.dim() {
        return Err(Error::Dimension {
            expected: iv.dim(),
            found: h.len(),
        });
    }
    if iv.alpha == 0.0 {
        return Ok(h.to_vec());
    }
    match &iv.steer {
        Steer::Direction(v) => {
            let mut out = h.to_vec();
            tensor::axpy(&mut out, iv.alpha, v);
            Ok(out)
        }
        Steer::Clamp {
            dict,
            features,
            multiple,
        } => clamp_scaled(h, dict, features, *multiple, iv.alpha),
    }
}

/// Adapts an [`Intervention`] to the toy model's edit hook: every position
/// of every listed layer is edited.
pub struct InterventionEdit<'a>(pub &'a Intervention);

impl ResidualEdit for InterventionEdit<'_> {
    fn edit(&self, layer: usize, residual: &mut Matrix) {
        let iv = self.0;
        if iv.alpha == 0.0 || !iv.touches(layer) {
            return;
        }
        for t in 0..residual.rows() {
            let row = residual.row_mut(t);
            let new = apply_intervention(row, iv).expect("dimension checked by caller");
            row.copy_from_slice(&new);
        }
    }
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Probability-weighted mean rating over five option logits.
pub fn expected_likert(logits: &[f64; 5]) -> Result<f64> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::validation("option logits must be finite"));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (t, l) in logits.iter().enumerate() {
        let e = (l - m).exp();
        num += (t + 1) as f64 * e;
        den += e;
    }
    Ok((num / den).clamp(1.0, 5.0))
}

/// Aggregates per-item option logits into a scorecard: item scores by
/// [`expected_likert`], averaged per subscale.
pub fn scorecard_from_logits(items: &[ItemRef], logits: &[[f64; 5]]) -> Result<FoundationScorecard> {
    if items.len() != logits.len() {
        return Err(Error::validation(format!(
            "{} items but {} logit rows",
            items.len(),
            logits.len()
        )));
    }
    let mut sums = [0.0; 6];
    let mut counts = [0usize; 6];
    for (item, row) in items.iter().zip(logits) {
        let s = expected_likert(row).map_err(|e| Error::Provider {
            item_id: item.item_id.clone(),
            message: e.to_string(),
        })?;
        let k = Subscale::ALL
            .iter()
            .position(|x| *x == item.subscale)
            .expect("subscale in ALL");
        sums[k] += s;
        counts[k] += 1;
    }
    let mut means = [0.0; 6];
    for k in 0..6 {
        if counts[k] == 0 {
            return Err(Error::validation(format!(
                "no items for subscale `{}`",
                Subscale::ALL[k]
            )));
        }
        means[k] = sums[k] / counts[k] as f64;
    }
    Ok(FoundationScorecard::from_subscales(means))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikertItem {
    pub item_id: String,
    pub subscale: Subscale,
    pub prompt: String,
    /// Option identifiers for ratings 1 through 5.
    pub options: Vec<String>,
}

impl LikertItem {
    pub fn item_ref(&self) -> ItemRef {
        ItemRef {
            item_id: self.item_id.clone(),
            subscale: self.subscale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McqAnswer {
    A,
    B,
    C,
    D,
}

impl McqAnswer {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqItem {
    pub item_id: String,
    pub prompt: String,
    pub options: Vec<String>,
    pub answer: McqAnswer,
}

fn read_items<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

fn check_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::validation(format!("duplicate item_id `{id}`")));
        }
    }
    Ok(())
}

pub fn validate_likert_items(items: &[LikertItem]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::validation("questionnaire has no items"));
    }
    for it in items {
        if it.options.len() != 5 {
            return Err(Error::validation(format!(
                "item `{}` has {} options, expected 5",
                it.item_id,
                it.options.len()
            )));
        }
    }
    check_ids(items.iter().map(|i| i.item_id.as_str()))
}

pub fn validate_mcq_items(items: &[McqItem]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::validation("capability set has no items"));
    }
    for it in items {
        if it.options.len() != 4 {
            return Err(Error::validation(format!(
                "item `{}` has {} options, expected 4",
                it.item_id,
                it.options.len()
            )));
        }
    }
    check_ids(items.iter().map(|i| i.item_id.as_str()))
}

pub fn load_likert_items(path: &Path) -> Result<Vec<LikertItem>> {
    let items: Vec<LikertItem> = read_items(path)?;
    validate_likert_items(&items)?;
    Ok(items)
}

pub fn load_mcq_items(path: &Path) -> Result<Vec<McqItem>> {
    let items: Vec<McqItem> = read_items(path)?;
    validate_mcq_items(&items)?;
    Ok(items)
}

/// Anything that can produce one logit per answer option for a prompt,
/// optionally under an intervention.
pub trait LogitProvider: Sync {
    fn option_logits(
        &self,
        prompt: &str,
        options: &[String],
        iv: Option<&Intervention>,
    ) -> Result<Vec<f64>>;
}

/// Option logits of every item under `iv`, in item order.
pub fn questionnaire_logits(
    provider: &dyn LogitProvider,
    items: &[LikertItem],
    iv: Option<&Intervention>,
) -> Result<Vec<[f64; 5]>> {
    items
        .par_iter()
        .map(|it| {
            let fail = |message: String| Error::Provider {
                item_id: it.item_id.clone(),
                message,
            };
            let l = provider
                .option_logits(&it.prompt, &it.options, iv)
                .map_err(|e| fail(e.to_string()))?;
            <[f64; 5]>::try_from(l.as_slice())
                .map_err(|_| fail(format!("provider returned {} logits, expected 5", l.len())))
        })
        .collect()
}

pub fn score_questionnaire(
    provider: &dyn LogitProvider,
    items: &[LikertItem],
    iv: Option<&Intervention>,
) -> Result<FoundationScorecard> {
    validate_likert_items(items)?;
    let logits = questionnaire_logits(provider, items, iv)?;
    let refs: Vec<ItemRef> = items.iter().map(LikertItem::item_ref).collect();
    scorecard_from_logits(&refs, &logits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqScore {
    pub accuracy: f64,
    pub n: usize,
    pub seed: u64,
    /// Sampled item ids, in item-file order.
    pub item_ids: Vec<String>,
}

pub const MCQ_DEFAULT_SAMPLE: usize = 2000;
pub const MCQ_DEFAULT_SEED: u64 = 42;

/// Indices of a seeded uniform sample without replacement, ascending.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > len {
        return Err(Error::validation(format!(
            "sample size {n} must be in 1..={len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Accuracy on a seeded sample of four-option items. The prediction is the
/// highest-logit option, ties going to the earliest option.
pub fn score_mcq(
    provider: &dyn LogitProvider,
    items: &[McqItem],
    iv: Option<&Intervention>,
    sample_n: usize,
    seed: u64,
) -> Result<McqScore> {
    validate_mcq_items(items)?;
    let idx = sample_indices(items.len(), sample_n, seed)?;
    let correct: Vec<bool> = idx
        .par_iter()
        .map(|&i| {
            let it = &items[i];
            let l = provider
                .option_logits(&it.prompt, &it.options, iv)
                .map_err(|e| Error::Provider {
                    item_id: it.item_id.clone(),
                    message: e.to_string(),
                })?;
            if l.len() != 4 || l.iter().any(|x| !x.is_finite()) {
                return Err(Error::Provider {
                    item_id: it.item_id.clone(),
                    message: "expected four finite logits".into(),
                });
            }
            let mut best = 0;
            for (k, v) in l.iter().enumerate().skip(1) {
                if *v > l[best] {
                    best = k;
                }
            }
            Ok(best == it.answer.index())
        })
        .collect::<Result<_>>()?;
    let hits = correct.iter().filter(|&&c| c).count();
    Ok(McqScore {
        accuracy: hits as f64 / idx.len() as f64,
        n: idx.len(),
        seed,
        item_ids: idx.iter().map(|&i| items[i].item_id.clone()).collect(),
    })
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Parses `default`, `qwen` or `csv:<a,b,...>` into an alpha grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = match spec {
        "default" => (-4..=4).map(|i| i as f64 * 0.5).collect(),
        "qwen" => (-4..=4).map(|i| i as f64 * 25.0).collect(),
        _ => {
            let list = spec.strip_prefix("csv:").ok_or_else(|| {
                Error::validation(format!(
                    "unknown grid `{spec}` (expected default, qwen or csv:<list>)"
                ))
            })?;
            list.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::validation(format!("bad alpha `{s}` in grid")))
                })
                .collect::<Result<_>>()?
        }
    };
    validate_grid(&grid)?;
    Ok(grid)
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|a| !a.is_finite()) {
        return Err(Error::validation("alpha grid contains a non-finite value"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("alpha grid must be strictly increasing"));
    }
    if !grid.contains(&0.0) {
        return Err(Error::validation("alpha grid must contain 0"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub foundation: Foundation,
    pub mode: SweepMode,
    pub alphas: Vec<f64>,
    pub layers: Vec<usize>,
}

/// Scores the questionnaire at every (layer, alpha) cell, steering a single
/// layer per cell with the steer returned by `steer_for_layer`. Returns one
/// result per layer, ascending, with raw option logits attached.
pub fn run_sweep(
    provider: &dyn LogitProvider,
    items: &[LikertItem],
    spec: &SweepSpec,
    steer_for_layer: &(dyn Fn(usize) -> Result<Steer> + Sync),
) -> Result<Vec<SweepResult>> {
    validate_grid(&spec.alphas)?;
    validate_likert_items(items)?;
    let mut layers = spec.layers.clone();
    layers.sort_unstable();
    layers.dedup();
    if layers.is_empty() {
        return Err(Error::validation("sweep needs at least one layer"));
    }
    let steers: Vec<Steer> = layers.iter().map(|&l| steer_for_layer(l)).collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..layers.len())
        .flat_map(|li| (0..spec.alphas.len()).map(move |ai| (li, ai)))
        .collect();
    let logits: Vec<Vec<[f64; 5]>> = cells
        .par_iter()
        .map(|&(li, ai)| {
            let iv = Intervention::from_steer(vec![layers[li]], steers[li].clone(), spec.alphas[ai])?;
            questionnaire_logits(provider, items, Some(&iv))
        })
        .collect::<Result<_>>()?;

    let refs: Vec<ItemRef> = items.iter().map(LikertItem::item_ref).collect();
    let mut out = Vec::with_capacity(layers.len());
    for (li, chunk) in logits.chunks(spec.alphas.len()).enumerate() {
        out.push(SweepResult::from_option_logits(
            spec.foundation,
            spec.mode,
            layers[li],
            spec.alphas.clone(),
            OptionLogits {
                items: refs.clone(),
                logits: chunk.to_vec(),
            },
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub beta: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `scores` on `alphas`. Constant scores give
/// `beta = 0` and `r_squared = 0`.
pub fn fit_slope(alphas: &[f64], scores: &[f64]) -> Result<SlopeFit> {
    if alphas.len() != scores.len() {
        return Err(Error::validation(format!(
            "{} alphas but {} scores",
            alphas.len(),
            scores.len()
        )));
    }
    if alphas.len() < 2 {
        return Err(Error::validation("slope fit needs at least two points"));
    }
    if alphas.iter().chain(scores).any(|v| !v.is_finite()) {
        return Err(Error::validation("slope fit inputs must be finite"));
    }
    let mx = tensor::mean(alphas);
    let my = tensor::mean(scores);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in alphas.iter().zip(scores) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::validation("slope fit needs at least two distinct alphas"));
    }
    let beta = sxy / sxx;
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(SlopeFit {
        beta,
        intercept: my - beta * mx,
        r_squared,
    })
}

/// Layer with the largest signed slope; ties go to the lowest layer.
pub fn select_best_layer(fits: &BTreeMap<usize, SlopeFit>) -> Result<usize> {
    argmax_lowest(fits.iter().map(|(&l, f)| (l, f.beta)))
        .ok_or_else(|| Error::validation("no slope fits to choose from"))
}

/// Slope of the target foundation's score for every sweep in `results`
/// that matches `foundation`, keyed by layer.
pub fn fit_sweeps(results: &[SweepResult], foundation: Foundation) -> Result<BTreeMap<usize, SlopeFit>> {
    let mut fits = BTreeMap::new();
    for r in results.iter().filter(|r| r.foundation == foundation) {
        let fit = fit_slope(r.alphas(), &r.series(foundation))?;
        if fits.insert(r.layer, fit).is_some() {
            return Err(Error::validation(format!(
                "more than one `{foundation}` sweep at layer {}",
                r.layer
            )));
        }
    }
    Ok(fits)
}

// ---------------------------------------------------------------------------
// Toy model provider
// ---------------------------------------------------------------------------

/// Reads option logits from the toy model's last position. Each option must
/// tokenize to exactly one token.
pub struct ToyProvider<'a> {
    pub model: &'a ToyModel,
}

impl LogitProvider for ToyProvider<'_> {
    fn option_logits(
        &self,
        prompt: &str,
        options: &[String],
        iv: Option<&Intervention>,
    ) -> Result<Vec<f64>> {
        let vocab = self.model.config().vocab_size;
        let tokens = tokenize(prompt, vocab);
        let option_ids = options
            .iter()
            .map(|o| match tokenize(o, vocab).as_slice() {
                [id] => Ok(*id),
                _ => Err(Error::validation(format!("option `{o}` is not a single token"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let edit = match iv {
            Some(iv) => {
                if iv.dim() != self.model.d_model() {
                    return Err(Error::Dimension {
                        expected: self.model.d_model(),
                        found: iv.dim(),
                    });
                }
                if let Some(&l) = iv.layers.iter().find(|&&l| l >= self.model.n_layers()) {
                    return Err(Error::OutOfRange {
                        what: "layer",
                        index: l,
                        limit: self.model.n_layers(),
                    });
                }
                Some(InterventionEdit(iv))
            }
            None => None,
        };
        let out = self
            .model
            .forward(&tokens, &[], edit.as_ref().map(|e| e as &dyn ResidualEdit))?;
        let last = out.last_logits();
        Ok(option_ids.iter().map(|&i| last[i]).collect())
    }
}
