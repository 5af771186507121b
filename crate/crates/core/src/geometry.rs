//! Projection scores and 1-D Wasserstein separability.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::{ConceptVector, Contrast};
use crate::error::{Error, Result};
use crate::store::ActivationSet;
use crate::tensor;

/// Mean differences smaller than this leave the sign of SW1 undetermined.
pub const SIGN_EPS: f64 = 1e-12;
/// Number of histogram bins in a [`DensitySummary`].
pub const DENSITY_BINS: usize = 61;
/// Histogram range in standard deviations, on each side of zero.
pub const DENSITY_RANGE_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionEntry {
    pub input_id: String,
    pub group_label: String,
    pub score: f64,
}

/// Scalar projections of every input in a set onto one concept vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionScores {
    pub target_label: String,
    pub contrast: Contrast,
    pub layer: usize,
    /// Label vocabulary of the projected set, in declared order.
    pub labels: Vec<String>,
    pub entries: Vec<ProjectionEntry>,
}

impl ProjectionScores {
    pub fn scores_where(&self, pred: impl Fn(&str) -> bool) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| pred(&e.group_label))
            .map(|e| e.score)
            .collect()
    }
}

/// Projects every input (repeat-averaged) at `v.layer` onto `v`.
pub fn project_scores(set: &ActivationSet, v: &ConceptVector) -> Result<ProjectionScores> {
    if set.d_model() != v.dim() {
        return Err(Error::Dimension {
            expected: v.dim(),
            found: set.d_model(),
        });
    }
    set.layer(v.layer)?;
    let entries = set
        .inputs()
        .iter()
        .enumerate()
        .map(|(idx, inp)| {
            let h = set.input_mean(v.layer, idx)?;
            Ok(ProjectionEntry {
                input_id: inp.input_id.clone(),
                group_label: inp.group_label.clone(),
                score: tensor::dot(&v.direction, &h),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectionScores {
        target_label: v.target_label.clone(),
        contrast: v.contrast.clone(),
        layer: v.layer,
        labels: set.label_vocab().to_vec(),
        entries,
    })
}

// ---------------------------------------------------------------------------
// Wasserstein-1
// ---------------------------------------------------------------------------

fn sorted_sample(xs: &[f64], name: &str) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::EmptySample(format!("{name} has no values")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation(format!("{name} contains a non-finite value")));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Exact W1 between two empirical distributions: the area between their
/// CDFs, integrated over the merged breakpoints.
pub fn wasserstein1(p: &[f64], q: &[f64]) -> Result<f64> {
    let p = sorted_sample(p, "first sample")?;
    let q = sorted_sample(q, "second sample")?;
    Ok(w1_sorted(&p, &q))
}

fn w1_sorted(p: &[f64], q: &[f64]) -> f64 {
    let (n, m) = (p.len() as u64, q.len() as u64);
    let mut all = Vec::with_capacity(p.len() + q.len());
    all.extend_from_slice(p);
    all.extend_from_slice(q);
    all.sort_by(f64::total_cmp);

    let (mut i, mut j) = (0usize, 0usize);
    let mut area = 0.0;
    for w in all.windows(2) {
        let x = w[0];
        while i < p.len() && p[i] <= x {
            i += 1;
        }
        while j < q.len() && q[j] <= x {
            j += 1;
        }
        let dx = w[1] - x;
        if dx > 0.0 {
            // |i/n - j/m| scaled by n*m so the CDF gap stays an exact integer.
            let gap = (i as u64 * m).abs_diff(j as u64 * n);
            area += gap as f64 * dx;
        }
    }
    area / (n * m) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedW1 {
    /// `sign(mean(P) - mean(Q)) * W1(P, Q)`.
    pub value: f64,
    pub w1: f64,
    pub mean_diff: f64,
    /// Set when the means coincide (within [`SIGN_EPS`]) but W1 > 0.
    pub ambiguous_sign: bool,
}

pub fn signed_w1(p: &[f64], q: &[f64]) -> Result<SignedW1> {
    let w1 = wasserstein1(p, q)?;
    let mean_diff = tensor::mean(p) - tensor::mean(q);
    let (value, ambiguous_sign) = if mean_diff.abs() < SIGN_EPS {
        (0.0, w1 > 0.0)
    } else {
        (mean_diff.signum() * w1, false)
    };
    Ok(SignedW1 {
        value,
        w1,
        mean_diff,
        ambiguous_sign,
    })
}

// ---------------------------------------------------------------------------
// Layer curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub layer: usize,
    pub sw1: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub ambiguous_sign: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedLayer {
    pub layer: usize,
    pub reason: String,
}

/// Signed W1 between target-labeled and all other scores, per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityCurve {
    pub foundation: String,
    pub points: Vec<CurvePoint>,
    #[serde(default)]
    pub skipped: Vec<SkippedLayer>,
}

pub fn separability_curve(
    scores_per_layer: &[ProjectionScores],
    target_label: &str,
) -> Result<SeparabilityCurve> {
    let mut order: Vec<&ProjectionScores> = scores_per_layer.iter().collect();
    order.sort_by_key(|s| s.layer);
    if let Some(w) = order.windows(2).find(|w| w[0].layer == w[1].layer) {
        return Err(Error::validation(format!(
            "layer {} appears more than once",
            w[0].layer
        )));
    }
    let results: Vec<std::result::Result<CurvePoint, SkippedLayer>> = order
        .par_iter()
        .map(|s| {
            let pos = s.scores_where(|l| l == target_label);
            let neg = s.scores_where(|l| l != target_label);
            if pos.is_empty() || neg.is_empty() {
                return Err(SkippedLayer {
                    layer: s.layer,
                    reason: format!(
                        "single-class scores ({} target, {} other)",
                        pos.len(),
                        neg.len()
                    ),
                });
            }
            let sw = signed_w1(&pos, &neg).map_err(|e| SkippedLayer {
                layer: s.layer,
                reason: e.to_string(),
            })?;
            Ok(CurvePoint {
                layer: s.layer,
                sw1: sw.value,
                n_pos: pos.len(),
                n_neg: neg.len(),
                ambiguous_sign: sw.ambiguous_sign,
            })
        })
        .collect();
    let mut curve = SeparabilityCurve {
        foundation: target_label.to_string(),
        points: Vec::new(),
        skipped: Vec::new(),
    };
    for r in results {
        match r {
            Ok(p) => curve.points.push(p),
            Err(s) => {
                log::warn!("skipping layer {} for `{target_label}`: {}", s.layer, s.reason);
                curve.skipped.push(s);
            }
        }
    }
    Ok(curve)
}

/// Layer with the largest signed SW1; ties go to the lowest layer.
pub fn best_separation_layer(curve: &SeparabilityCurve) -> Result<usize> {
    argmax_lowest(curve.points.iter().map(|p| (p.layer, p.sw1))).ok_or_else(|| {
        Error::validation(format!(
            "separability curve for `{}` has no scored layers",
            curve.foundation
        ))
    })
}

/// Argmax over `(key, value)` pairs, ties resolved toward the smallest key.
pub(crate) fn argmax_lowest(items: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in items {
        best = match best {
            None => Some((k, v)),
            Some((bk, bv)) if v > bv || (v == bv && k < bk) => Some((k, v)),
            keep => keep,
        };
    }
    best.map(|(k, _)| k)
}

// ---------------------------------------------------------------------------
// Pairwise matrices
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseConstruction {
    /// Cell (k, m): unsigned W1 between groups k and m projected on the
    /// k-versus-m axis. Symmetric with a zero diagonal.
    PairwiseContrast,
    /// Cell (k, m): signed W1 of group k versus everything else, projected
    /// on foundation m's vector. Generally asymmetric.
    LabelVsRestPerVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub layer: usize,
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub construction: PairwiseConstruction,
}

fn pair_axis(vectors: &[ConceptVector], k: &str, m: &str, layer: usize) -> Result<ConceptVector> {
    let direct = Contrast::vs(m);
    if let Some(v) = vectors
        .iter()
        .find(|v| v.layer == layer && v.target_label == k && v.contrast == direct)
    {
        return Ok(v.clone());
    }
    let reverse = Contrast::vs(k);
    vectors
        .iter()
        .find(|v| v.layer == layer && v.target_label == m && v.contrast == reverse)
        .map(|v| v.negated(k, Contrast::vs(m)))
        .ok_or_else(|| {
            Error::validation(format!(
                "no concept vector for pair ({k}, {m}) at layer {layer}"
            ))
        })
}

fn label_axis<'a>(
    vectors: &'a [ConceptVector],
    m: &str,
    layer: usize,
    contrast: Option<&Contrast>,
) -> Result<&'a ConceptVector> {
    let mut hits = vectors.iter().filter(|v| {
        v.layer == layer && v.target_label == m && contrast.is_none_or(|c| &v.contrast == c)
    });
    let first = hits.next().ok_or_else(|| {
        Error::validation(format!("no concept vector for `{m}` at layer {layer}"))
    })?;
    if contrast.is_none() && hits.next().is_some() {
        return Err(Error::validation(format!(
            "several concept vectors for `{m}` at layer {layer}; choose a contrast"
        )));
    }
    Ok(first)
}

/// Builds a K x K separability matrix over `labels` at `layer`.
///
/// `vs_rest_contrast` picks which vector represents each label in
/// [`PairwiseConstruction::LabelVsRestPerVector`] mode; it is ignored for
/// the pairwise-contrast construction.
pub fn pairwise_matrix(
    set: &ActivationSet,
    layer: usize,
    labels: &[String],
    vectors: &[ConceptVector],
    construction: PairwiseConstruction,
    vs_rest_contrast: Option<&Contrast>,
) -> Result<PairwiseMatrix> {
    for l in labels {
        if !set.has_label(l) {
            return Err(Error::validation(format!("label `{l}` not in label vocabulary")));
        }
    }
    let k = labels.len();
    let cells: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = match construction {
        PairwiseConstruction::PairwiseContrast => {
            // Only the upper triangle is computed; (m, k) mirrors (k, m).
            let upper: Vec<f64> = cells
                .par_iter()
                .map(|&(i, j)| {
                    if i >= j {
                        return Ok(0.0);
                    }
                    let axis = pair_axis(vectors, &labels[i], &labels[j], layer)?;
                    let s = project_scores(set, &axis)?;
                    let a = s.scores_where(|l| l == labels[i]);
                    let b = s.scores_where(|l| l == labels[j]);
                    wasserstein1(&a, &b)
                })
                .collect::<Result<_>>()?;
            cells
                .iter()
                .map(|&(i, j)| if i <= j { upper[i * k + j] } else { upper[j * k + i] })
                .collect()
        }
        PairwiseConstruction::LabelVsRestPerVector => cells
            .par_iter()
            .map(|&(i, j)| {
                let axis = label_axis(vectors, &labels[j], layer, vs_rest_contrast)?;
                let s = project_scores(set, axis)?;
                let a = s.scores_where(|l| l == labels[i]);
                let b = s.scores_where(|l| l != labels[i]);
                Ok(signed_w1(&a, &b)?.value)
            })
            .collect::<Result<_>>()?,
    };
    Ok(PairwiseMatrix {
        layer,
        labels: labels.to_vec(),
        values: values.chunks(k.max(1)).map(<[f64]>::to_vec).take(k).collect(),
        construction,
    })
}

// ---------------------------------------------------------------------------
// Standardized densities
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDensity {
    pub label: String,
    pub n: usize,
    pub standardized_mean: Option<f64>,
    pub standardized_std: Option<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub layer: usize,
    pub baseline_label: String,
    pub reference_mean: f64,
    pub reference_std: f64,
    /// `DENSITY_BINS + 1` edges in units of the reference standard deviation.
    pub bin_edges: Vec<f64>,
    pub groups: Vec<GroupDensity>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = tensor::mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

pub fn density_bin_edges() -> Vec<f64> {
    let width = 2.0 * DENSITY_RANGE_SIGMA / DENSITY_BINS as f64;
    (0..=DENSITY_BINS)
        .map(|i| -DENSITY_RANGE_SIGMA + width * i as f64)
        .collect()
}

fn density_bin(z: f64) -> usize {
    let width = 2.0 * DENSITY_RANGE_SIGMA / DENSITY_BINS as f64;
    let b = ((z + DENSITY_RANGE_SIGMA) / width).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(DENSITY_BINS - 1)
    }
}

/// Z-scores every group against the baseline group's mean and (population)
/// standard deviation and histograms them over fixed sigma-unit bins.
/// Out-of-range values land in the end bins.
pub fn standardized_densities(
    scores: &ProjectionScores,
    baseline_label: &str,
) -> Result<DensitySummary> {
    let base = scores.scores_where(|l| l == baseline_label);
    if base.is_empty() {
        return Err(Error::EmptySample(format!(
            "baseline group `{baseline_label}` is empty"
        )));
    }
    let (mu, sd) = mean_std(&base);
    if sd.is_nan() || sd <= 0.0 {
        return Err(Error::validation(format!(
            "baseline group `{baseline_label}` has zero standard deviation"
        )));
    }
    let groups = scores
        .labels
        .iter()
        .map(|label| {
            let z: Vec<f64> = scores
                .scores_where(|l| l == label)
                .iter()
                .map(|s| (s - mu) / sd)
                .collect();
            let mut counts = vec![0usize; DENSITY_BINS];
            for &v in &z {
                counts[density_bin(v)] += 1;
            }
            let (m, s) = if z.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&z);
                (Some(m), Some(s))
            };
            GroupDensity {
                label: label.clone(),
                n: z.len(),
                standardized_mean: m,
                standardized_std: s,
                counts,
            }
        })
        .collect();
    Ok(DensitySummary {
        layer: scores.layer,
        baseline_label: baseline_label.to_string(),
        reference_mean: mu,
        reference_std: sd,
        bin_edges: density_bin_edges(),
        groups,
    })
}
