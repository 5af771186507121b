//! CSV tables and a markdown summary for analysis outputs.
//!
//! Column orders are fixed; rows follow layer order or label vocabulary
//! order. Floats use Rust's shortest round-trip formatting so files are
//! byte-stable across runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    best_separation_layer, DensitySummary, PairwiseMatrix, ProjectionScores, SeparabilityCurve,
};
use crate::mft::Foundation;
use crate::saelab::{AlignmentPoint, FeatureFingerprint};
use crate::steering::SlopeFit;
use crate::store::SweepResult;

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn f(x: f64) -> String {
    format!("{x}")
}

pub fn projection_csv(s: &ProjectionScores) -> Result<String> {
    csv_string(
        &["input_id", "group_label", "score"],
        s.entries
            .iter()
            .map(|e| vec![e.input_id.clone(), e.group_label.clone(), f(e.score)]),
    )
}

/// Per-layer rows followed by an `optimal_layer` footer row.
pub fn curve_csv(c: &SeparabilityCurve) -> Result<String> {
    let best = best_separation_layer(c)?;
    let mut rows: Vec<Vec<String>> = c
        .points
        .iter()
        .map(|p| {
            vec![
                p.layer.to_string(),
                f(p.sw1),
                p.n_pos.to_string(),
                p.n_neg.to_string(),
                p.ambiguous_sign.to_string(),
            ]
        })
        .collect();
    rows.push(vec!["optimal_layer".into(), best.to_string()]);
    csv_string(&["layer", "sw1", "n_pos", "n_neg", "ambiguous_sign"], rows)
}

pub fn pairwise_csv(m: &PairwiseMatrix) -> Result<String> {
    let mut header = vec!["label"];
    header.extend(m.labels.iter().map(String::as_str));
    csv_string(
        &header,
        m.labels.iter().zip(&m.values).map(|(l, row)| {
            let mut r = vec![l.clone()];
            r.extend(row.iter().map(|v| f(*v)));
            r
        }),
    )
}

/// Long format: one row per (group, bin).
pub fn density_csv(d: &DensitySummary) -> Result<String> {
    let mut rows = Vec::new();
    for g in &d.groups {
        for (b, c) in g.counts.iter().enumerate() {
            rows.push(vec![
                g.label.clone(),
                b.to_string(),
                f(d.bin_edges[b]),
                f(d.bin_edges[b + 1]),
                c.to_string(),
            ]);
        }
    }
    csv_string(&["label", "bin", "left_sigma", "right_sigma", "count"], rows)
}

pub fn fingerprint_csv(fp: &FeatureFingerprint) -> Result<String> {
    csv_string(
        &["rank", "feature_index", "cosine"],
        fp.entries.iter().enumerate().map(|(i, e)| {
            vec![(i + 1).to_string(), e.feature_index.to_string(), f(e.cosine)]
        }),
    )
}

pub fn alignment_csv(points: &[AlignmentPoint]) -> Result<String> {
    csv_string(
        &["layer", "observed_mean_top_n", "baseline_mean_top_n", "baseline_trials"],
        points.iter().map(|p| {
            vec![
                p.layer.to_string(),
                f(p.observed_mean_top_n),
                f(p.baseline_mean_top_n),
                p.baseline_trials.to_string(),
            ]
        }),
    )
}

/// One row per (layer, alpha, foundation) with the baseline-subtracted score.
pub fn response_csv(results: &[SweepResult]) -> Result<String> {
    let mut rows = Vec::new();
    for r in results {
        for fnd in Foundation::ALL {
            let series = r.series(fnd);
            let delta = r.delta_series(fnd);
            for ((a, s), d) in r.alphas().iter().zip(series).zip(delta) {
                rows.push(vec![
                    r.foundation.to_string(),
                    r.layer.to_string(),
                    f(*a),
                    fnd.to_string(),
                    f(s),
                    f(d),
                ]);
            }
        }
    }
    csv_string(
        &["steered", "layer", "alpha", "foundation", "score", "delta"],
        rows,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub foundation: Foundation,
    pub layer: usize,
    pub fit: SlopeFit,
    pub best: bool,
}

pub fn slope_rows(fits: &BTreeMap<Foundation, BTreeMap<usize, SlopeFit>>) -> Result<Vec<SlopeRow>> {
    let mut rows = Vec::new();
    for (fnd, per_layer) in fits {
        let best = crate::steering::select_best_layer(per_layer)?;
        for (&layer, fit) in per_layer {
            rows.push(SlopeRow {
                foundation: *fnd,
                layer,
                fit: *fit,
                best: layer == best,
            });
        }
    }
    Ok(rows)
}

pub fn slope_csv(rows: &[SlopeRow]) -> Result<String> {
    csv_string(
        &["foundation", "layer", "beta", "intercept", "r_squared", "best"],
        rows.iter().map(|r| {
            vec![
                r.foundation.to_string(),
                r.layer.to_string(),
                f(r.fit.beta),
                f(r.fit.intercept),
                f(r.fit.r_squared),
                r.best.to_string(),
            ]
        }),
    )
}

fn title(label: &str) -> String {
    let spaced = label.replace('_', " ");
    let mut c = spaced.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Inputs for [`render_markdown`]; every section is optional.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs<'a> {
    pub curves: &'a [SeparabilityCurve],
    pub pairwise: Option<&'a PairwiseMatrix>,
    pub slopes: &'a [SlopeRow],
}

pub fn render_markdown(inp: &ReportInputs<'_>) -> Result<String> {
    let mut s = String::from("# Moral geometry report\n");
    if !inp.curves.is_empty() {
        s.push_str("\n## Peak separability (signed W1)\n\n");
        for c in inp.curves {
            let layer = best_separation_layer(c)?;
            let p = c.points.iter().find(|p| p.layer == layer).expect("best is a point");
            s.push_str(&format!("- {} {:.2} (layer {layer})\n", title(&c.foundation), p.sw1));
        }
    }
    if let Some(m) = inp.pairwise {
        s.push_str(&format!("\n## Pairwise W1 at layer {}\n\n", m.layer));
        s.push_str("| |");
        for l in &m.labels {
            s.push_str(&format!(" {} |", title(l)));
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(m.labels.len()));
        s.push('\n');
        for (l, row) in m.labels.iter().zip(&m.values) {
            s.push_str(&format!("| {} |", title(l)));
            for v in row {
                s.push_str(&format!(" {v:.3} |"));
            }
            s.push('\n');
        }
    }
    if !inp.slopes.is_empty() {
        s.push_str("\n## Steering slopes\n\n| Foundation | Layer | beta | R^2 | best |\n|---|---|---|---|---|\n");
        for r in inp.slopes {
            s.push_str(&format!(
                "| {} | {} | {:.3} | {:.3} | {} |\n",
                title(r.foundation.as_str()),
                r.layer,
                r.fit.beta,
                r.fit.r_squared,
                if r.best { "*" } else { "" }
            ));
        }
    }
    Ok(s)
}
