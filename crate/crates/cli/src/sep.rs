use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use moralgeo_core::geometry::{
    best_separation_layer, pairwise_matrix, project_scores, separability_curve, standardized_densities,
};
use moralgeo_core::mft::NONMORAL;
use moralgeo_core::report::{curve_csv, density_csv, pairwise_csv};
use moralgeo_core::{ActivationSet, ConceptVector, ConceptVectorSet, Contrast, ProjectionScores, SeparabilityCurve};

use crate::io::{self, invalid};
use crate::{ConstructionArg, GeometryInputs, VectorChoice};

#[derive(Args, Debug)]
pub struct CurveArgs {
    #[command(flatten)]
    pub inputs: GeometryInputs,
    #[command(flatten)]
    pub choice: VectorChoice,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

/// Projections of `set` onto each vector whose layer the set holds.
fn scores_per_layer(set: &ActivationSet, vectors: &[ConceptVector]) -> Result<Vec<ProjectionScores>> {
    let usable: Vec<&ConceptVector> = vectors.iter().filter(|v| set.has_layer(v.layer)).collect();
    if usable.is_empty() {
        return Err(invalid("no concept-vector layer is present in the activation set").into());
    }
    usable
        .into_iter()
        .map(|v| project_scores(set, v).map_err(Into::into))
        .collect()
}

pub fn curve_for(set: &ActivationSet, vs: &ConceptVectorSet, choice: &VectorChoice) -> Result<SeparabilityCurve> {
    let vectors = io::choose_vectors(vs, choice)?;
    let scores = scores_per_layer(set, &vectors)?;
    Ok(separability_curve(&scores, &choice.label)?)
}

pub fn curve(a: CurveArgs) -> Result<()> {
    let set = io::activations(&a.inputs.activations)?;
    let vs = io::vector_set(&a.inputs.vectors)?;
    let c = curve_for(&set, &vs, &a.choice)?;
    io::write_file(&a.out, &curve_csv(&c)?)
}

#[derive(Args, Debug)]
pub struct PairwiseArgs {
    #[command(flatten)]
    pub inputs: GeometryInputs,
    #[arg(long)]
    pub layer: usize,
    /// Labels in matrix order; defaults to every vocabulary label that a
    /// vector at this layer mentions.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "pairwise")]
    pub construction: ConstructionArg,
    /// Contrast of the per-label vectors for `vs_rest` when a label has
    /// several.
    #[arg(long)]
    pub contrast: Option<String>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn pairwise_for(
    set: &ActivationSet,
    vs: &ConceptVectorSet,
    layer: usize,
    labels: Option<Vec<String>>,
    construction: ConstructionArg,
    contrast: Option<&str>,
) -> Result<moralgeo_core::PairwiseMatrix> {
    let at_layer: Vec<ConceptVector> = vs.vectors().iter().filter(|v| v.layer == layer).cloned().collect();
    let labels = labels.unwrap_or_else(|| {
        set.label_vocab()
            .iter()
            .filter(|l| {
                at_layer.iter().any(|v| {
                    &v.target_label == *l || matches!(&v.contrast, Contrast::VsLabel { label } if label == *l)
                })
            })
            .cloned()
            .collect()
    });
    let contrast = contrast.map(io::parse_contrast);
    Ok(pairwise_matrix(set, layer, &labels, &at_layer, construction.into(), contrast.as_ref())?)
}

pub fn pairwise(a: PairwiseArgs) -> Result<()> {
    let set = io::activations(&a.inputs.activations)?;
    let vs = io::vector_set(&a.inputs.vectors)?;
    let m = pairwise_for(&set, &vs, a.layer, a.labels, a.construction, a.contrast.as_deref())?;
    io::write_file(&a.out, &pairwise_csv(&m)?)
}

#[derive(Args, Debug)]
pub struct DensityArgs {
    #[command(flatten)]
    pub inputs: GeometryInputs,
    #[command(flatten)]
    pub choice: VectorChoice,
    /// Layer to histogram; defaults to the label's best separation layer.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Group whose mean and standard deviation define the sigma axis.
    #[arg(long, default_value = NONMORAL)]
    pub baseline: String,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn density(a: DensityArgs) -> Result<()> {
    let set = io::activations(&a.inputs.activations)?;
    let vs = io::vector_set(&a.inputs.vectors)?;
    let layer = match a.layer {
        Some(l) => l,
        None => best_separation_layer(&curve_for(&set, &vs, &a.choice)?)?,
    };
    let v = io::vector_at(&vs, &a.choice, layer)?;
    let scores = project_scores(&set, &v)?;
    if !set.has_label(&a.baseline) {
        return Err(invalid(format!("baseline label `{}` not in label vocabulary", a.baseline)).into());
    }
    let d = standardized_densities(&scores, &a.baseline)?;
    io::write_file(&a.out, &density_csv(&d)?)
}
