use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use moralgeo_core::demo::{run_demo, spearman, DemoConfig};
use moralgeo_core::report::{curve_csv, render_markdown, response_csv, slope_csv, slope_rows, ReportInputs};
use moralgeo_core::steering::fit_slope;
use moralgeo_core::store::{find_sweep_results, load_sweep_result};
use moralgeo_core::{ConceptVectorSet, Foundation, ToyModel};
use serde_json::json;

use crate::io;
use crate::sep::{curve_for, pairwise_for};
use crate::steer::fits_by_foundation;
use crate::{ConstructionArg, GeometryInputs, VectorChoice};

#[derive(Args, Debug)]
pub struct DemoArgs {
    /// Demo configuration (JSON); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data seed; overrides the configuration's.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn demo(a: DemoArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => io::read_json::<DemoConfig>(p)?,
        None => DemoConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let model = ToyModel::new(cfg.model.clone())?;
    let out = run_demo(&cfg)?;
    let dir = &a.out;

    io::write_file(&dir.join("model.json"), &io::json(&cfg.model)?)?;
    io::write_file(&dir.join("items.json"), &io::json(&out.items)?)?;
    out.train.save(&dir.join("train"))?;
    out.heldout.save(&dir.join("heldout"))?;
    ConceptVectorSet::new(cfg.model.d_model, out.vectors.clone())?.save(&dir.join("vectors"))?;
    io::write_file(&dir.join("curve.csv"), &curve_csv(&out.curve)?)?;

    let sweep_dir = dir.join("sweep").join(format!("care_macro_L{}", out.best_layer));
    out.sweep.save(&sweep_dir)?;
    // Fit what was stored so `steer fit` on the sweep reproduces slopes.csv.
    let sweep = load_sweep_result(&sweep_dir)?;
    let sweeps = [sweep.clone()];
    let care = sweep.series(Foundation::Care);
    let fit = fit_slope(sweep.alphas(), &care)?;
    let rows = slope_rows(&[(Foundation::Care, [(out.best_layer, fit)].into_iter().collect())].into_iter().collect())?;
    io::write_file(&dir.join("slopes.csv"), &slope_csv(&rows)?)?;
    io::write_file(&dir.join("response.csv"), &response_csv(&sweeps)?)?;

    let peak = out
        .curve
        .points
        .iter()
        .find(|p| p.layer == out.best_layer)
        .map(|p| p.sw1)
        .expect("best layer is on the curve");
    let summary = json!({
        "seed": cfg.seed,
        "model_seed": cfg.model.seed,
        "weight_checksum": format!("{:016x}", model.weight_checksum()),
        "best_layer": out.best_layer,
        "peak_signed_w1": peak,
        "curve": out.curve.points.iter().map(|p| json!({"layer": p.layer, "sw1": p.sw1})).collect::<Vec<_>>(),
        "slope": fit,
        "spearman_rho": spearman(sweep.alphas(), &care),
        "baseline_care": sweep.baseline().care,
    });
    io::write_file(&dir.join("summary.json"), &io::json(&summary)?)
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub inputs: GeometryInputs,
    /// Labels to trace; defaults to every target in the vector set.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Contrast for the traced vectors when a label has several.
    #[arg(long)]
    pub contrast: Option<String>,
    /// Layer for the pairwise matrix; omitted means no matrix.
    #[arg(long)]
    pub pairwise_layer: Option<usize>,
    #[arg(long, value_enum, default_value = "pairwise")]
    pub construction: ConstructionArg,
    /// Directory of sweep results for the slope table.
    #[arg(long)]
    pub sweeps: Option<PathBuf>,
    /// Output markdown.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn report(a: ReportArgs) -> Result<()> {
    let set = io::activations(&a.inputs.activations)?;
    let vs = io::vector_set(&a.inputs.vectors)?;
    let labels = a.labels.clone().unwrap_or_else(|| {
        set.label_vocab()
            .iter()
            .filter(|l| vs.vectors().iter().any(|v| &v.target_label == *l))
            .cloned()
            .collect()
    });
    let curves = labels
        .iter()
        .map(|l| {
            let choice = VectorChoice { label: l.clone(), contrast: a.contrast.clone() };
            curve_for(&set, &vs, &choice)
        })
        .collect::<Result<Vec<_>>>()?;
    let pairwise = match a.pairwise_layer {
        Some(layer) => Some(pairwise_for(&set, &vs, layer, None, a.construction, a.contrast.as_deref())?),
        None => None,
    };
    let slopes = match &a.sweeps {
        Some(dir) => {
            let results = find_sweep_results(dir)?;
            let fits = fits_by_foundation(&results)?;
            slope_rows(&fits)?
        }
        None => Vec::new(),
    };
    let md = render_markdown(&ReportInputs {
        curves: &curves,
        pairwise: pairwise.as_ref(),
        slopes: &slopes,
    })?;
    io::write_file(&a.out, &md)
}
