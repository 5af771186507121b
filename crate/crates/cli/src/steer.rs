use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use moralgeo_core::concept::build_all_vectors;
use moralgeo_core::report::{response_csv, slope_csv, slope_rows};
use moralgeo_core::saelab::feature_max_activation;
use moralgeo_core::steering::{
    fit_sweeps, load_likert_items, load_mcq_items, parse_grid, run_sweep, score_mcq, score_questionnaire,
    ClampFeature, SweepSpec, ToyProvider, MCQ_DEFAULT_SAMPLE, MCQ_DEFAULT_SEED,
};
use moralgeo_core::store::{find_sweep_results, load_sweep_result, load_token_corpus};
use moralgeo_core::toymodel::{capture_activation_set, LabeledText};
use moralgeo_core::{
    Contrast, ContrastSpec, Foundation, LikertItem, SaeDictionary, SlopeFit, Steer, SweepMode, SweepResult,
    ToyConfig, ToyModel,
};

use crate::io::{self, invalid};
use crate::sae::load_saes;
use crate::VectorChoice;

/// How a sweep moves the residual stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteerMode {
    Macro,
    Add,
    Clamp(f64),
}

impl FromStr for SteerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "macro" => Ok(SteerMode::Macro),
            "add" => Ok(SteerMode::Add),
            _ => {
                let m = s
                    .strip_prefix("clamp:")
                    .ok_or_else(|| format!("expected macro, add or clamp:<multiple>, got `{s}`"))?;
                let m: f64 = m.parse().map_err(|_| format!("bad clamp multiple `{m}`"))?;
                if !m.is_finite() || m < 0.0 {
                    return Err(format!("clamp multiple must be finite and >= 0, got {m}"));
                }
                Ok(SteerMode::Clamp(m))
            }
        }
    }
}

impl SteerMode {
    fn sweep_mode(self) -> SweepMode {
        match self {
            SteerMode::Macro => SweepMode::Macro,
            SteerMode::Add => SweepMode::MicroAdd,
            SteerMode::Clamp(_) => SweepMode::MicroClamp,
        }
    }
}

fn mode_name(m: SweepMode) -> &'static str {
    match m {
        SweepMode::Macro => "macro",
        SweepMode::MicroAdd => "micro_add",
        SweepMode::MicroClamp => "micro_clamp",
    }
}

pub fn load_model(path: &Path) -> Result<ToyModel> {
    let cfg: ToyConfig = io::read_json(path)?;
    Ok(ToyModel::new(cfg)?)
}

fn load_items(path: &Path) -> Result<Vec<LikertItem>> {
    load_likert_items(path).with_context(|| format!("loading items from {}", path.display()))
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Toy model configuration (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Likert questionnaire items (JSON).
    #[arg(long)]
    pub items: PathBuf,
    /// Foundation whose score the sweep is fitted on.
    #[arg(long, default_value = "care")]
    pub foundation: String,
    /// `macro`, `add` or `clamp:<multiple>`.
    #[arg(long, default_value = "macro")]
    pub mode: SteerMode,
    /// `default`, `qwen` or `csv:<a,b,...>`.
    #[arg(long, default_value = "default")]
    pub grid: String,
    /// Layers to sweep; defaults to every model layer.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Concept vectors for macro steering. Without them, vectors are built
    /// on the model from the items: target-foundation prompts vs the rest.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Vector label; defaults to the foundation name.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub contrast: Option<String>,
    /// SAE directories for `add` and `clamp` modes, one per swept layer.
    #[arg(long)]
    pub sae: Vec<PathBuf>,
    /// SAE feature indices to steer.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<usize>,
    /// Token corpus used to find each feature's maximum activation (clamp).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Concept vectors built on the model itself: items of the target
/// foundation against all other items.
fn item_vectors(model: &ToyModel, items: &[LikertItem], foundation: Foundation, layers: &[usize]) -> Result<BTreeMap<usize, Vec<f64>>> {
    let texts: Vec<LabeledText> = items
        .iter()
        .map(|it| LabeledText {
            input_id: it.item_id.clone(),
            group_label: if it.subscale.foundation() == foundation { "target" } else { "other" }.into(),
            text: it.prompt.clone(),
        })
        .collect();
    let set = capture_activation_set(model, "toy", vec!["target".into(), "other".into()], &texts)?;
    let spec = ContrastSpec::new("target", Contrast::vs("other")).with_layers(layers.to_vec());
    Ok(build_all_vectors(&set, &[spec])?
        .into_iter()
        .map(|v| (v.layer, v.direction))
        .collect())
}

fn dict_for(dicts: &[SaeDictionary], layer: usize) -> Result<Arc<SaeDictionary>> {
    dicts
        .iter()
        .find(|d| d.layer() == layer)
        .cloned()
        .map(Arc::new)
        .ok_or_else(|| invalid(format!("no SAE dictionary for layer {layer}")).into())
}

fn steers(a: &SweepArgs, model: &ToyModel, items: &[LikertItem], foundation: Foundation, layers: &[usize]) -> Result<BTreeMap<usize, Steer>> {
    let mut out = BTreeMap::new();
    match a.mode {
        SteerMode::Macro => {
            let directions = match &a.vectors {
                Some(p) => {
                    let vs = io::vector_set(p)?;
                    let choice = VectorChoice {
                        label: a.label.clone().unwrap_or_else(|| foundation.to_string()),
                        contrast: a.contrast.clone(),
                    };
                    layers
                        .iter()
                        .map(|&l| Ok((l, io::vector_at(&vs, &choice, l)?.direction)))
                        .collect::<Result<BTreeMap<_, _>>>()?
                }
                None => item_vectors(model, items, foundation, layers)?,
            };
            for (l, d) in directions {
                out.insert(l, Steer::Direction(d));
            }
        }
        SteerMode::Add | SteerMode::Clamp(_) => {
            if a.sae.is_empty() || a.features.is_empty() {
                return Err(invalid("add and clamp modes need --sae and --features").into());
            }
            let dicts = load_saes(&a.sae)?;
            let corpus = match (a.mode, &a.corpus) {
                (SteerMode::Clamp(_), Some(p)) => Some(
                    load_token_corpus(p).with_context(|| format!("loading corpus from {}", p.display()))?,
                ),
                (SteerMode::Clamp(_), None) => return Err(invalid("clamp mode needs --corpus for feature maxima").into()),
                _ => None,
            };
            for &l in layers {
                let dict = dict_for(&dicts, l)?;
                let steer = match (a.mode, &corpus) {
                    (SteerMode::Clamp(multiple), Some(c)) => {
                        let features = a
                            .features
                            .iter()
                            .map(|&i| Ok(ClampFeature { index: i, f_max: feature_max_activation(c, &dict, i)? }))
                            .collect::<Result<Vec<_>>>()?;
                        Steer::Clamp { dict, features, multiple }
                    }
                    _ => {
                        let mut sum = vec![0.0; dict.d_model()];
                        for &i in &a.features {
                            if i >= dict.n_features() {
                                return Err(invalid(format!("feature {i} out of range at layer {l}")).into());
                            }
                            for (s, d) in sum.iter_mut().zip(dict.decoder_direction(i)) {
                                *s += d;
                            }
                        }
                        let n = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if n == 0.0 {
                            return Err(invalid(format!("selected decoder directions cancel at layer {l}")).into());
                        }
                        Steer::Direction(sum.iter().map(|x| x / n).collect())
                    }
                };
                out.insert(l, steer);
            }
        }
    }
    Ok(out)
}

/// Saves each result and reads it back, so downstream fits see the same
/// f32 option logits that `steer fit` will later load.
fn write_sweeps(dir: &Path, results: &[SweepResult]) -> Result<Vec<SweepResult>> {
    results
        .iter()
        .map(|r| {
            let sub = dir.join(format!("{}_{}_L{}", r.foundation, mode_name(r.mode), r.layer));
            r.save(&sub).with_context(|| format!("writing {}", sub.display()))?;
            Ok(load_sweep_result(&sub)?)
        })
        .collect()
}

/// Slope fits for every foundation present in `results`.
pub fn fits_by_foundation(results: &[SweepResult]) -> Result<BTreeMap<Foundation, BTreeMap<usize, SlopeFit>>> {
    let mut fits = BTreeMap::new();
    for f in Foundation::ALL {
        let per_layer = fit_sweeps(results, f)?;
        if !per_layer.is_empty() {
            fits.insert(f, per_layer);
        }
    }
    Ok(fits)
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let foundation = Foundation::from_str(&a.foundation)?;
    let model = load_model(&a.model)?;
    let items = load_items(&a.items)?;
    let alphas = parse_grid(&a.grid)?;
    let layers = a.layers.clone().unwrap_or_else(|| (0..model.n_layers()).collect());
    let steer_map = steers(&a, &model, &items, foundation, &layers)?;
    let spec = SweepSpec { foundation, mode: a.mode.sweep_mode(), alphas, layers };
    let provider = ToyProvider { model: &model };
    let results = run_sweep(&provider, &items, &spec, &|l| {
        Ok(steer_map.get(&l).cloned().expect("steer built for every swept layer"))
    })?;
    let results = write_sweeps(&a.out, &results)?;
    let rows = slope_rows(&fits_by_foundation(&results)?)?;
    io::write_file(&a.out.join("slopes.csv"), &slope_csv(&rows)?)?;
    io::write_file(&a.out.join("response.csv"), &response_csv(&results)?)
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Directory searched recursively for sweep results.
    #[arg(long)]
    pub sweeps: PathBuf,
    /// Output slope CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the response-curve CSV here.
    #[arg(long)]
    pub response: Option<PathBuf>,
}

pub fn fit(a: FitArgs) -> Result<()> {
    io::require_dir(&a.sweeps)?;
    let results = find_sweep_results(&a.sweeps)?;
    if results.is_empty() {
        return Err(invalid(format!("no sweep results under {}", a.sweeps.display())).into());
    }
    let rows = slope_rows(&fits_by_foundation(&results)?)?;
    io::write_file(&a.out, &slope_csv(&rows)?)?;
    if let Some(p) = &a.response {
        io::write_file(p, &response_csv(&results)?)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct MfqArgs {
    /// Toy model configuration (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Likert questionnaire items (JSON).
    #[arg(long)]
    pub items: PathBuf,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn mfq(a: MfqArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let items = load_items(&a.items)?;
    let card = score_questionnaire(&ToyProvider { model: &model }, &items, None)?;
    io::emit(a.out.as_deref(), &io::json(&card)?)
}

#[derive(Args, Debug)]
pub struct McqArgs {
    /// Toy model configuration (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Four-option items (JSON).
    #[arg(long)]
    pub items: PathBuf,
    /// Items to sample.
    #[arg(long, default_value_t = MCQ_DEFAULT_SAMPLE)]
    pub sample: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = MCQ_DEFAULT_SEED)]
    pub seed: u64,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn mcq(a: McqArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let items = load_mcq_items(&a.items).with_context(|| format!("loading items from {}", a.items.display()))?;
    let score = score_mcq(&ToyProvider { model: &model }, &items, None, a.sample, a.seed)?;
    io::emit(a.out.as_deref(), &io::json(&score)?)
}
