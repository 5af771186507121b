//! Synthetic end-to-end pipeline on the toy model: two "foundations" that
//! differ only in which token ids they use, concept vectors built from the
//! model's own residuals, and a questionnaire whose options are picked so
//! that moving toward the first foundation should raise the rating.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept::{build_all_vectors, ConceptVector, Contrast, ContrastSpec};
use crate::error::{Error, Result};
use crate::geometry::{best_separation_layer, project_scores, separability_curve, SeparabilityCurve};
use crate::mft::{Foundation, Subscale};
use crate::steering::{run_sweep, LikertItem, Steer, SweepSpec, ToyProvider};
use crate::store::{ActivationSet, SweepMode, SweepResult};
use crate::toymodel::{capture_activation_set, LabeledText, ToyConfig, ToyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    pub model: ToyConfig,
    /// Sequences per label used to build concept vectors.
    pub n_train: usize,
    /// Sequences per label used for the held-out projection.
    pub n_heldout: usize,
    pub seq_len: usize,
    /// Questionnaire items per subscale.
    pub items_per_subscale: usize,
    pub alphas: Vec<f64>,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            model: ToyConfig {
                vocab_size: 64,
                d_model: 32,
                n_layers: 4,
                n_heads: 4,
                max_seq_len: 64,
                seed: 0,
            },
            n_train: 48,
            n_heldout: 48,
            seq_len: 12,
            items_per_subscale: 2,
            alphas: crate::steering::parse_grid("default").expect("builtin grid"),
            seed: 0,
        }
    }
}

/// Token-id ranges for the two labels and for neutral questionnaire prompts.
/// The vocabulary is split in quarters: A, B, then two neutral quarters.
pub fn vocab_ranges(vocab: usize) -> Result<[std::ops::Range<usize>; 3]> {
    if vocab < 8 {
        return Err(Error::validation("demo needs a vocabulary of at least 8 tokens"));
    }
    let q = vocab / 4;
    Ok([0..q, q..2 * q, 2 * q..vocab])
}

pub const LABEL_A: &str = "care";
pub const LABEL_B: &str = "fairness";

fn random_text(rng: &mut ChaCha8Rng, range: &std::ops::Range<usize>, len: usize) -> String {
    (0..len)
        .map(|_| rng.random_range(range.clone()).to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` sequences per label, alternating A and B, ids `<prefix>-<i>`.
pub fn labeled_texts(cfg: &DemoConfig, n: usize, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Vec<LabeledText>> {
    let [a, b, _] = vocab_ranges(cfg.model.vocab_size)?;
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        for (label, range) in [(LABEL_A, &a), (LABEL_B, &b)] {
            out.push(LabeledText {
                input_id: format!("{prefix}-{label}-{i}"),
                group_label: label.to_string(),
                text: random_text(rng, range, cfg.seq_len),
            });
        }
    }
    Ok(out)
}

/// Picks five option tokens spread across the ranking of each token's
/// last-position logit gap between A-labeled and B-labeled inputs, lowest
/// gap first. Rating 5 is the token that A inputs favor most.
pub fn pick_options(model: &ToyModel, texts: &[LabeledText]) -> Result<[usize; 5]> {
    let vocab = model.config().vocab_size;
    let mut gap = vec![0.0; vocab];
    let (mut na, mut nb) = (0usize, 0usize);
    for t in texts {
        let tokens = crate::toymodel::tokenize(&t.text, vocab);
        let out = model.forward(&tokens, &[], None)?;
        let sign = if t.group_label == LABEL_A {
            na += 1;
            1.0
        } else {
            nb += 1;
            -1.0
        };
        for (g, l) in gap.iter_mut().zip(out.last_logits()) {
            *g += sign * l;
        }
    }
    if na == 0 || nb == 0 {
        return Err(Error::validation("option ranking needs inputs of both labels"));
    }
    let mut order: Vec<usize> = (0..vocab).collect();
    order.sort_by(|&i, &j| gap[i].total_cmp(&gap[j]).then(i.cmp(&j)));
    let last = vocab - 1;
    Ok([
        order[0],
        order[last / 4],
        order[last / 2],
        order[3 * last / 4],
        order[last],
    ])
}

pub fn demo_items(cfg: &DemoConfig, options: [usize; 5], rng: &mut ChaCha8Rng) -> Result<Vec<LikertItem>> {
    let [_, _, neutral] = vocab_ranges(cfg.model.vocab_size)?;
    let opts: Vec<String> = options.iter().map(usize::to_string).collect();
    let mut items = Vec::new();
    for s in Subscale::ALL {
        for i in 0..cfg.items_per_subscale {
            items.push(LikertItem {
                item_id: format!("{s}-{i}"),
                subscale: s,
                prompt: random_text(rng, &neutral, cfg.seq_len),
                options: opts.clone(),
            });
        }
    }
    Ok(items)
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub train: ActivationSet,
    pub heldout: ActivationSet,
    pub vectors: Vec<ConceptVector>,
    pub curve: SeparabilityCurve,
    pub best_layer: usize,
    pub items: Vec<LikertItem>,
    pub sweep: SweepResult,
}

/// Builds both label vectors (each versus the other) on the training set,
/// traces separability on the held-out set, and sweeps the questionnaire
/// while steering along the A vector at the best layer.
pub fn run_demo(cfg: &DemoConfig) -> Result<DemoOutcome> {
    let model = ToyModel::new(cfg.model.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = vec![LABEL_A.to_string(), LABEL_B.to_string()];
    let train_texts = labeled_texts(cfg, cfg.n_train, "train", &mut rng)?;
    let heldout_texts = labeled_texts(cfg, cfg.n_heldout, "heldout", &mut rng)?;
    let train = capture_activation_set(&model, "toy", vocab.clone(), &train_texts)?;
    let heldout = capture_activation_set(&model, "toy", vocab, &heldout_texts)?;

    let specs = vec![ContrastSpec::new(LABEL_A, Contrast::vs(LABEL_B))];
    let vectors = build_all_vectors(&train, &specs)?;
    let scores = vectors
        .iter()
        .map(|v| project_scores(&heldout, v))
        .collect::<Result<Vec<_>>>()?;
    let curve = separability_curve(&scores, LABEL_A)?;
    let best_layer = best_separation_layer(&curve)?;

    let options = pick_options(&model, &train_texts)?;
    let items = demo_items(cfg, options, &mut rng)?;
    let steer_v = vectors
        .iter()
        .find(|v| v.layer == best_layer)
        .expect("one vector per layer")
        .direction
        .clone();
    let spec = SweepSpec {
        foundation: Foundation::Care,
        mode: SweepMode::Macro,
        alphas: cfg.alphas.clone(),
        layers: vec![best_layer],
    };
    let provider = ToyProvider { model: &model };
    let mut sweeps = run_sweep(&provider, &items, &spec, &|_| Ok(Steer::Direction(steer_v.clone())))?;
    Ok(DemoOutcome {
        train,
        heldout,
        vectors,
        curve,
        best_layer,
        items,
        sweep: sweeps.remove(0),
    })
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mx = crate::tensor::mean(&rx);
    let my = crate::tensor::mean(&ry);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}
