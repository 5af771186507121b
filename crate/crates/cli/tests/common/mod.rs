#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use moralgeo_core::concept::build_all_vectors;
use moralgeo_core::store::{ActivationKind, Document, InputRecord, SaeMetadata};
use moralgeo_core::{ActivationSet, ConceptVectorSet, Contrast, ContrastSpec, Matrix, SaeDictionary, TokenCorpus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub const BIN: &str = env!("CARGO_BIN_EXE_moralgeo");
pub const D: usize = 32;
pub const LABELS: [&str; 3] = ["care", "fairness", "nonmoral"];
pub const SAE_LAYERS: [usize; 2] = [1, 2];
const ANSWERS: [&str; 4] = ["A", "B", "C", "D"];

pub fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("MORALGEO_LOG")
        .output()
        .expect("spawn moralgeo")
}

/// Runs and panics with stderr on a non-zero exit.
pub fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    let out = run(args);
    if !out.status.success() {
        let shown: Vec<String> = args.iter().map(|a| a.as_ref().to_string_lossy().into_owned()).collect();
        panic!(
            "moralgeo {} exited {:?}\n{}",
            shown.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    out
}

pub fn p(path: &Path) -> String {
    path.to_str().expect("utf-8 temp path").to_string()
}

/// Inputs shared by the CLI tests, all written through the core API.
pub struct Fixture {
    pub dir: TempDir,
}

impl Fixture {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }
    pub fn demo_config(&self) -> PathBuf {
        self.root().join("demo_config.json")
    }
    pub fn acts(&self) -> PathBuf {
        self.root().join("acts")
    }
    /// Label-vs-rest vectors for every label at every layer.
    pub fn vectors(&self) -> PathBuf {
        self.root().join("vectors")
    }
    pub fn saes(&self) -> PathBuf {
        self.root().join("saes")
    }
    pub fn sae(&self, layer: usize) -> PathBuf {
        self.saes().join(format!("L{layer}"))
    }
    pub fn corpus(&self) -> PathBuf {
        self.root().join("corpus")
    }
    pub fn model(&self) -> PathBuf {
        self.root().join("model.json")
    }
    pub fn items(&self) -> PathBuf {
        self.root().join("items.json")
    }
    pub fn mcq(&self) -> PathBuf {
        self.root().join("mcq.json")
    }
    pub fn record(&self) -> PathBuf {
        self.root().join("record.json")
    }
    pub fn lexicon(&self) -> PathBuf {
        self.root().join("lexicon.txt")
    }
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, mean: &[f64]) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| {
            mean.iter()
                .map(|m| m + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect()
        })
        .collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Three labels whose means sit at distinct offsets along the first axes,
/// four layers with growing separation.
fn activation_set(rng: &mut ChaCha8Rng) -> ActivationSet {
    let per_label = 24;
    let mut inputs = Vec::new();
    for l in LABELS {
        for i in 0..per_label {
            inputs.push(InputRecord {
                input_id: format!("{l}-{i}"),
                group_label: l.to_string(),
                token_index: 5,
                repeat_count: 1 + i % 2,
            });
        }
    }
    let mut tensors = BTreeMap::new();
    for layer in 0..4 {
        let mut rows = Vec::new();
        for inp in &inputs {
            let li = LABELS.iter().position(|l| *l == inp.group_label).unwrap();
            let mut mean = vec![0.0; D];
            mean[li] = 0.5 * (layer + 1) as f64;
            rows.extend(gaussian_rows(rng, inp.repeat_count, &mean));
        }
        tensors.insert(layer, Matrix::from_rows(&rows).unwrap());
    }
    let labels = LABELS.iter().map(|s| s.to_string()).collect();
    ActivationSet::new("fixture", D, labels, inputs, tensors).unwrap()
}

/// A top-k dictionary whose feature 0 decodes along `planted` and whose
/// encoder is the decoder transpose.
fn dictionary(rng: &mut ChaCha8Rng, layer: usize, planted: &[f64]) -> SaeDictionary {
    let m = 96;
    let meta = SaeMetadata {
        layer,
        d_model: D,
        n_features: m,
        k: 8,
        activation_kind: ActivationKind::Topk,
        source: Some("fixture".into()),
    };
    let mut rows: Vec<Vec<f64>> = random_matrix(rng, m, D).iter_rows().map(<[f64]>::to_vec).collect();
    rows[0] = planted.to_vec();
    let dec = Matrix::from_rows(&rows).unwrap();
    SaeDictionary::from_decoder_rows(meta, dec.clone(), vec![0.0; m], dec, vec![0.0; D]).unwrap()
}

fn corpus(rng: &mut ChaCha8Rng) -> TokenCorpus {
    let words = ["harm", "help", "fair", "cheat", "the", "a", "kind", "cruel", "share"];
    let docs = (0..6)
        .map(|i| {
            let n = 20 + 7 * i;
            let tokens = (0..n)
                .map(|j| {
                    let w = words[rng.random_range(0..words.len())];
                    if j == 0 { w.to_string() } else { format!(" {w}") }
                })
                .collect();
            Document {
                doc_id: format!("doc-{i}"),
                tokens,
                residuals: random_matrix(rng, n, D),
            }
        })
        .collect();
    TokenCorpus::new(D, docs).unwrap()
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

pub fn fixture() -> Fixture {
    let fx = Fixture { dir: tempfile::tempdir().unwrap() };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let acts = activation_set(&mut rng);
    acts.save(&fx.acts()).unwrap();
    let specs: Vec<ContrastSpec> = LABELS.iter().map(|l| ContrastSpec::new(*l, Contrast::VsRest)).collect();
    let vectors = build_all_vectors(&acts, &specs).unwrap();
    for layer in SAE_LAYERS {
        let care = vectors
            .iter()
            .find(|v| v.layer == layer && v.target_label == "care")
            .unwrap();
        dictionary(&mut rng, layer, &care.direction).save(&fx.sae(layer)).unwrap();
    }
    ConceptVectorSet::new(D, vectors).unwrap().save(&fx.vectors()).unwrap();
    corpus(&mut rng).save(&fx.corpus()).unwrap();

    write(
        &fx.demo_config(),
        r#"{
  "model": {"vocab_size": 64, "d_model": 32, "n_layers": 4, "n_heads": 4, "max_seq_len": 64, "seed": 0},
  "n_train": 16,
  "n_heldout": 16,
  "seq_len": 8,
  "items_per_subscale": 1,
  "alphas": [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0],
  "seed": 0
}
"#,
    );
    write(
        &fx.model(),
        r#"{"vocab_size": 64, "d_model": 32, "n_layers": 4, "n_heads": 4, "max_seq_len": 64, "seed": 7}"#,
    );

    let subscales = ["care", "equality", "proportionality", "loyalty", "authority", "purity"];
    let likert: Vec<serde_json::Value> = subscales
        .iter()
        .enumerate()
        .map(|(i, s)| {
            serde_json::json!({
                "item_id": format!("q{i}"),
                "subscale": s,
                "prompt": format!("{} {} {}", 10 + i, 20 + i, 30 + i),
                "options": ["40", "41", "42", "43", "44"],
            })
        })
        .collect();
    write(&fx.items(), &serde_json::to_string_pretty(&likert).unwrap());

    let mcq: Vec<serde_json::Value> = (0..60)
        .map(|i| {
            serde_json::json!({
                "item_id": format!("m{i}"),
                "prompt": format!("{} {}", i % 64, (3 * i) % 64),
                "options": ["50", "51", "52", "53"],
                "answer": ANSWERS[i % 4],
            })
        })
        .collect();
    write(&fx.mcq(), &serde_json::to_string_pretty(&mcq).unwrap());

    write(
        &fx.record(),
        r#"{
  "short_label": "Descriptions of physical harm to others",
  "long_description": "Fires on text describing injury.",
  "mft_alignment": "care",
  "mft_polarity": "vice",
  "rationale": "Snippets 1 and 2 describe harm.",
  "evidence_ids": [1, 2],
  "confidence": 0.8
}
"#,
    );
    write(&fx.lexicon(), "harm\nsuffering\ncruel\n");
    fx
}

/// Every subcommand with arguments that write under `out`. Commands listed
/// later may read what earlier ones wrote.
pub fn command_plan(fx: &Fixture, out: &Path) -> Vec<(&'static str, Vec<String>)> {
    let o = |name: &str| p(&out.join(name));
    let acts = p(&fx.acts());
    let vecs = p(&fx.vectors());
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        ("store validate", s(&["store", "validate", &acts])),
        ("store validate sae", s(&["store", "validate", &p(&fx.sae(1))])),
        ("store validate corpus", s(&["store", "validate", &p(&fx.corpus())])),
        (
            "vectors build",
            s(&["vectors", "build", "--activations", &acts, "--contrast", "nonmoral", "--out", &o("vec_nonmoral")]),
        ),
        (
            "vectors build pairwise",
            s(&["vectors", "build", "--activations", &acts, "--contrast", "pairwise", "--out", &o("vec_pairwise")]),
        ),
        (
            "project run",
            s(&["project", "run", "--activations", &acts, "--vectors", &vecs, "--label", "care", "--layer", "2", "--out", &o("project.csv")]),
        ),
        (
            "sep curve",
            s(&["sep", "curve", "--activations", &acts, "--vectors", &vecs, "--label", "care", "--out", &o("curve.csv")]),
        ),
        (
            "sep pairwise",
            s(&["sep", "pairwise", "--activations", &acts, "--vectors", &o("vec_pairwise"), "--layer", "3", "--out", &o("pairwise.csv")]),
        ),
        (
            "sep pairwise vs_rest",
            s(&["sep", "pairwise", "--activations", &acts, "--vectors", &vecs, "--layer", "3", "--construction", "vs_rest", "--out", &o("pairwise_rest.csv")]),
        ),
        (
            "sep density",
            s(&["sep", "density", "--activations", &acts, "--vectors", &vecs, "--label", "care", "--out", &o("density.csv")]),
        ),
        (
            "sae align",
            s(&["sae", "align", "--sae", &p(&fx.saes()), "--vectors", &vecs, "--label", "care", "--trials", "20", "--out", &o("align.csv")]),
        ),
        (
            "sae fingerprint",
            s(&["sae", "fingerprint", "--sae", &p(&fx.sae(2)), "--vectors", &vecs, "--label", "care", "--out", &o("fingerprint.csv")]),
        ),
        (
            "sae mine",
            s(&["sae", "mine", "--sae", &p(&fx.sae(1)), "--corpus", &p(&fx.corpus()), "--feature", "0", "--top-docs", "4", "--window", "5", "--out", &o("windows.json")]),
        ),
        (
            "sae prompt",
            s(&["sae", "prompt", "--windows", &o("windows.json"), "--layer", "1", "--feature", "0", "--concept", "care", "--cosine", "1.0", "--out", &o("prompt.txt")]),
        ),
        (
            "sae validate-interp",
            s(&["sae", "validate-interp", "--record", &p(&fx.record()), "--snippets", "4", "--lexicon", &p(&fx.lexicon())]),
        ),
        (
            "steer sweep",
            s(&["steer", "sweep", "--model", &p(&fx.model()), "--items", &p(&fx.items()), "--layers", "1,2", "--out", &o("sweeps")]),
        ),
        (
            "steer sweep add",
            s(&["steer", "sweep", "--model", &p(&fx.model()), "--items", &p(&fx.items()), "--mode", "add", "--sae", &p(&fx.saes()), "--features", "0,5", "--layers", "1,2", "--grid", "csv:-1,0,1", "--out", &o("sweeps_add")]),
        ),
        (
            "steer sweep clamp",
            s(&["steer", "sweep", "--model", &p(&fx.model()), "--items", &p(&fx.items()), "--mode", "clamp:2", "--sae", &p(&fx.sae(2)), "--features", "0", "--corpus", &p(&fx.corpus()), "--layers", "2", "--grid", "qwen", "--out", &o("sweeps_clamp")]),
        ),
        (
            "steer fit",
            s(&["steer", "fit", "--sweeps", &o("sweeps"), "--out", &o("fit.csv"), "--response", &o("fit_response.csv")]),
        ),
        ("score mfq", s(&["score", "mfq", "--model", &p(&fx.model()), "--items", &p(&fx.items())])),
        (
            "score mcq",
            s(&["score", "mcq", "--model", &p(&fx.model()), "--items", &p(&fx.mcq()), "--sample", "25", "--seed", "3"]),
        ),
        (
            "toy demo",
            s(&["toy", "demo", "--config", &p(&fx.demo_config()), "--out", &o("demo")]),
        ),
        (
            "report emit",
            s(&["report", "emit", "--activations", &acts, "--vectors", &vecs, "--sweeps", &o("sweeps"), "--out", &o("report.md")]),
        ),
    ]
}

/// Runs the plan, saving each command's stdout as `<index>.stdout` under
/// `out`.
pub fn run_plan(fx: &Fixture, out: &Path) {
    fs::create_dir_all(out).unwrap();
    for (i, (_, args)) in command_plan(fx, out).iter().enumerate() {
        let o = ok(args);
        fs::write(out.join(format!("{i:02}.stdout")), &o.stdout).unwrap();
    }
}

/// Every file under `root`, relative path to contents, sorted.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}
