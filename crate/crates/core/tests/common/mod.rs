#![allow(dead_code)]

use std::collections::BTreeMap;

use moralgeo_core::store::{ActivationKind, InputRecord, SaeMetadata};
use moralgeo_core::{ActivationSet, Matrix, SaeDictionary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force W1: evaluates both empirical CDFs by counting at every
/// distinct breakpoint and sums |F_P - F_Q| times the gap to the next one.
pub fn w1_oracle(p: &[f64], q: &[f64]) -> f64 {
    let mut pts: Vec<f64> = p.iter().chain(q).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    pts.windows(2)
        .map(|w| (cdf(p, w[0]) - cdf(q, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, mean: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| mean + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Random activation set with the given labels; each label gets
/// `per_label` inputs with 1..=3 repeats, values uniform in [-2, 2].
pub fn random_set(rng: &mut ChaCha8Rng, labels: &[&str], per_label: usize, d: usize, layers: &[usize]) -> ActivationSet {
    let mut inputs = Vec::new();
    for l in labels {
        for i in 0..per_label {
            inputs.push(InputRecord {
                input_id: format!("{l}-{i}"),
                group_label: l.to_string(),
                token_index: 0,
                repeat_count: rng.random_range(1..=3),
            });
        }
    }
    let rows: usize = inputs.iter().map(|i| i.repeat_count).sum();
    let mut tensors = BTreeMap::new();
    for &layer in layers {
        let data = (0..rows * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        tensors.insert(layer, Matrix::from_vec(rows, d, data).unwrap());
    }
    ActivationSet::new(
        "random",
        d,
        labels.iter().map(|s| s.to_string()).collect(),
        inputs,
        tensors,
    )
    .unwrap()
}

/// Applies `f` to every activation row of `set`, keeping everything else.
pub fn map_rows(set: &ActivationSet, f: impl Fn(&[f64]) -> Vec<f64>) -> ActivationSet {
    let mut tensors = BTreeMap::new();
    for l in set.layers() {
        let m = set.layer(l).unwrap();
        let rows: Vec<Vec<f64>> = m.iter_rows().map(&f).collect();
        tensors.insert(l, Matrix::from_rows(&rows).unwrap());
    }
    ActivationSet::new(
        set.model_id(),
        set.d_model(),
        set.label_vocab().to_vec(),
        set.inputs().to_vec(),
        tensors,
    )
    .unwrap()
}

/// Random orthonormal rows via Gram-Schmidt on Gaussian draws.
pub fn orthonormal_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    assert!(n <= d);
    let mut out: Vec<Vec<f64>> = Vec::new();
    while out.len() < n {
        let mut v = gaussian(rng, d, 0.0);
        for u in &out {
            let c: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= c * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            out.push(v.iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// Dictionary with orthonormal decoder rows, `W_enc = W_dec^T`, zero biases.
pub fn orthonormal_dict(rng: &mut ChaCha8Rng, d: usize, k: usize) -> SaeDictionary {
    let rows = orthonormal_rows(rng, d, d);
    let dec = Matrix::from_rows(&rows).unwrap();
    let meta = SaeMetadata {
        layer: 0,
        d_model: d,
        n_features: d,
        k,
        activation_kind: ActivationKind::Topk,
        source: None,
    };
    SaeDictionary::from_decoder_rows(meta, dec.clone(), vec![0.0; d], dec, vec![0.0; d]).unwrap()
}

/// Dictionary with Gaussian encoder and decoder rows.
pub fn random_dict(rng: &mut ChaCha8Rng, layer: usize, d: usize, m: usize, k: usize) -> SaeDictionary {
    let enc = Matrix::from_vec(m, d, gaussian(rng, m * d, 0.0)).unwrap();
    let dec = Matrix::from_vec(m, d, gaussian(rng, m * d, 0.0)).unwrap();
    let meta = SaeMetadata {
        layer,
        d_model: d,
        n_features: m,
        k,
        activation_kind: ActivationKind::Topk,
        source: None,
    };
    SaeDictionary::from_decoder_rows(meta, enc, gaussian(rng, m, 0.0), dec, vec![0.0; d]).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
