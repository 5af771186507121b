//! Seeded inputs for the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use moralgeo_core::store::{ActivationKind, SaeMetadata};
use moralgeo_core::{Matrix, SaeDictionary, ToyConfig, ToyModel};

pub fn samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches data")
}

/// Top-k dictionary with uniform random weights and zero biases.
pub fn dictionary(d: usize, m: usize, k: usize, seed: u64) -> SaeDictionary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meta = SaeMetadata {
        layer: 0,
        d_model: d,
        n_features: m,
        k,
        activation_kind: ActivationKind::Topk,
        source: None,
    };
    let enc = random_matrix(&mut rng, m, d);
    let dec = random_matrix(&mut rng, m, d);
    SaeDictionary::from_decoder_rows(meta, enc, vec![0.0; m], dec, vec![0.0; d]).expect("valid dictionary")
}

/// The default demo-sized toy model.
pub fn toy_model() -> ToyModel {
    ToyModel::new(ToyConfig {
        vocab_size: 64,
        d_model: 32,
        n_layers: 4,
        n_heads: 4,
        max_seq_len: 64,
        seed: 0,
    })
    .expect("valid toy config")
}
