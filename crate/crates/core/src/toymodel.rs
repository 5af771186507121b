//! A small seeded decoder-only transformer with residual-stream hooks.
//!
//! Pre-norm blocks (`x + attn(ln1(x))`, then `x + mlp(ln2(x))`), learned
//! positional embeddings, GELU MLP with width `4 * d_model`, and a separate
//! unembedding matrix. Everything runs in f64 and is never trained.
//!
//! Initialization draws every parameter from one ChaCha8 stream seeded by
//! `config.seed`, in declaration order:
//! token and positional embeddings `U(-EMBED_INIT, EMBED_INIT)`, every
//! linear map `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero and norm
//! gains one.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{ActivationSet, InputRecord};
use crate::tensor::{self, Matrix};

/// Half-width of the uniform embedding initializer.
pub const EMBED_INIT: f64 = 3.0;
pub const LN_EPS: f64 = 1e-5;
const MLP_MULT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("toy config `{name}` must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::validation(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Post-block residual at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct HookRecord {
    pub layer: usize,
    pub token_index: usize,
    pub residual: Vec<f64>,
}

/// Rewrites the residual stream after a block. `residual` has one row per
/// position; whatever is left in it flows into the next block.
pub trait ResidualEdit: Sync {
    fn edit(&self, layer: usize, residual: &mut Matrix);
}

impl<F: Fn(usize, &mut Matrix) + Sync> ResidualEdit for F {
    fn edit(&self, layer: usize, residual: &mut Matrix) {
        self(layer, residual)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[n_tokens x vocab_size]`.
    pub logits: Matrix,
    pub records: Vec<HookRecord>,
}

impl ForwardOutput {
    pub fn last_logits(&self) -> &[f64] {
        self.logits.row(self.logits.rows() - 1)
    }

    pub fn residual(&self, layer: usize, token_index: usize) -> Option<&[f64]> {
        self.records
            .iter()
            .find(|r| r.layer == layer && r.token_index == token_index)
            .map(|r| r.residual.as_slice())
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        Self {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        layer_norm(x, &self.gain, &self.bias)
    }
}

/// `gain * (x - mean) / sqrt(var + LN_EPS) + bias`, population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let mu = tensor::mean(x);
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| g * (v - mu) * inv + b)
        .collect()
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    w_q: Matrix,
    w_k: Matrix,
    w_v: Matrix,
    w_o: Matrix,
    ln2: LayerNorm,
    w_in: Matrix,
    b_in: Vec<f64>,
    w_out: Matrix,
    b_out: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half_width: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-half_width..half_width))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

fn linear(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Matrix {
    uniform(rng, out_dim, in_dim, 1.0 / (in_dim as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    config: ToyConfig,
    tok_emb: Matrix,
    pos_emb: Matrix,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    unembed: Matrix,
}

impl ToyModel {
    pub fn new(config: ToyConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let d_mlp = MLP_MULT * d;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tok_emb = uniform(&mut rng, config.vocab_size, d, EMBED_INIT);
        let pos_emb = uniform(&mut rng, config.max_seq_len, d, EMBED_INIT);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1: LayerNorm::new(d),
                w_q: linear(&mut rng, d, d),
                w_k: linear(&mut rng, d, d),
                w_v: linear(&mut rng, d, d),
                w_o: linear(&mut rng, d, d),
                ln2: LayerNorm::new(d),
                w_in: linear(&mut rng, d_mlp, d),
                b_in: vec![0.0; d_mlp],
                w_out: linear(&mut rng, d, d_mlp),
                b_out: vec![0.0; d],
            })
            .collect();
        let unembed = linear(&mut rng, config.vocab_size, d);
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            blocks,
            ln_f: LayerNorm::new(d),
            unembed,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    /// Final norm `(gain, bias)`, applied before the unembedding.
    pub fn final_norm(&self) -> (&[f64], &[f64]) {
        (&self.ln_f.gain, &self.ln_f.bias)
    }

    /// `[vocab_size x d_model]`.
    pub fn unembedding(&self) -> &Matrix {
        &self.unembed
    }

    /// FNV-1a over the bit patterns of every parameter of block `layer`.
    pub fn layer_checksum(&self, layer: usize) -> Option<u64> {
        let b = self.blocks.get(layer)?;
        let parts: [&[f64]; 12] = [
            &b.ln1.gain,
            &b.ln1.bias,
            b.w_q.as_slice(),
            b.w_k.as_slice(),
            b.w_v.as_slice(),
            b.w_o.as_slice(),
            &b.ln2.gain,
            &b.ln2.bias,
            b.w_in.as_slice(),
            &b.b_in,
            b.w_out.as_slice(),
            &b.b_out,
        ];
        Some(fnv1a_f64(parts.iter().flat_map(|p| p.iter())))
    }

    /// FNV-1a over every parameter in the model.
    pub fn weight_checksum(&self) -> u64 {
        let mut h = fnv1a_f64(self.tok_emb.as_slice().iter().chain(self.pos_emb.as_slice()));
        for l in 0..self.blocks.len() {
            h ^= self.layer_checksum(l).expect("in range").rotate_left(l as u32 + 1);
        }
        h ^ fnv1a_f64(self.unembed.as_slice().iter())
    }

    /// Runs the model on `tokens`, applying `edit` after every block and
    /// recording post-edit residuals for every position of `capture_layers`.
    pub fn forward(
        &self,
        tokens: &[usize],
        capture_layers: &[usize],
        edit: Option<&dyn ResidualEdit>,
    ) -> Result<ForwardOutput> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::validation("token sequence is empty"));
        }
        if n > self.config.max_seq_len {
            return Err(Error::validation(format!(
                "sequence length {n} exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::OutOfRange {
                what: "token id",
                index: bad,
                limit: self.config.vocab_size,
            });
        }
        if let Some(&bad) = capture_layers.iter().find(|&&l| l >= self.config.n_layers) {
            return Err(Error::OutOfRange {
                what: "layer",
                index: bad,
                limit: self.config.n_layers,
            });
        }

        let d = self.config.d_model;
        let mut x = Matrix::zeros(n, d);
        for (t, &tok) in tokens.iter().enumerate() {
            let row = x.row_mut(t);
            for ((r, e), p) in row.iter_mut().zip(self.tok_emb.row(tok)).zip(self.pos_emb.row(t)) {
                *r = e + p;
            }
        }

        let mut records = Vec::new();
        for (l, block) in self.blocks.iter().enumerate() {
            self.attention(block, &mut x);
            self.mlp(block, &mut x);
            if let Some(e) = edit {
                e.edit(l, &mut x);
            }
            if capture_layers.contains(&l) {
                records.extend((0..n).map(|t| HookRecord {
                    layer: l,
                    token_index: t,
                    residual: x.row(t).to_vec(),
                }));
            }
        }

        let mut logits = Matrix::zeros(n, self.config.vocab_size);
        for t in 0..n {
            let h = self.ln_f.apply(x.row(t));
            logits.row_mut(t).copy_from_slice(&self.unembed.matvec(&h));
        }
        Ok(ForwardOutput { logits, records })
    }

    fn attention(&self, b: &Block, x: &mut Matrix) {
        let d = self.config.d_model;
        let h = self.config.n_heads;
        let dh = d / h;
        let normed: Vec<Vec<f64>> = x.iter_rows().map(|r| b.ln1.apply(r)).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|r| b.w_q.matvec(r)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|r| b.w_k.matvec(r)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|r| b.w_v.matvec(r)).collect();
        let scale = 1.0 / (dh as f64).sqrt();

        for (t, qt) in q.iter().enumerate() {
            let mut mixed = vec![0.0; d];
            for head in 0..h {
                let span = head * dh..(head + 1) * dh;
                let scores: Vec<f64> = (0..=t)
                    .map(|s| tensor::dot(&qt[span.clone()], &k[s][span.clone()]) * scale)
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = w.iter().sum();
                for (s, ws) in w.iter().enumerate() {
                    tensor::axpy(&mut mixed[span.clone()], ws / z, &v[s][span.clone()]);
                }
            }
            let out = b.w_o.matvec(&mixed);
            tensor::axpy(x.row_mut(t), 1.0, &out);
        }
    }

    fn mlp(&self, b: &Block, x: &mut Matrix) {
        for t in 0..x.rows() {
            let normed = b.ln2.apply(x.row(t));
            let hidden: Vec<f64> = b
                .w_in
                .matvec(&normed)
                .iter()
                .zip(&b.b_in)
                .map(|(a, c)| gelu(a + c))
                .collect();
            let mut out = b.w_out.matvec(&hidden);
            tensor::axpy(&mut out, 1.0, &b.b_out);
            tensor::axpy(x.row_mut(t), 1.0, &out);
        }
    }
}

/// A text input with its group label, for building activation sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledText {
    pub input_id: String,
    pub group_label: String,
    pub text: String,
}

/// Runs every input through `model` and records the last-token residual at
/// each layer, one row per input.
pub fn capture_activation_set(
    model: &ToyModel,
    model_id: &str,
    label_vocab: Vec<String>,
    inputs: &[LabeledText],
) -> Result<ActivationSet> {
    let vocab = model.config().vocab_size;
    let layers: Vec<usize> = (0..model.n_layers()).collect();
    let captured = inputs
        .par_iter()
        .map(|inp| {
            let tokens = tokenize(&inp.text, vocab);
            let last = tokens.len().saturating_sub(1);
            let out = model.forward(&tokens, &layers, None)?;
            let rows: Vec<Vec<f64>> = layers
                .iter()
                .map(|&l| out.residual(l, last).expect("captured").to_vec())
                .collect();
            Ok((last, rows))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tensors = BTreeMap::new();
    for &l in &layers {
        let rows: Vec<Vec<f64>> = captured.iter().map(|(_, r)| r[l].clone()).collect();
        tensors.insert(l, Matrix::from_rows(&rows)?);
    }
    let records = inputs
        .iter()
        .zip(&captured)
        .map(|(inp, (last, _))| InputRecord {
            input_id: inp.input_id.clone(),
            group_label: inp.group_label.clone(),
            token_index: *last,
            repeat_count: 1,
        })
        .collect();
    ActivationSet::new(model_id, model.d_model(), label_vocab, records, tensors)
}

fn fnv1a_f64<'a>(values: impl Iterator<Item = &'a f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn fnv1a_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in s.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Maps whitespace-separated words to token ids: a word that parses as an
/// integer below `vocab_size` is used directly, anything else is hashed
/// (FNV-1a) into the vocabulary.
pub fn tokenize(text: &str, vocab_size: usize) -> Vec<usize> {
    text.split_whitespace()
        .map(|w| match w.parse::<usize>() {
            Ok(id) if id < vocab_size => id,
            _ => (fnv1a_str(w) % vocab_size as u64) as usize,
        })
        .collect()
}
