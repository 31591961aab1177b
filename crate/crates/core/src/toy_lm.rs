// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small deterministic decoder-only transformer with residual-stream hooks.
//!
//! Architecture: byte-level tokens plus a BOS token, learned positional
//! embeddings, pre-norm blocks (causal multi-head attention, then a GELU
//! feed-forward of width `4 * hidden_dim`), a final layer norm and an untied
//! unembedding. Weights are random, drawn from `init_seed`, and every weight
//! is an exactly representable `f32` so checkpoints round-trip bit-exactly.
//!
//! Residual capture point `0` is the embedding output; point `l` (1-based)
//! is the residual stream after block `l - 1`. Steering vectors address the
//! same indices and are added right after the capture point is computed, so
//! the trace holds the steered residual.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::seed::rng;
use crate::steering::{add_steering, PositionPolicy, SteeringVector};

pub type TokenId = u32;

pub const BYTE_VOCAB: usize = 256;
pub const BOS: TokenId = 256;
pub const PAD: TokenId = 257;

/// Bytes map to their own ids; every sequence starts with [`BOS`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        std::iter::once(BOS)
            .chain(text.bytes().map(TokenId::from))
            .collect()
    }

    /// Single-token encodings of `letter` and its leading-space variant.
    /// With a byte vocabulary `" a"` spans two tokens, so only the bare
    /// letter qualifies.
    pub fn letter_variants(&self, letter: char) -> Vec<TokenId> {
        let mut buf = [0u8; 4];
        let bytes = letter.encode_utf8(&mut buf).as_bytes();
        if bytes.len() == 1 {
            vec![TokenId::from(bytes[0])]
        } else {
            Vec::new()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyLMConfig {
    pub vocab_size: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub max_seq: usize,
    pub init_seed: u64,
}

impl Default for ToyLMConfig {
    fn default() -> Self {
        Self {
            vocab_size: BYTE_VOCAB + 2,
            n_layers: 8,
            hidden_dim: 64,
            n_heads: 4,
            max_seq: 512,
            init_seed: 0,
        }
    }
}

impl ToyLMConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_owned()));
        if self.vocab_size == 0
            || self.n_layers == 0
            || self.hidden_dim == 0
            || self.n_heads == 0
            || self.max_seq == 0
        {
            return bad("all counts must be at least 1");
        }
        if !self.hidden_dim.is_multiple_of(self.n_heads) {
            return bad("hidden_dim must be divisible by n_heads");
        }
        Ok(())
    }

    /// Number of residual capture points, `n_layers + 1`.
    pub fn capture_points(&self) -> usize {
        self.n_layers + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerNorm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

/// Row-major `rows x cols` matrix applied as `x · W`.
#[derive(Debug, Clone, PartialEq)]
struct Linear {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Linear {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weight[i * self.cols..(i + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    ln2: LayerNorm,
    up: Linear,
    down: Linear,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Steering applied during a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Steering<'a> {
    pub vectors: &'a [SteeringVector],
    pub multiplier: f64,
    pub position: PositionPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `(n_layers + 1) x hidden_dim` residuals at the final token.
    pub residuals: Vec<Vec<f64>>,
    /// Logits at the final position.
    pub logits: Vec<f64>,
    /// `(layer, multiplier)` for every injection that fired, in layer order.
    pub injected: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLM {
    config: ToyLMConfig,
    token_embedding: Vec<f64>,
    position_embedding: Vec<f64>,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    unembed: Linear,
}

struct Init {
    rng: rand_chacha::ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, n: usize, std: f64) -> Vec<f64> {
        let dist = Normal::new(0.0, std).expect("positive std");
        (0..n)
            .map(|_| dist.sample(&mut self.rng) as f32 as f64)
            .collect()
    }

    fn linear(&mut self, rows: usize, cols: usize) -> Linear {
        Linear {
            rows,
            cols,
            weight: self.normal(rows * cols, 1.0 / (rows as f64).sqrt()),
            bias: vec![0.0; cols],
        }
    }
}

impl ToyLM {
    /// Builds a model whose weights are a pure function of `config`.
    pub fn new(config: ToyLMConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut init = Init {
            rng: rng(config.init_seed),
        };
        let token_embedding = init.normal(config.vocab_size * d, 1.0);
        let position_embedding = init.normal(config.max_seq * d, 0.5);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1: LayerNorm::new(d),
                query: init.linear(d, d),
                key: init.linear(d, d),
                value: init.linear(d, d),
                out: init.linear(d, d),
                ln2: LayerNorm::new(d),
                up: init.linear(d, 4 * d),
                down: init.linear(4 * d, d),
            })
            .collect();
        let unembed = init.linear(d, config.vocab_size);
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            blocks,
            final_norm: LayerNorm::new(d),
            unembed,
        })
    }

    pub fn config(&self) -> &ToyLMConfig {
        &self.config
    }

    fn check_steering(&self, steering: &Steering<'_>) -> Result<(), ModelError> {
        let mut seen = vec![false; self.config.capture_points()];
        for v in steering.vectors {
            if v.layer >= seen.len() {
                return Err(ModelError::Steering {
                    layer: v.layer,
                    message: format!("model has capture points 0..={}", self.config.n_layers),
                });
            }
            if v.direction.len() != self.config.hidden_dim {
                return Err(ModelError::Steering {
                    layer: v.layer,
                    message: format!(
                        "direction has {} values, hidden_dim is {}",
                        v.direction.len(),
                        self.config.hidden_dim
                    ),
                });
            }
            if std::mem::replace(&mut seen[v.layer], true) {
                return Err(ModelError::Steering {
                    layer: v.layer,
                    message: "more than one vector for this layer".into(),
                });
            }
        }
        Ok(())
    }

    fn steer(
        stream: &mut [Vec<f64>],
        layer: usize,
        steering: Option<&Steering<'_>>,
        injected: &mut Vec<(usize, f64)>,
    ) {
        let Some(s) = steering else { return };
        let Some(v) = s.vectors.iter().find(|v| v.layer == layer) else {
            return;
        };
        match s.position {
            PositionPolicy::AllPositions => {
                for x in stream.iter_mut() {
                    add_steering(x, &v.direction, s.multiplier);
                }
            }
            PositionPolicy::FinalPosition => {
                if let Some(x) = stream.last_mut() {
                    add_steering(x, &v.direction, s.multiplier);
                }
            }
        }
        injected.push((layer, s.multiplier));
    }

    fn attention(&self, block: &Block, normed: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let heads = self.config.n_heads;
        let head_dim = self.config.hidden_dim / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let q: Vec<Vec<f64>> = normed.iter().map(|h| block.query.apply(h)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|h| block.key.apply(h)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|h| block.value.apply(h)).collect();
        let mut mixed = vec![vec![0.0; self.config.hidden_dim]; normed.len()];
        let mut scores = Vec::with_capacity(normed.len());
        for t in 0..normed.len() {
            for h in 0..heads {
                let span = h * head_dim..(h + 1) * head_dim;
                scores.clear();
                for key in &k[..=t] {
                    let dot: f64 = q[t][span.clone()]
                        .iter()
                        .zip(&key[span.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    scores.push(dot * scale);
                }
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for score in scores.iter_mut() {
                    *score = (*score - max).exp();
                    total += *score;
                }
                let out = &mut mixed[t][span.clone()];
                for (s, weight) in scores.iter().enumerate() {
                    let weight = weight / total;
                    for (o, x) in out.iter_mut().zip(&v[s][span.clone()]) {
                        *o += weight * x;
                    }
                }
            }
        }
        mixed.iter().map(|m| block.out.apply(m)).collect()
    }

    pub fn forward(
        &self,
        tokens: &[TokenId],
        steering: Option<&Steering<'_>>,
    ) -> Result<ForwardTrace, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if tokens.len() > self.config.max_seq {
            return Err(ModelError::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq,
            });
        }
        if let Some(&token) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(ModelError::TokenOutOfRange {
                token,
                vocab: self.config.vocab_size,
            });
        }
        if let Some(s) = steering {
            self.check_steering(s)?;
        }

        let d = self.config.hidden_dim;
        let mut stream: Vec<Vec<f64>> = tokens
            .iter()
            .enumerate()
            .map(|(pos, &tok)| {
                let t = tok as usize;
                self.token_embedding[t * d..(t + 1) * d]
                    .iter()
                    .zip(&self.position_embedding[pos * d..(pos + 1) * d])
                    .map(|(a, b)| a + b)
                    .collect()
            })
            .collect();

        let mut residuals = Vec::with_capacity(self.config.capture_points());
        let mut injected = Vec::new();
        Self::steer(&mut stream, 0, steering, &mut injected);
        residuals.push(stream.last().expect("non-empty").clone());

        for (i, block) in self.blocks.iter().enumerate() {
            let normed: Vec<Vec<f64>> = stream.iter().map(|x| block.ln1.apply(x)).collect();
            let attended = self.attention(block, &normed);
            for (x, a) in stream.iter_mut().zip(&attended) {
                x.iter_mut().zip(a).for_each(|(x, a)| *x += a);
            }
            for x in stream.iter_mut() {
                let hidden: Vec<f64> = block
                    .up
                    .apply(&block.ln2.apply(x))
                    .into_iter()
                    .map(gelu)
                    .collect();
                let update = block.down.apply(&hidden);
                x.iter_mut().zip(&update).for_each(|(x, u)| *x += u);
            }
            Self::steer(&mut stream, i + 1, steering, &mut injected);
            residuals.push(stream.last().expect("non-empty").clone());
        }

        let last = self.final_norm.apply(stream.last().expect("non-empty"));
        let logits = self.unembed.apply(&last);
        Ok(ForwardTrace {
            residuals,
            logits,
            injected,
        })
    }

    /// Normalized `(p_a, p_b)` for the next token after `tokens`. Each side
    /// sums the probabilities of its token variants.
    pub fn letter_probabilities(
        &self,
        tokens: &[TokenId],
        letter_a: &[TokenId],
        letter_b: &[TokenId],
        steering: Option<&Steering<'_>>,
    ) -> Result<(f64, f64), ModelError> {
        for &t in letter_a.iter().chain(letter_b) {
            if t as usize >= self.config.vocab_size {
                return Err(ModelError::TokenOutOfRange {
                    token: t,
                    vocab: self.config.vocab_size,
                });
            }
        }
        let trace = self.forward(tokens, steering)?;
        Ok(pair_probabilities(&trace.logits, letter_a, letter_b))
    }

    fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for b in &self.blocks {
            out.extend([&b.ln1.gain, &b.ln1.bias]);
            for l in [&b.query, &b.key, &b.value, &b.out] {
                out.extend([&l.weight, &l.bias]);
            }
            out.extend([&b.ln2.gain, &b.ln2.bias]);
            for l in [&b.up, &b.down] {
                out.extend([&l.weight, &l.bias]);
            }
        }
        out.extend([&self.final_norm.gain, &self.final_norm.bias]);
        out.extend([&self.unembed.weight, &self.unembed.bias]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for b in &mut self.blocks {
            out.push(&mut b.ln1.gain);
            out.push(&mut b.ln1.bias);
            for l in [&mut b.query, &mut b.key, &mut b.value, &mut b.out] {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
            out.push(&mut b.ln2.gain);
            out.push(&mut b.ln2.bias);
            for l in [&mut b.up, &mut b.down] {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.final_norm.gain);
        out.push(&mut self.final_norm.bias);
        out.push(&mut self.unembed.weight);
        out.push(&mut self.unembed.bias);
        out
    }

    /// Checkpoint layout: magic `TLM1`, five little-endian `u32`
    /// (vocab_size, n_layers, hidden_dim, n_heads, max_seq), `u64` init_seed,
    /// then every tensor as little-endian `f32` in a fixed order.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let c = &self.config;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [c.vocab_size, c.n_layers, c.hidden_dim, c.n_heads, c.max_seq] {
            bytes.extend_from_slice(&(v as u32).to_le_bytes());
        }
        bytes.extend_from_slice(&c.init_seed.to_le_bytes());
        for t in self.tensors() {
            bytes.extend(t.iter().flat_map(|&x| (x as f32).to_le_bytes()));
        }
        fs::write(path, bytes).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.len() < CHECKPOINT_HEADER || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let word =
            |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let config = ToyLMConfig {
            vocab_size: word(0),
            n_layers: word(1),
            hidden_dim: word(2),
            n_heads: word(3),
            max_seq: word(4),
            init_seed: u64::from_le_bytes(bytes[24..32].try_into().unwrap()),
        };
        config.validate()?;
        // allocate shapes, then overwrite with the stored values
        let mut model = Self::new(config)?;
        let payload = &bytes[CHECKPOINT_HEADER..];
        let expected: usize = model.tensors().iter().map(|t| t.len() * 4).sum();
        if payload.len() != expected {
            return Err(ModelError::Checkpoint(format!(
                "expected {expected} payload bytes, found {}",
                payload.len()
            )));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        for t in model.tensors_mut() {
            for x in t.iter_mut() {
                *x = floats.next().expect("length checked");
            }
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"TLM1";
const CHECKPOINT_HEADER: usize = 32;

/// Softmax over the full vocabulary, then the two letter masses renormalized
/// to sum to one.
pub fn pair_probabilities(
    logits: &[f64],
    letter_a: &[TokenId],
    letter_b: &[TokenId],
) -> (f64, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let mass = |ids: &[TokenId]| {
        ids.iter()
            .map(|&t| (logits[t as usize] - max).exp() / total)
            .sum::<f64>()
    };
    let (a, b) = (mass(letter_a), mass(letter_b));
    if a + b == 0.0 {
        return (0.5, 0.5);
    }
    let p_a = a / (a + b);
    (p_a, 1.0 - p_a)
}
