use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::LINK_TYPES;
use super::nn::{Linear, Mlp};
use crate::error::{Error, Result};

/// Range of the uniform initializer for hidden layers.
pub const INIT_SCALE: f64 = 0.05;
/// Range of the uniform initializer for token embeddings.
pub const EMBED_INIT_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hash_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hash_dim: 2048,
            embed_dim: 64,
            hidden_dim: 64,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hash_dim == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("encoder dimensions must be at least 1".into()));
        }
        Ok(())
    }

    /// Width of sentence, node and CLS representations.
    pub fn rep_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Input width of the context layer.
    pub fn context_input_dim(&self) -> usize {
        (4 + LINK_TYPES) * self.hidden_dim + 2 * LINK_TYPES
    }
}

/// Token embeddings, the sentence layer, cross-sentence attention and the
/// context layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// `hash_dim x embed_dim`, row-major.
    pub embedding: Vec<f64>,
    /// Sentence layer over `[x_s, x_q, x_s * x_q, match_s]`.
    pub sentence: Linear,
    /// Query map of the bilinear attention scores `(A u_s + b) . u_t`.
    pub attention: Linear,
    /// Context layer over `[u, c, u * c, mean(u), linked means, link counts]`.
    pub context: Linear,
}

/// The six heads. `node`/`q_node` are shared across sentences and
/// `edge`/`q_edge` across ordered pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    /// log Φᴬ, 2 outputs.
    pub answer: Mlp,
    /// log Φᵛ, 4 outputs.
    pub node: Mlp,
    /// log Φᴱ, 16 outputs.
    pub edge: Mlp,
    /// Logits of q(A).
    pub q_answer: Mlp,
    /// Logits of q(V_i).
    pub q_node: Mlp,
    /// Logits of q(E_ij).
    pub q_edge: Mlp,
}

impl Heads {
    fn init<R: Rng + ?Sized>(rep: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            answer: Mlp::init(rep, hidden, 2, INIT_SCALE, rng),
            node: Mlp::init(rep, hidden, 4, INIT_SCALE, rng),
            edge: Mlp::init(3 * rep, hidden, 16, INIT_SCALE, rng),
            q_answer: Mlp::init(rep, hidden, 2, INIT_SCALE, rng),
            q_node: Mlp::init(rep, hidden, 2, INIT_SCALE, rng),
            q_edge: Mlp::init(3 * rep, hidden, 2, INIT_SCALE, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            answer: self.answer.zeros_like(),
            node: self.node.zeros_like(),
            edge: self.edge.zeros_like(),
            q_answer: self.q_answer.zeros_like(),
            q_node: self.q_node.zeros_like(),
            q_edge: self.q_edge.zeros_like(),
        }
    }

    fn mlps(&self) -> [&Mlp; 6] {
        [&self.answer, &self.node, &self.edge, &self.q_answer, &self.q_node, &self.q_edge]
    }

    fn mlps_mut(&mut self) -> [&mut Mlp; 6] {
        [
            &mut self.answer,
            &mut self.node,
            &mut self.edge,
            &mut self.q_answer,
            &mut self.q_node,
            &mut self.q_edge,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    /// Affine map producing the NAF representation from h_CLS.
    pub naf_map: Linear,
    pub heads: Heads,
}

impl ModelParams {
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let embedding = (0..config.hash_dim * e)
            .map(|_| rng.gen_range(-EMBED_INIT_SCALE..EMBED_INIT_SCALE))
            .collect();
        let sentence = Linear::uniform(h, 4 * e, INIT_SCALE, &mut rng);
        let attention = Linear::uniform(h, h, INIT_SCALE, &mut rng);
        let context = Linear::uniform(h, config.context_input_dim(), INIT_SCALE, &mut rng);
        let naf_map = Linear::uniform(h, h, INIT_SCALE, &mut rng);
        let heads = Heads::init(config.rep_dim(), h, &mut rng);
        Ok(Self {
            encoder: EncoderParams {
                config,
                embedding,
                sentence,
                attention,
                context,
            },
            naf_map,
            heads,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn embedding_row(&self, row: usize) -> &[f64] {
        let e = self.encoder.config.embed_dim;
        &self.encoder.embedding[row * e..(row + 1) * e]
    }

    fn linears(&self) -> Vec<&Linear> {
        let mut out = vec![
            &self.encoder.sentence,
            &self.encoder.attention,
            &self.encoder.context,
            &self.naf_map,
        ];
        for m in self.heads.mlps() {
            out.push(&m.hidden);
            out.push(&m.output);
        }
        out
    }


    /// Every parameter array in canonical order: embedding, then each dense
    /// layer's weight and bias.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.encoder.embedding];
        for l in self.linears() {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { encoder, naf_map, heads } = self;
        let mut out: Vec<&mut [f64]> = vec![&mut encoder.embedding];
        let mut linears = vec![&mut encoder.sentence, &mut encoder.attention, &mut encoder.context, naf_map];
        for m in heads.mlps_mut() {
            linears.push(&mut m.hidden);
            linears.push(&mut m.output);
        }
        for l in linears {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize) -> f64 {
        *flat_locate(self.slices(), index)
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let mut slices = self.slices_mut();
        let mut i = index;
        for s in slices.iter_mut() {
            if i < s.len() {
                s[i] = value;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

fn flat_locate(slices: Vec<&[f64]>, index: usize) -> &f64 {
    let mut i = index;
    for s in slices {
        if i < s.len() {
            return &s[i];
        }
        i -= s.len();
    }
    panic!("parameter index {index} out of range");
}

/// Gradient of a scalar loss with respect to [`ModelParams`]. Embedding rows
/// are stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed_dim: usize,
    pub embedding: BTreeMap<usize, Vec<f64>>,
    pub sentence: Linear,
    pub attention: Linear,
    pub context: Linear,
    pub naf_map: Linear,
    pub heads: Heads,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            embed_dim: params.encoder.config.embed_dim,
            embedding: BTreeMap::new(),
            sentence: params.encoder.sentence.zeros_like(),
            attention: params.encoder.attention.zeros_like(),
            context: params.encoder.context.zeros_like(),
            naf_map: params.naf_map.zeros_like(),
            heads: params.heads.zeros_like(),
        }
    }

    pub fn embedding_row_mut(&mut self, row: usize) -> &mut Vec<f64> {
        let e = self.embed_dim;
        self.embedding.entry(row).or_insert_with(|| vec![0.0; e])
    }

    fn linears(&self) -> Vec<&Linear> {
        let mut out = vec![&self.sentence, &self.attention, &self.context, &self.naf_map];
        for m in self.heads.mlps() {
            out.push(&m.hidden);
            out.push(&m.output);
        }
        out
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut out = vec![&mut self.sentence, &mut self.attention, &mut self.context, &mut self.naf_map];
        for m in self.heads.mlps_mut() {
            out.push(&mut m.hidden);
            out.push(&mut m.output);
        }
        out
    }

    /// Dense slices in the same order as [`ModelParams::slices`], minus the embedding.
    pub fn dense_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in self.linears() {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn dense_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.linears_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    /// Adds `scale * other` into `self`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (row, g) in &other.embedding {
            let dst = self.embedding_row_mut(*row);
            for (d, s) in dst.iter_mut().zip(g) {
                *d += scale * s;
            }
        }
        let src = other.dense_slices();
        for (dst, src) in self.dense_slices_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.embedding.values_mut() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
        for s in self.dense_slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        let sparse: f64 = self.embedding.values().flatten().map(|x| x * x).sum();
        let dense: f64 = self.dense_slices().iter().flat_map(|s| s.iter()).map(|x| x * x).sum();
        (sparse + dense).sqrt()
    }

    /// Expands to a dense vector aligned with [`ModelParams::to_flat`].
    pub fn to_flat(&self, params: &ModelParams) -> Vec<f64> {
        let mut out = vec![0.0; params.encoder.embedding.len()];
        for (row, g) in &self.embedding {
            out[row * self.embed_dim..(row + 1) * self.embed_dim].copy_from_slice(g);
        }
        for s in self.dense_slices() {
            out.extend_from_slice(s);
        }
        out
    }
}
