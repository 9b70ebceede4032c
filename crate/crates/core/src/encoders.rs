//! Modality encoders.
//!
//! The frozen pair stands in for pretrained aligned text/video encoders:
//! both share one token-embedding table and one mixing matrix, and the video
//! side adds Gaussian noise of scale `noise_sigma` (zero for text). The
//! modality gap is therefore a single controllable parameter, which is what
//! lets the transfer experiments isolate the effect of switching modalities.
//!
//! Downstream of the frozen pair sit the trainable pieces: a residual
//! projection head applied to every step feature, and an affine ingredient
//! regressor producing the step-0 embedding from a multi-hot ingredient
//! vector.

use serde::{Deserialize, Serialize};

use crate::corpus::Step;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Text,
    Video,
}

/// Frozen feature extractor. Parameters are plain tensors, not `ParamStore`
/// entries, so no optimizer can ever update them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenEncoder {
    pub modality: Modality,
    pub seed: u64,
    pub noise_sigma: f64,
    pub d_f: usize,
    embed_table: Tensor,
    mix_matrix: Tensor,
}

impl FrozenEncoder {
    /// Builds an encoder. Two encoders built from the same `(seed, d_f,
    /// vocab_len)` share `embed_table` and `mix_matrix` exactly, whatever
    /// their modality.
    pub fn new(modality: Modality, seed: u64, vocab_len: usize, d_f: usize, noise_sigma: f64) -> Self {
        let mut rng = Prng::derive(seed, &[0x0e6c0de5]);
        let embed_table = Tensor::from_vec(vocab_len, d_f, rng.normal_vec(vocab_len * d_f));
        let mix_matrix = random_orthogonal(d_f, &mut rng);
        let noise_sigma = match modality {
            Modality::Text => 0.0,
            Modality::Video => noise_sigma,
        };
        FrozenEncoder {
            modality,
            seed,
            noise_sigma,
            d_f,
            embed_table,
            mix_matrix,
        }
    }

    /// Mean of token embeddings through the mixing matrix; the video
    /// modality adds `noise_sigma`-scaled Gaussian noise drawn from
    /// `noise_seed`. Pure: identical inputs give identical outputs.
    pub fn encode_step(&self, step: &Step, noise_seed: u64) -> Result<Tensor> {
        if step.tokens.is_empty() {
            return Err(Error::data("cannot encode an empty step"));
        }
        let mut mean = vec![0.0; self.d_f];
        for &tok in &step.tokens {
            if (tok as usize) >= self.embed_table.rows {
                return Err(Error::data(format!(
                    "token id {tok} outside the encoder vocabulary"
                )));
            }
            for (m, e) in mean.iter_mut().zip(self.embed_table.row_slice(tok as usize)) {
                *m += e;
            }
        }
        let inv = 1.0 / step.tokens.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        let mut out = Tensor::row(&mean).matmul(&self.mix_matrix);
        if self.noise_sigma > 0.0 {
            let mut rng = Prng::derive(self.seed ^ 0x7f4a7c15, &[noise_seed]);
            for v in &mut out.data {
                *v += self.noise_sigma * rng.normal();
            }
        }
        Ok(out)
    }
}

/// Modified Gram-Schmidt orthogonalization of a random Gaussian matrix, so
/// the mixing step preserves feature norms exactly.
fn random_orthogonal(d: usize, rng: &mut Prng) -> Tensor {
    let mut m = Tensor::from_vec(d, d, rng.normal_vec(d * d));
    for i in 0..d {
        for j in 0..i {
            let dot: f64 = m
                .row_slice(i)
                .iter()
                .zip(m.row_slice(j))
                .map(|(a, b)| a * b)
                .sum();
            let proj: Vec<f64> = m.row_slice(j).iter().map(|v| v * dot).collect();
            for (a, p) in m.row_slice_mut(i).iter_mut().zip(&proj) {
                *a -= p;
            }
        }
        let norm = m.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        for a in m.row_slice_mut(i) {
            *a /= norm;
        }
    }
    m
}

/// Residual MLP with three blocks: x <- x + w2 * tanh(x w1 + b1) + b2.
/// The residual branches (w2, b2) start at zero, so the head is the
/// identity at initialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub d_f: usize,
    blocks: Vec<ResidualBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResidualBlock {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

pub const PROJECTION_BLOCKS: usize = 3;

impl ProjectionHead {
    pub fn new(store: &mut ParamStore, d_f: usize, rng: &mut Prng) -> Self {
        let scale = 1.0 / (d_f as f64).sqrt();
        let blocks = (0..PROJECTION_BLOCKS)
            .map(|b| ResidualBlock {
                w1: store.add(
                    &format!("proj.block{b}.w1"),
                    Tensor::from_vec(
                        d_f,
                        d_f,
                        rng.normal_vec(d_f * d_f).iter().map(|v| v * scale).collect(),
                    ),
                ),
                b1: store.add(&format!("proj.block{b}.b1"), Tensor::zeros(1, d_f)),
                w2: store.add(&format!("proj.block{b}.w2"), Tensor::zeros(d_f, d_f)),
                b2: store.add(&format!("proj.block{b}.b2"), Tensor::zeros(1, d_f)),
            })
            .collect();
        ProjectionHead { d_f, blocks }
    }

    /// Projects a batch of raw step features ([n, d_f] rows).
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        assert_eq!(
            tape.value(x).cols,
            self.d_f,
            "projection head dimension mismatch"
        );
        let mut h = x;
        for block in &self.blocks {
            let a = tape.affine(h, block.w1, block.b1);
            let a = tape.tanh(a);
            let a = tape.affine(a, block.w2, block.b2);
            h = tape.add(h, a);
        }
        h
    }
}

/// Single affine layer from multi-hot ingredient vectors to the shared
/// feature space; its output is the step-0 embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngredientRegressor {
    pub v_ing: usize,
    pub d_f: usize,
    w: ParamId,
    b: ParamId,
}

impl IngredientRegressor {
    pub fn new(store: &mut ParamStore, v_ing: usize, d_f: usize, rng: &mut Prng) -> Self {
        let scale = 1.0 / (v_ing as f64).sqrt();
        IngredientRegressor {
            v_ing,
            d_f,
            w: store.add(
                "ingreg.w",
                Tensor::from_vec(
                    v_ing,
                    d_f,
                    rng.normal_vec(v_ing * d_f).iter().map(|v| v * scale).collect(),
                ),
            ),
            b: store.add("ingreg.b", Tensor::zeros(1, d_f)),
        }
    }

    pub fn multi_hot(&self, ingredients: &std::collections::BTreeSet<usize>) -> Result<Tensor> {
        let mut row = vec![0.0; self.v_ing];
        for &i in ingredients {
            if i >= self.v_ing {
                return Err(Error::data(format!(
                    "ingredient index {i} out of range (V_ing = {})",
                    self.v_ing
                )));
            }
            row[i] = 1.0;
        }
        Ok(Tensor::row(&row))
    }

    pub fn forward(&self, tape: &mut Tape, multi_hot: NodeId) -> NodeId {
        assert_eq!(tape.value(multi_hot).cols, self.v_ing);
        tape.affine(multi_hot, self.w, self.b)
    }

    pub fn embed(
        &self,
        tape: &mut Tape,
        ingredients: &std::collections::BTreeSet<usize>,
    ) -> Result<NodeId> {
        let hot = self.multi_hot(ingredients)?;
        let hot = tape.constant(hot);
        Ok(self.forward(tape, hot))
    }
}

/// Derives the per-step noise seed for video features from the identity of
/// the dataset and the position, so features are fixed per dataset rather
/// than resampled per epoch.
pub fn step_noise_seed(corpus_seed: u64, procedure_index: usize, step_index: usize) -> u64 {
    // Distinct (procedure, step) pairs must map to distinct seeds.
    corpus_seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((procedure_index as u64) << 16)
        .wrapping_add(step_index as u64)
}
