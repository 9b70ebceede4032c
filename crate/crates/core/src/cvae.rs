//! Conditional VAE over next-step embeddings.
//!
//! The posterior network reads [f_{t+1}; R_t] and emits a diagonal Gaussian
//! (mu, logvar) over the latent; the prediction head reads [z; R_t] and
//! reconstructs the next-step embedding f'_{t+1}. At inference the posterior
//! is discarded: latents come from N(0, I), or exactly zero for the
//! single-prediction mode (the prior mean).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;

/// logvar is clamped to this interval before exponentiation.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Diagonal Gaussian parameters as plain values (for logging and oracles);
/// inside training graphs they are tape nodes instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianParams {
    pub fn standard(d_z: usize) -> Self {
        GaussianParams {
            mu: vec![0.0; d_z],
            logvar: vec![0.0; d_z],
        }
    }

    /// Closed-form KL to N(0, I): 0.5 * sum(exp(lv) + mu^2 - 1 - lv).
    pub fn kl_to_standard_normal(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.logvar)
            .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
            .sum()
    }

    /// One reparameterized sample z = mu + exp(lv/2) * eps.
    pub fn sample(&self, rng: &mut Prng) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.logvar)
            .map(|(m, lv)| m + (lv / 2.0).exp() * rng.normal())
            .collect()
    }
}

fn mlp_layer(
    store: &mut ParamStore,
    rng: &mut Prng,
    name: &str,
    rows: usize,
    cols: usize,
    zero: bool,
) -> (ParamId, ParamId) {
    let w = if zero {
        Tensor::zeros(rows, cols)
    } else {
        let scale = 1.0 / (rows as f64).sqrt();
        Tensor::from_vec(
            rows,
            cols,
            rng.normal_vec(rows * cols).iter().map(|v| v * scale).collect(),
        )
    };
    (
        store.add(&format!("{name}.w"), w),
        store.add(&format!("{name}.b"), Tensor::zeros(1, cols)),
    )
}

/// 3-layer MLP q(z | f_next, R). The final layer starts at zero, so the
/// posterior opens as exactly N(0, I) and the KL term starts at zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorNet {
    pub d_f: usize,
    pub d_z: usize,
    l1: (ParamId, ParamId),
    l2: (ParamId, ParamId),
    l3: (ParamId, ParamId),
}

impl PosteriorNet {
    pub fn new(store: &mut ParamStore, d_f: usize, d_z: usize, rng: &mut Prng) -> Self {
        let hidden = (2 * d_z).max(2 * d_f);
        PosteriorNet {
            d_f,
            d_z,
            l1: mlp_layer(store, rng, "posterior.l1", 2 * d_f, hidden, false),
            l2: mlp_layer(store, rng, "posterior.l2", hidden, hidden, false),
            l3: mlp_layer(store, rng, "posterior.l3", hidden, 2 * d_z, true),
        }
    }

    /// Returns (mu, logvar) nodes, each [batch, d_z]; the concatenation
    /// order is fixed as [f_next; R] and logvar is clamped.
    pub fn forward(&self, tape: &mut Tape, f_next: NodeId, r: NodeId) -> (NodeId, NodeId) {
        assert_eq!(tape.value(f_next).cols, self.d_f, "f_next dim mismatch");
        assert_eq!(tape.value(r).cols, self.d_f, "context dim mismatch");
        let x = tape.concat_cols(f_next, r);
        let h = tape.affine(x, self.l1.0, self.l1.1);
        let h = tape.tanh(h);
        let h = tape.affine(h, self.l2.0, self.l2.1);
        let h = tape.tanh(h);
        let out = tape.affine(h, self.l3.0, self.l3.1);
        let mu = tape.slice_cols(out, 0, self.d_z);
        let logvar_raw = tape.slice_cols(out, self.d_z, self.d_z);
        let logvar = tape.clamp(logvar_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP);
        (mu, logvar)
    }
}

/// 3-layer MLP mapping [z; R] to the predicted next-step embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionHead {
    pub d_f: usize,
    pub d_z: usize,
    l1: (ParamId, ParamId),
    l2: (ParamId, ParamId),
    l3: (ParamId, ParamId),
}

impl PredictionHead {
    pub fn new(store: &mut ParamStore, d_f: usize, d_z: usize, rng: &mut Prng) -> Self {
        let hidden = (2 * d_z).max(2 * d_f);
        PredictionHead {
            d_f,
            d_z,
            l1: mlp_layer(store, rng, "predhead.l1", d_z + d_f, hidden, false),
            l2: mlp_layer(store, rng, "predhead.l2", hidden, hidden, false),
            l3: mlp_layer(store, rng, "predhead.l3", hidden, d_f, false),
        }
    }

    /// f'_{t+1} = head([z; R]).
    pub fn forward(&self, tape: &mut Tape, z: NodeId, r: NodeId) -> NodeId {
        assert_eq!(tape.value(z).cols, self.d_z, "latent dim mismatch");
        assert_eq!(tape.value(r).cols, self.d_f, "context dim mismatch");
        let x = tape.concat_cols(z, r);
        let h = tape.affine(x, self.l1.0, self.l1.1);
        let h = tape.tanh(h);
        let h = tape.affine(h, self.l2.0, self.l2.1);
        let h = tape.tanh(h);
        tape.affine(h, self.l3.0, self.l3.1)
    }
}

/// Reparameterized sample on the tape: z = mu + exp(logvar/2) * eps, with
/// eps fixed (a constant), so gradients flow to mu and logvar.
pub fn sample_latent_with_eps(
    tape: &mut Tape,
    mu: NodeId,
    logvar: NodeId,
    eps: &Tensor,
) -> NodeId {
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let eps_node = tape.constant(eps.clone());
    let scaled = tape.mul(std, eps_node);
    tape.add(mu, scaled)
}

/// As above with eps drawn from a seeded stream; deterministic per seed.
pub fn sample_latent(tape: &mut Tape, mu: NodeId, logvar: NodeId, eps_seed: u64) -> NodeId {
    let (rows, cols) = {
        let v = tape.value(mu);
        (v.rows, v.cols)
    };
    let mut rng = Prng::derive(eps_seed, &[0x1a7e47]);
    let eps = Tensor::from_vec(rows, cols, rng.normal_vec(rows * cols));
    sample_latent_with_eps(tape, mu, logvar, &eps)
}

/// `k` i.i.d. standard-normal latents. The single-prediction mode does not
/// sample at all: it uses the prior mean, exactly zero (`zero_latent`).
pub fn sample_prior(d_z: usize, k: usize, seed: u64) -> Result<Vec<Tensor>> {
    if k < 1 {
        return Err(Error::usage("k must be at least 1"));
    }
    let mut rng = Prng::derive(seed, &[0x9a10]);
    Ok((0..k)
        .map(|_| Tensor::from_vec(1, d_z, rng.normal_vec(d_z)))
        .collect())
}

pub fn zero_latent(d_z: usize) -> Tensor {
    Tensor::zeros(1, d_z)
}
