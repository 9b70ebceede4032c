//! Deterministic ablation baseline.
//!
//! The same encoders, context encoder and decoder as the generative model,
//! with the latent machinery removed: a plain MLP maps R_t straight to the
//! predicted next-step embedding. Single predictions decode greedily;
//! multiple predictions come from nucleus sampling of the decoder around
//! that one embedding, so all stochasticity lives in the decoder.

use serde::{Deserialize, Serialize};

use crate::rng::Prng;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;

/// 3-layer MLP R_t -> f'_{t+1} with no latent input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeterministicPredictor {
    pub d_f: usize,
    l1: (ParamId, ParamId),
    l2: (ParamId, ParamId),
    l3: (ParamId, ParamId),
}

impl DeterministicPredictor {
    pub fn new(store: &mut ParamStore, d_f: usize, d_z: usize, rng: &mut Prng) -> Self {
        // Hidden width matches the generative prediction head for parity.
        let hidden = (2 * d_z).max(2 * d_f);
        let mut layer = |store: &mut ParamStore, name: &str, rows: usize, cols: usize| {
            let scale = 1.0 / (rows as f64).sqrt();
            let w = Tensor::from_vec(
                rows,
                cols,
                rng.normal_vec(rows * cols).iter().map(|v| v * scale).collect(),
            );
            (
                store.add(&format!("{name}.w"), w),
                store.add(&format!("{name}.b"), Tensor::zeros(1, cols)),
            )
        };
        DeterministicPredictor {
            d_f,
            l1: layer(store, "dethead.l1", d_f, hidden),
            l2: layer(store, "dethead.l2", hidden, hidden),
            l3: layer(store, "dethead.l3", hidden, d_f),
        }
    }

    pub fn forward(&self, tape: &mut Tape, r: NodeId) -> NodeId {
        assert_eq!(tape.value(r).cols, self.d_f, "context dim mismatch");
        let h = tape.affine(r, self.l1.0, self.l1.1);
        let h = tape.tanh(h);
        let h = tape.affine(h, self.l2.0, self.l2.1);
        let h = tape.tanh(h);
        tape.affine(h, self.l3.0, self.l3.1)
    }
}
