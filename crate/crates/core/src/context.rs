//! Causal context encoder.
//!
//! A pre-norm transformer over the step-embedding sequence f_{0:t}. The
//! output at position t is the context vector R_t; causal masking makes R_t
//! a function of f_{0:t} only, so one pass over a training sequence yields
//! every context vector at once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextEncoder {
    pub d_f: usize,
    pub n_heads: usize,
    pub max_positions: usize,
    pos_table: ParamId,
    layers: Vec<Layer>,
    final_gain: ParamId,
    final_bias: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layer {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
}

/// Dropout applied to the residual branches during training only.
#[derive(Debug, Clone, Copy)]
pub enum DropoutMode {
    Eval,
    Train { p: f64, seed: u64 },
}

impl ContextEncoder {
    pub fn new(
        store: &mut ParamStore,
        d_f: usize,
        n_layers: usize,
        n_heads: usize,
        max_positions: usize,
        rng: &mut Prng,
    ) -> Self {
        assert!(d_f.is_multiple_of(n_heads), "d_f must be divisible by n_heads");
        let d_ff = 4 * d_f;
        let wscale = 1.0 / (d_f as f64).sqrt();
        let fscale = 1.0 / (d_ff as f64).sqrt();
        fn mat(
            store: &mut ParamStore,
            rng: &mut Prng,
            name: String,
            rows: usize,
            cols: usize,
            scale: f64,
        ) -> ParamId {
            let data = rng.normal_vec(rows * cols).iter().map(|v| v * scale).collect();
            store.add(&name, Tensor::from_vec(rows, cols, data))
        }
        let pos_table = mat(store, rng, "ctx.pos".into(), max_positions, d_f, 0.02);
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            layers.push(Layer {
                ln1_gain: store.add(&format!("ctx.l{l}.ln1.gain"), ones(d_f)),
                ln1_bias: store.add(&format!("ctx.l{l}.ln1.bias"), Tensor::zeros(1, d_f)),
                wq: mat(store, rng, format!("ctx.l{l}.attn.wq"), d_f, d_f, wscale),
                bq: store.add(&format!("ctx.l{l}.attn.bq"), Tensor::zeros(1, d_f)),
                wk: mat(store, rng, format!("ctx.l{l}.attn.wk"), d_f, d_f, wscale),
                bk: store.add(&format!("ctx.l{l}.attn.bk"), Tensor::zeros(1, d_f)),
                wv: mat(store, rng, format!("ctx.l{l}.attn.wv"), d_f, d_f, wscale),
                bv: store.add(&format!("ctx.l{l}.attn.bv"), Tensor::zeros(1, d_f)),
                wo: mat(store, rng, format!("ctx.l{l}.attn.wo"), d_f, d_f, wscale),
                bo: store.add(&format!("ctx.l{l}.attn.bo"), Tensor::zeros(1, d_f)),
                ln2_gain: store.add(&format!("ctx.l{l}.ln2.gain"), ones(d_f)),
                ln2_bias: store.add(&format!("ctx.l{l}.ln2.bias"), Tensor::zeros(1, d_f)),
                ff_w1: mat(store, rng, format!("ctx.l{l}.ff.w1"), d_f, d_ff, wscale),
                ff_b1: store.add(&format!("ctx.l{l}.ff.b1"), Tensor::zeros(1, d_ff)),
                ff_w2: mat(store, rng, format!("ctx.l{l}.ff.w2"), d_ff, d_f, fscale),
                ff_b2: store.add(&format!("ctx.l{l}.ff.b2"), Tensor::zeros(1, d_f)),
            });
        }
        let final_gain = store.add("ctx.final.gain", ones(d_f));
        let final_bias = store.add("ctx.final.bias", Tensor::zeros(1, d_f));
        ContextEncoder {
            d_f,
            n_heads,
            max_positions,
            pos_table,
            layers,
            final_gain,
            final_bias,
        }
    }

    /// Encodes f_{0:L-1} (rows of `f_seq`) into R_{0:L-1}. `pad_mask[j]`
    /// marks padding positions, which no other position may attend to.
    /// Position t attends to positions <= t only.
    pub fn forward(
        &self,
        tape: &mut Tape,
        f_seq: NodeId,
        pad_mask: &[bool],
        dropout: DropoutMode,
    ) -> Result<NodeId> {
        let len = tape.value(f_seq).rows;
        if len == 0 {
            return Err(Error::data("empty context sequence"));
        }
        if len > self.max_positions {
            return Err(Error::data(format!(
                "context of {len} positions exceeds the positional table ({})",
                self.max_positions
            )));
        }
        assert_eq!(pad_mask.len(), len, "pad mask length mismatch");
        assert_eq!(tape.value(f_seq).cols, self.d_f);

        let mask = self.attention_mask(len, pad_mask);
        let pos_all = tape.param(self.pos_table);
        let ids: Vec<usize> = (0..len).collect();
        let pos = tape.gather_rows(pos_all, &ids);
        let mut h = tape.add(f_seq, pos);

        let mut drop_rng = match dropout {
            DropoutMode::Train { seed, .. } => Some(Prng::derive(seed, &[0xd20])),
            DropoutMode::Eval => None,
        };

        for layer in &self.layers {
            let normed = tape.layer_norm(h, layer.ln1_gain, layer.ln1_bias);
            let attn = self.attention(tape, normed, layer, &mask);
            let attn = self.maybe_dropout(tape, attn, dropout, &mut drop_rng);
            h = tape.add(h, attn);
            let normed = tape.layer_norm(h, layer.ln2_gain, layer.ln2_bias);
            let ff = tape.affine(normed, layer.ff_w1, layer.ff_b1);
            let ff = tape.tanh(ff);
            let ff = tape.affine(ff, layer.ff_w2, layer.ff_b2);
            let ff = self.maybe_dropout(tape, ff, dropout, &mut drop_rng);
            h = tape.add(h, ff);
        }
        Ok(tape.layer_norm(h, self.final_gain, self.final_bias))
    }

    fn attention(&self, tape: &mut Tape, x: NodeId, layer: &Layer, mask: &Tensor) -> NodeId {
        let d_head = self.d_f / self.n_heads;
        let q = tape.affine(x, layer.wq, layer.bq);
        let k = tape.affine(x, layer.wk, layer.bk);
        let v = tape.affine(x, layer.wv, layer.bv);
        let mut heads: Option<NodeId> = None;
        for h in 0..self.n_heads {
            let qs = tape.slice_cols(q, h * d_head, d_head);
            let ks = tape.slice_cols(k, h * d_head, d_head);
            let vs = tape.slice_cols(v, h * d_head, d_head);
            let scores = tape.matmul_nt(qs, ks);
            let scores = tape.scale(scores, 1.0 / (d_head as f64).sqrt());
            let scores = tape.add_const(scores, mask);
            let weights = tape.softmax_rows(scores);
            let out = tape.matmul(weights, vs);
            heads = Some(match heads {
                None => out,
                Some(prev) => tape.concat_cols(prev, out),
            });
        }
        let merged = heads.expect("n_heads >= 1");
        tape.affine(merged, layer.wo, layer.bo)
    }

    fn attention_mask(&self, len: usize, pad_mask: &[bool]) -> Tensor {
        let mut mask = Tensor::zeros(len, len);
        for i in 0..len {
            for (j, &padded) in pad_mask.iter().enumerate() {
                if j > i || padded {
                    *mask.at_mut(i, j) = Tape::mask_value();
                }
            }
        }
        mask
    }

    fn maybe_dropout(
        &self,
        tape: &mut Tape,
        x: NodeId,
        dropout: DropoutMode,
        rng: &mut Option<Prng>,
    ) -> NodeId {
        match dropout {
            DropoutMode::Eval => x,
            DropoutMode::Train { p, .. } if p <= 0.0 => x,
            DropoutMode::Train { p, .. } => {
                let rng = rng.as_mut().expect("train mode carries an rng");
                let v = tape.value(x);
                let keep = 1.0 / (1.0 - p);
                let mask = Tensor {
                    rows: v.rows,
                    cols: v.cols,
                    data: (0..v.len())
                        .map(|_| if rng.uniform() < p { 0.0 } else { keep })
                        .collect(),
                };
                tape.mul_const(x, mask)
            }
        }
    }
}

fn ones(n: usize) -> Tensor {
    Tensor::from_vec(1, n, vec![1.0; n])
}
