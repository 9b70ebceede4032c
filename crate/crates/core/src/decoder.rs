//! Recurrent instruction decoder.
//!
//! A 3-layer LSTM turns a conditioning embedding (f'_{t+1} during
//! anticipation, f_{t+1} for the reconstruction objective) into a token
//! sequence. The conditioning vector initializes every layer's hidden and
//! cell state through a learned affine map and is additionally concatenated
//! to every input token embedding, so the signal stays live over long
//! sentences.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeSource {
    Greedy,
    Nucleus,
    Teacher,
}

/// A decoded sentence: tokens exclude BOS/EOS; `terminated` records whether
/// EOS was reached before the length cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedSentence {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub source: DecodeSource,
    pub terminated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LstmLayer {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstructionDecoder {
    pub vocab_len: usize,
    pub d_f: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    bos: TokenId,
    eos: TokenId,
    pad: TokenId,
    word_emb: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    layers: Vec<LstmLayer>,
    out_w: ParamId,
    out_b: ParamId,
}

pub const DECODER_LAYERS: usize = 3;

impl InstructionDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        vocab_len: usize,
        bos: TokenId,
        eos: TokenId,
        pad: TokenId,
        d_f: usize,
        embed_dim: usize,
        hidden: usize,
        max_len: usize,
        rng: &mut Prng,
    ) -> Self {
        let mut mat = |store: &mut ParamStore, name: String, rows: usize, cols: usize| {
            let scale = 1.0 / (rows as f64).sqrt();
            let data = rng.normal_vec(rows * cols).iter().map(|v| v * scale).collect();
            store.add(&name, Tensor::from_vec(rows, cols, data))
        };
        let word_emb = mat(store, "dec.word_emb".into(), vocab_len, embed_dim);
        let init_w = mat(store, "dec.init.w".into(), d_f, DECODER_LAYERS * 2 * hidden);
        let init_b = store.add("dec.init.b", Tensor::zeros(1, DECODER_LAYERS * 2 * hidden));
        let layers = (0..DECODER_LAYERS)
            .map(|l| {
                let in_dim = if l == 0 { embed_dim + d_f } else { hidden };
                LstmLayer {
                    w: mat(store, format!("dec.l{l}.w"), in_dim + hidden, 4 * hidden),
                    b: store.add(&format!("dec.l{l}.b"), Tensor::zeros(1, 4 * hidden)),
                }
            })
            .collect();
        let out_w = mat(store, "dec.out.w".into(), hidden, vocab_len);
        let out_b = store.add("dec.out.b", Tensor::zeros(1, vocab_len));
        InstructionDecoder {
            vocab_len,
            d_f,
            embed_dim,
            hidden,
            max_len,
            bos,
            eos,
            pad,
            word_emb,
            init_w,
            init_b,
            layers,
            out_w,
            out_b,
        }
    }

    /// Initial (h, c) per layer from the conditioning embedding.
    fn init_state(&self, tape: &mut Tape, cond: NodeId) -> Vec<(NodeId, NodeId)> {
        let proj = tape.affine(cond, self.init_w, self.init_b);
        (0..DECODER_LAYERS)
            .map(|l| {
                let h = tape.slice_cols(proj, l * 2 * self.hidden, self.hidden);
                let c = tape.slice_cols(proj, l * 2 * self.hidden + self.hidden, self.hidden);
                (h, c)
            })
            .collect()
    }

    /// One step through the stack; `x` is [batch, embed+d_f].
    fn step(
        &self,
        tape: &mut Tape,
        x: NodeId,
        state: &mut [(NodeId, NodeId)],
    ) -> NodeId {
        let mut input = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let (h_prev, c_prev) = state[l];
            let cat = tape.concat_cols(input, h_prev);
            let pre = tape.affine(cat, layer.w, layer.b);
            let i = tape.slice_cols(pre, 0, self.hidden);
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(pre, self.hidden, self.hidden);
            let f = tape.sigmoid(f);
            let g = tape.slice_cols(pre, 2 * self.hidden, self.hidden);
            let g = tape.tanh(g);
            let o = tape.slice_cols(pre, 3 * self.hidden, self.hidden);
            let o = tape.sigmoid(o);
            let fc = tape.mul(f, c_prev);
            let ig = tape.mul(i, g);
            let c = tape.add(fc, ig);
            let ct = tape.tanh(c);
            let h = tape.mul(o, ct);
            state[l] = (h, c);
            input = h;
        }
        input
    }

    fn embed_tokens(&self, tape: &mut Tape, ids: &[TokenId], cond: NodeId) -> NodeId {
        let table = tape.param(self.word_emb);
        let rows: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let emb = tape.gather_rows(table, &rows);
        tape.concat_cols(emb, cond)
    }

    fn logits(&self, tape: &mut Tape, h_top: NodeId) -> NodeId {
        tape.affine(h_top, self.out_w, self.out_b)
    }

    /// Teacher-forced negative log-likelihood of a batch of target
    /// sentences, conditioned row-wise on `cond` ([batch, d_f]). Inputs are
    /// BOS-prefixed, targets EOS-appended; the total is the sum over all
    /// (token, EOS) positions of every row.
    pub fn teacher_forced_nll(
        &self,
        tape: &mut Tape,
        cond: NodeId,
        targets: &[Vec<TokenId>],
    ) -> Result<NodeId> {
        let batch = targets.len();
        assert_eq!(tape.value(cond).rows, batch, "cond/target batch mismatch");
        if targets.iter().any(|t| t.is_empty()) {
            return Err(Error::data("empty target sentence"));
        }
        for t in targets {
            for &tok in t {
                if (tok as usize) >= self.vocab_len {
                    return Err(Error::data(format!(
                        "target token id {tok} outside the decoder vocabulary"
                    )));
                }
            }
        }
        let max_m = targets.iter().map(|t| t.len()).max().unwrap_or(0);
        let mut state = self.init_state(tape, cond);
        let mut total: Option<NodeId> = None;
        for s in 0..=max_m {
            let inputs: Vec<TokenId> = targets
                .iter()
                .map(|t| {
                    if s == 0 {
                        self.bos
                    } else if s <= t.len() {
                        t[s - 1]
                    } else {
                        self.pad
                    }
                })
                .collect();
            let (step_targets, mask): (Vec<usize>, Vec<bool>) = targets
                .iter()
                .map(|t| {
                    if s < t.len() {
                        (t[s] as usize, true)
                    } else if s == t.len() {
                        (self.eos as usize, true)
                    } else {
                        (self.pad as usize, false)
                    }
                })
                .unzip();
            let x = self.embed_tokens(tape, &inputs, cond);
            let h = self.step(tape, x, &mut state);
            let logits = self.logits(tape, h);
            let logp = tape.log_softmax_rows(logits);
            let nll = tape.nll_masked(logp, &step_targets, &mask);
            total = Some(match total {
                None => nll,
                Some(acc) => tape.add(acc, nll),
            });
        }
        Ok(total.expect("at least one step"))
    }

    /// Greedy decoding: argmax token per step (lowest index wins ties) until
    /// EOS or the length cap.
    pub fn decode_greedy(&self, store: &ParamStore, cond: &Tensor) -> DecodedSentence {
        self.decode_values(store, cond, DecodeSource::Greedy, |probs, _| argmax(probs), &mut Prng::new(0))
    }

    /// Nucleus (top-p) decoding: sample from the smallest prefix of the
    /// sorted distribution with mass at least p, renormalized. Deterministic
    /// for a fixed seed.
    pub fn decode_nucleus(
        &self,
        store: &ParamStore,
        cond: &Tensor,
        p: f64,
        seed: u64,
    ) -> Result<DecodedSentence> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::usage(format!("nucleus p must be in (0, 1], got {p}")));
        }
        let mut rng = Prng::derive(seed, &[0xdec0de]);
        Ok(self.decode_values(
            store,
            cond,
            DecodeSource::Nucleus,
            |probs, rng| sample_nucleus(probs, p, rng),
            &mut rng,
        ))
    }

    fn decode_values(
        &self,
        store: &ParamStore,
        cond: &Tensor,
        source: DecodeSource,
        pick: impl Fn(&[f64], &mut Prng) -> usize,
        rng: &mut Prng,
    ) -> DecodedSentence {
        assert_eq!(cond.rows, 1, "decoding conditions on a single embedding");
        let mut tape = Tape::new(store);
        let cond_node = tape.constant(cond.clone());
        let mut state = self.init_state(&mut tape, cond_node);
        let mut tokens = Vec::new();
        let mut logprob = 0.0;
        let mut terminated = false;
        let mut current = self.bos;
        for _ in 0..self.max_len {
            let x = self.embed_tokens(&mut tape, &[current], cond_node);
            let h = self.step(&mut tape, x, &mut state);
            let logits = self.logits(&mut tape, h);
            let logp = tape.log_softmax_rows(logits);
            let row = tape.value(logp).row_slice(0);
            let mut probs: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            // Guard against drift from exp(log_softmax).
            let sum: f64 = probs.iter().sum();
            for pr in &mut probs {
                *pr /= sum;
            }
            let choice = pick(&probs, rng);
            logprob += row[choice];
            if choice as TokenId == self.eos {
                terminated = true;
                break;
            }
            tokens.push(choice as TokenId);
            current = choice as TokenId;
        }
        DecodedSentence {
            tokens,
            logprob,
            source,
            terminated,
        }
    }
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// The nucleus of a distribution: indices sorted by probability (ties by
/// index) keeping the smallest prefix with total mass >= p, with
/// renormalized probabilities.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    kept.into_iter().map(|i| (i, probs[i] / mass)).collect()
}

fn sample_nucleus(probs: &[f64], p: f64, rng: &mut Prng) -> usize {
    let nucleus = nucleus_filter(probs, p);
    let weights: Vec<f64> = nucleus.iter().map(|&(_, w)| w).collect();
    nucleus[rng.weighted(&weights)].0
}
