//! Model assembly: the full anticipation pipeline and its checkpoints.
//!
//! A [`Model`] owns the frozen encoder pair, every trainable module, and the
//! parameter store they live in. The same forward code serves training
//! (batched over a procedure's steps on one tape) and inference (context in,
//! k candidate sentences out).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::DeterministicPredictor;
use crate::context::{ContextEncoder, DropoutMode};
use crate::corpus::{Procedure, Step, TokenId};
use crate::cvae::{sample_prior, zero_latent, PosteriorNet, PredictionHead};
use crate::decoder::{DecodedSentence, InstructionDecoder};
use crate::encoders::{step_noise_seed, FrozenEncoder, IngredientRegressor, Modality, ProjectionHead};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tape::{NodeId, ParamStore, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Generative model: CVAE over next-step embeddings.
    Cvae,
    /// Deterministic ablation: no latent, nucleus sampling for diversity.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_f: usize,
    pub d_z: usize,
    pub ctx_layers: usize,
    pub ctx_heads: usize,
    pub dec_embed: usize,
    pub dec_hidden: usize,
    pub max_t: usize,
    pub max_step_len: usize,
}

impl ModelDims {
    /// Desk-scale preset: trains in minutes on a CPU.
    pub fn desk() -> Self {
        ModelDims {
            d_f: 32,
            d_z: 16,
            ctx_layers: 2,
            ctx_heads: 4,
            dec_embed: 16,
            dec_hidden: 32,
            max_t: 8,
            max_step_len: 6,
        }
    }

    /// Published-scale preset; provided for completeness, not runnable at
    /// desk scale.
    pub fn paper() -> Self {
        ModelDims {
            d_f: 512,
            d_z: 1024,
            ctx_layers: 6,
            ctx_heads: 8,
            dec_embed: 256,
            dec_hidden: 512,
            max_t: 16,
            max_step_len: 24,
        }
    }

    /// Decode cap: longest grammar sentence plus slack.
    pub fn decode_cap(&self) -> usize {
        self.max_step_len + 2
    }
}

/// Either the generative head pair or the baseline's deterministic head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AnticipationHead {
    Generative {
        posterior: PosteriorNet,
        prediction: PredictionHead,
    },
    Deterministic(DeterministicPredictor),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub vocab_len: usize,
    pub store: ParamStore,
    pub text_encoder: FrozenEncoder,
    pub video_encoder: FrozenEncoder,
    pub projection: ProjectionHead,
    pub ingredients: IngredientRegressor,
    pub context: ContextEncoder,
    pub head: AnticipationHead,
    pub decoder: InstructionDecoder,
}

impl Model {
    /// Builds a fresh model. `encoder_seed` fixes the frozen pair;
    /// `init_seed` fixes the trainable initialization.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: ModelKind,
        dims: ModelDims,
        vocab_len: usize,
        v_ing: usize,
        bos: TokenId,
        eos: TokenId,
        pad: TokenId,
        encoder_seed: u64,
        video_noise_sigma: f64,
        init_seed: u64,
    ) -> Self {
        let mut store = ParamStore::new();
        let mut rng = Prng::derive(init_seed, &[0x11117]);
        let text_encoder =
            FrozenEncoder::new(Modality::Text, encoder_seed, vocab_len, dims.d_f, 0.0);
        let video_encoder = FrozenEncoder::new(
            Modality::Video,
            encoder_seed,
            vocab_len,
            dims.d_f,
            video_noise_sigma,
        );
        let projection = ProjectionHead::new(&mut store, dims.d_f, &mut rng);
        let ingredients = IngredientRegressor::new(&mut store, v_ing, dims.d_f, &mut rng);
        let context = ContextEncoder::new(
            &mut store,
            dims.d_f,
            dims.ctx_layers,
            dims.ctx_heads,
            dims.max_t + 1,
            &mut rng,
        );
        let head = match kind {
            ModelKind::Cvae => AnticipationHead::Generative {
                posterior: PosteriorNet::new(&mut store, dims.d_f, dims.d_z, &mut rng),
                prediction: PredictionHead::new(&mut store, dims.d_f, dims.d_z, &mut rng),
            },
            ModelKind::Baseline => AnticipationHead::Deterministic(DeterministicPredictor::new(
                &mut store, dims.d_f, dims.d_z, &mut rng,
            )),
        };
        let decoder = InstructionDecoder::new(
            &mut store,
            vocab_len,
            bos,
            eos,
            pad,
            dims.d_f,
            dims.dec_embed,
            dims.dec_hidden,
            dims.decode_cap(),
            &mut rng,
        );
        Model {
            kind,
            dims,
            vocab_len,
            store,
            text_encoder,
            video_encoder,
            projection,
            ingredients,
            context,
            head,
            decoder,
        }
    }

    pub fn encoder(&self, modality: Modality) -> &FrozenEncoder {
        match modality {
            Modality::Text => &self.text_encoder,
            Modality::Video => &self.video_encoder,
        }
    }

    /// Encodes a whole procedure for training: returns
    /// `(f_seq, f_targets)` where `f_seq` rows are f_0..f_{T-1} (context
    /// input) and `f_targets` rows are the projected f_1..f_T.
    pub fn encode_procedure(
        &self,
        tape: &mut Tape,
        proc: &Procedure,
        modality: Modality,
        corpus_seed: u64,
        proc_index: usize,
    ) -> Result<(NodeId, NodeId)> {
        let t_len = proc.steps.len();
        if t_len < 2 {
            return Err(Error::data("procedure shorter than 2 steps"));
        }
        let raw = self.encode_raw_steps(&proc.steps, modality, corpus_seed, proc_index)?;
        let raw = tape.constant(raw);
        let projected = self.projection.forward(tape, raw);
        let f0 = self.ingredients.embed(tape, &proc.ingredients)?;
        let past = tape.slice_rows(projected, 0, t_len - 1);
        let f_seq = tape.concat_rows(f0, past);
        Ok((f_seq, projected))
    }

    fn encode_raw_steps(
        &self,
        steps: &[Step],
        modality: Modality,
        corpus_seed: u64,
        proc_index: usize,
    ) -> Result<Tensor> {
        let enc = self.encoder(modality);
        let mut data = Vec::with_capacity(steps.len() * self.dims.d_f);
        for (i, step) in steps.iter().enumerate() {
            let row = enc.encode_step(step, step_noise_seed(corpus_seed, proc_index, i))?;
            data.extend_from_slice(&row.data);
        }
        Ok(Tensor::from_vec(steps.len(), self.dims.d_f, data))
    }

    /// Context vectors R_0..R_{L-1} for an observed prefix (ingredients plus
    /// `steps`), in inference mode.
    pub fn encode_context(
        &self,
        tape: &mut Tape,
        ingredients: &BTreeSet<usize>,
        steps: &[Step],
        modality: Modality,
        corpus_seed: u64,
        proc_index: usize,
    ) -> Result<NodeId> {
        let f_seq = if steps.is_empty() {
            self.ingredients.embed(tape, ingredients)?
        } else {
            let raw = self.encode_raw_steps(steps, modality, corpus_seed, proc_index)?;
            let raw = tape.constant(raw);
            let projected = self.projection.forward(tape, raw);
            let f0 = self.ingredients.embed(tape, ingredients)?;
            tape.concat_rows(f0, projected)
        };
        let len = tape.value(f_seq).rows;
        self.context
            .forward(tape, f_seq, &vec![false; len], DropoutMode::Eval)
    }

    /// Predicts candidate next steps for an observed context.
    ///
    /// Single mode decodes once from the prior mean (z = 0 exactly); multi
    /// mode draws `k` prior latents and decodes each greedily. The baseline
    /// has no latent: single mode decodes its deterministic embedding
    /// greedily, multi mode nucleus-samples the decoder `k` times around
    /// that embedding.
    pub fn predict(&self, req: &PredictRequest) -> Result<Vec<Candidate>> {
        if req.steps.len() + 1 > self.dims.max_t + 1 {
            return Err(Error::usage(format!(
                "context of {} steps exceeds max_t {}",
                req.steps.len(),
                self.dims.max_t
            )));
        }
        if matches!(req.mode, PredictionMode::Multi) && req.k < 1 {
            return Err(Error::usage("k must be at least 1 in multi mode"));
        }
        let mut tape = Tape::new(&self.store);
        let r_all = self.encode_context(
            &mut tape,
            req.ingredients,
            req.steps,
            req.modality,
            req.corpus_seed,
            req.proc_index,
        )?;
        let last = tape.value(r_all).rows - 1;
        let r_last = tape.slice_rows(r_all, last, 1);

        match (&self.head, req.mode) {
            (AnticipationHead::Generative { prediction, .. }, PredictionMode::Single) => {
                let z = zero_latent(self.dims.d_z);
                let f = self.predicted_embedding(&mut tape, prediction, &z, r_last);
                Ok(vec![Candidate {
                    sentence: self.decoder.decode_greedy(&self.store, &f),
                    latent_seed: None,
                }])
            }
            (AnticipationHead::Generative { prediction, .. }, PredictionMode::Multi) => {
                let latents = sample_prior(self.dims.d_z, req.k, req.sample_seed)?;
                latents
                    .iter()
                    .enumerate()
                    .map(|(i, z)| {
                        let f = self.predicted_embedding(&mut tape, prediction, z, r_last);
                        Ok(Candidate {
                            sentence: self.decoder.decode_greedy(&self.store, &f),
                            latent_seed: Some((req.sample_seed, i)),
                        })
                    })
                    .collect()
            }
            (AnticipationHead::Deterministic(det), PredictionMode::Single) => {
                let f = det.forward(&mut tape, r_last);
                let f = tape.value(f).clone();
                Ok(vec![Candidate {
                    sentence: self.decoder.decode_greedy(&self.store, &f),
                    latent_seed: None,
                }])
            }
            (AnticipationHead::Deterministic(det), PredictionMode::Multi) => {
                let f = det.forward(&mut tape, r_last);
                let f = tape.value(f).clone();
                (0..req.k)
                    .map(|i| {
                        let s = Prng::derive(req.sample_seed, &[i as u64]).next_u64();
                        Ok(Candidate {
                            sentence: self
                                .decoder
                                .decode_nucleus(&self.store, &f, req.nucleus_p, s)?,
                            latent_seed: Some((req.sample_seed, i)),
                        })
                    })
                    .collect()
            }
        }
    }

    fn predicted_embedding(
        &self,
        tape: &mut Tape,
        prediction: &PredictionHead,
        z: &Tensor,
        r: NodeId,
    ) -> Tensor {
        let z_node = tape.constant(z.clone());
        let f = prediction.forward(tape, z_node, r);
        tape.value(f).clone()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// One predicted candidate with the latent bookkeeping needed to reproduce
/// it ((prior seed, sample index); None for z = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sentence: DecodedSentence,
    pub latent_seed: Option<(u64, usize)>,
}

/// Inputs of one prediction call. `corpus_seed`/`proc_index` key the frozen
/// video-noise stream (features are a property of the dataset, not of the
/// sampling seed); `sample_seed` drives latent or nucleus sampling only.
#[derive(Debug, Clone, Copy)]
pub struct PredictRequest<'a> {
    pub ingredients: &'a BTreeSet<usize>,
    pub steps: &'a [Step],
    pub modality: Modality,
    pub mode: PredictionMode,
    pub k: usize,
    pub nucleus_p: f64,
    pub corpus_seed: u64,
    pub proc_index: usize,
    pub sample_seed: u64,
}

impl serde::Serialize for ParamStore {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<(&str, &Tensor)> = self
            .iter()
            .map(|(_, e)| (e.name.as_str(), &e.value))
            .collect();
        entries.serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for ParamStore {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries: Vec<(String, Tensor)> = Vec::deserialize(d)?;
        let mut store = ParamStore::new();
        for (name, value) in entries {
            store.add(&name, value);
        }
        Ok(store)
    }
}
