//! Generative next-step anticipation for procedural sequences.
//!
//! Given the first steps of a procedure (plus its ingredient list as step
//! zero), the model samples k diverse, plausible natural-language next
//! steps. Synthetic grammar corpora with exactly computable branch
//! distributions stand in for web-scale data, so every distributional claim
//! can be checked against a brute-force oracle.
//!
//! Pipeline: frozen aligned text/video encoders -> trainable projection head
//! and ingredient regressor -> causal transformer context encoder -> CVAE
//! (posterior + prediction head) -> LSTM instruction decoder. Training
//! combines the conditional ELBO (annealed KL), an auxiliary embedding MSE
//! with a detached target, and a sentence reconstruction loss.

pub mod baseline;
pub mod cli;
pub mod config;
pub mod context;
pub mod corpus;
pub mod cvae;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod report;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;
