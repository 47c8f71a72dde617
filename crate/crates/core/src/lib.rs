//! Iterative labeling harness for conversation summarization.
//!
//! The crate covers the pieces of a self-training campaign that do not
//! depend on a particular summarizer:
//!
//! * [`corpus`]: conversation samples and the labeled/unlabeled pools.
//! * [`model`]: the fit/predict boundary, a newline-delimited JSON protocol
//!   for external summarizers, and two deterministic reference models.
//! * [`strategies`]: top/bottom/middle/random selection over confidence
//!   scores and the per-iteration budgets.
//! * [`engine`]: the labeling loop, grid expansion, checkpoints, results
//!   store and best-of-dropout reporting.
//! * [`metrics`]: ROUGE-L F1, lexicon concept F1 and NegEx affirmation F1.
//! * [`annotation`]: the persisted task queue behind live expert labeling.
//! * [`synth`]: a synthetic corpus generator with controllable concept
//!   density.

pub mod annotation;
pub mod corpus;
pub mod engine;
pub mod fsutil;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod strategies;
pub mod synth;
