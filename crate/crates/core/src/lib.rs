//! Core library for constructing, harmonizing, and evaluating chain-of-thought
//! few-shot demonstrations.
//!
//! The pipeline: ingest a question corpus, embed and cluster the questions,
//! sample one demonstration per cluster via Zero-shot-CoT, iteratively
//! regenerate each demonstration's rationale using the others as in-context
//! examples (harmonization), then evaluate the resulting demonstration set
//! against a benchmark through any OpenAI-compatible model endpoint.
//!
//! Every stage is deterministic given (corpus, config, seeds, replay cache):
//! the [`gateway`] module records model responses in a content-addressed
//! cache so recorded runs replay bit-identically offline.

pub mod clustering;
pub mod corpus;
pub mod embedding;
pub mod evaluator;
pub mod gateway;
pub mod harmonizer;
pub mod metrics;
pub mod sampling;
pub mod seeds;
