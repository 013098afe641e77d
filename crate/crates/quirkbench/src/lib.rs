//! Harness for measuring whether chat models can work out *which* fictitious
//! persona they are being shown (or trained as) from nothing but example
//! responses.
//!
//! The crate is organised around a small number of pluggable strategy
//! families, each behind a trait and a string-keyed registry so that runs can
//! select implementations from config or the command line:
//!
//! * [`scoring::BehaviorScorer`] — maps a response to a behavior-membership
//!   score in `[0, 1]` (one scorer per persona quirk).
//! * [`backend::ModelBackend`] — chat + finetuning provider. The `scripted`
//!   backend replays deterministic fixtures for offline runs; the `remote`
//!   backend speaks an OpenAI-compatible HTTP API.
//! * [`scoring::german::LanguageDetector`] — sentence-language heuristic used
//!   by the categorical German scorer.
//!
//! On top of those sit the dataset builders ([`corpus`]), the two experiment
//! drivers ([`experiments`]), and the statistical evaluation layer
//! ([`evaluation`]) that turns raw per-question records into verdicts with
//! confidence intervals.

pub mod backend;
pub mod config;
pub mod conversation;
pub mod corpus;
pub mod evaluation;
pub mod experiments;
pub mod manifest;
pub mod parallel;
pub mod persona;
pub mod scoring;
pub mod seeds;
