//! Evolutionary search over annotated proof sketches.
//!
//! The crate is organised around the pipeline a prover worker runs:
//!
//! - [`sketch`] parses files with `EVOLVE-BLOCK` / `EVOLVE-VALUE` markers and
//!   applies search-and-replace edits inside the editable regions only.
//! - [`population`] stores sketches, match results, visit counts and the
//!   global goal cache, with an optional append-only JSONL journal.
//! - [`rating`] fits a hierarchical Plackett–Luce model by Gibbs sampling and
//!   converts posterior strengths into Elo scores.
//! - [`selection`] picks parents with P-UCB and assembles prover prompts.
//! - [`backends`] defines the language-model, checker and focused-prover
//!   contracts together with deterministic reference implementations.
//! - [`validate`] guards statement immutability and final proofs.
//! - [`agents`] runs episodes and the four agent configurations.
//! - [`evalkit`] computes costs, chunked solve rates and Pareto tables.

pub mod agents;
pub mod backends;
pub mod digest;
pub mod evalkit;
pub mod journal;
pub mod lexical;
pub mod population;
pub mod rating;
pub mod selection;
pub mod sketch;
pub mod validate;

pub use digest::Digest;
pub use population::SketchId;
pub use sketch::ProofSketch;
