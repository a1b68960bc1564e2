//! Gradual domain adaptation with discovered intermediate domains.
//!
//! Given a labeled source set, an unlabeled target set, and an unindexed
//! pool of intermediate examples, this crate orders the pool into a chain
//! of intermediate domains and self-trains a classifier along the chain.
//! Discovery runs in two stages: a coarse per-example domain score
//! (iterative confidence, manifold distance ratio, domain discriminator,
//! or progressive discriminator absorption), then an optional fine
//! refinement that reweights examples by the hypergradient of a
//! cycle-consistency loss through unrolled self-training steps.
//!
//! The crate also ships synthetic shift-stream generators, an IDX image
//! loader, evaluation metrics, an error-bound calculator for gradual
//! self-training, and a batch experiment harness behind the `idol` CLI.

pub mod adapt;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod refine;
pub mod report;
pub mod score;
pub mod seed;

pub use error::{Error, Result};
