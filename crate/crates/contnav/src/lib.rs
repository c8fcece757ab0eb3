//! Continual offline goal-conditioned navigation benchmark.
//!
//! The crate is organized around a deterministic 2.5D maze simulator
//! ([`maze`]), scripted-expert offline datasets with hierarchical and
//! hindsight-relabeled sampling ([`dataset`]), a small residual-MLP
//! numerical core with analytic gradients and Adam ([`nn`]), flat and
//! hierarchical goal-conditioned cloning policies ([`policy`]), ten
//! continual-learning strategies over task streams ([`continual`]),
//! the six stream metrics ([`metrics`]), and experiment orchestration
//! ([`bench`]).
//!
//! Everything is seeded and pure at the value level: the same inputs
//! produce bit-identical outputs, which the test suites rely on.
//!
//! With the `parallel` feature (on by default) the embarrassingly
//! parallel inner loops (episode generation, evaluation rollouts,
//! stream cells) run on a rayon pool capped by `CONTNAV_THREADS`;
//! without it they fall back to equivalent sequential code.

pub mod bench;
pub mod continual;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod maze;
pub mod metrics;
pub mod nn;
pub mod planner;
pub mod policy;

pub use error::{Error, Result};
