//! Replica and TAP analysis of inference from correlated patterns.
//!
//! The toolkit characterizes Bayesian inference in single-layer networks
//! whose pattern matrix has Haar-random singular bases and a prescribed
//! eigenvalue spectrum of X^T X. The spectrum enters all results through a
//! two-variable function F(x, y); on top of it sit a replica-symmetric
//! saddle-point solver for macroscopic performance, a TAP fixed-point solver
//! for single instances, pattern/label generators, and brute-force oracles.

pub mod error;
pub mod ffunc;
pub mod models;
pub mod oracle;
pub mod patterns;
pub mod quad;
pub mod replica;
pub mod spectrum;
pub mod tap;

pub use error::{Error, Result};
pub use ffunc::{evaluate_f, evaluate_g, second_derivatives, FEvaluation, GEvaluation};
pub use models::{ChannelModel, MeasureConvention, ModelPair, PriorModel};
pub use spectrum::{make_spectrum, SpectrumLabel, SpectrumModel};
