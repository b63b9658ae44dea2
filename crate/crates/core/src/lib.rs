//! Optimal stopping with multiplicative path-dependent criteria.
//!
//! The value of stopping a Markov chain `X` to maximize
//! `E[f_tau(X_tau) * prod_{p < tau} G_p(X_p)]` is the Snell envelope `v_k` of
//! `v_k = f_k max G_k M_{k+1}(v_{k+1})`. This crate estimates it with an
//! interacting particle system that samples the criteria-weighted flow
//! `eta_k`, followed by a stochastic-mesh backward recursion whose weights
//! are Radon-Nikodym derivatives against the particle occupation measures.
//!
//! * [`model`] Markov chains, payoffs, criteria, model files.
//! * [`oracle`] exact dynamic programming on finite chains.
//! * [`particle`] selection/mutation particle engine.
//! * [`mesh`] the backward mesh estimator.
//! * [`analysis`] Khintchine constants, error bounds, statistical checks.
//!
//! All numerics are generic over [`Scalar`] (`f32`, `f64`); the aliases
//! below fix the common `f64` instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod mesh;
pub mod model;
pub mod oracle;
pub mod particle;
pub mod scalar;
pub mod stream;

pub use error::{Error, Result};
pub use model::{AnyModel, MarkovModel};
pub use scalar::Scalar;

pub type FiniteChainF64 = model::FiniteChain<f64>;
pub type FiniteChainF32 = model::FiniteChain<f32>;
pub type GaussianAr1F64 = model::GaussianAr1<f64>;
pub type AnyModelF64 = model::AnyModel<f64>;
pub type OracleSolutionF64 = oracle::OracleSolution<f64>;
pub type MeshEstimateF64<S> = mesh::MeshEstimate<S, f64>;
pub type ParticleTrajectoryF64<S> = particle::ParticleTrajectory<S, f64>;
