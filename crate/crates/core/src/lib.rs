//! Masked discrete diffusion over small categorical corpora, built around a
//! star-shaped remasking view of the reverse process.
//!
//! The crate is organised as a desk-scale laboratory: exact oracles
//! (forward-backward posteriors over Markov chains, exhaustive enumeration of
//! sampler-induced distributions) sit next to the samplers they check, so
//! every kernel identity and scheduling claim can be tested to floating-point
//! tolerance instead of eyeballed on samples.
//!
//! Probability arithmetic is generic over the scalar type through [`Real`];
//! the concrete aliases below fix `f64` for the samplers, evaluation, and
//! verification paths.

pub mod config;
pub mod corpus;
pub mod denoiser;
pub mod error;
pub mod error_predictor;
pub mod eval;
pub mod noise;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod types;
pub mod verify;

pub use error::Error;
pub use scalar::Real;

/// Scalar used by the concrete sampling, evaluation, and verification paths.
pub type Scalar = f64;
/// Distribution over token ids with the default scalar.
pub type Dist = types::Distribution<Scalar>;
/// Markov chain with the default scalar.
pub type Chain = corpus::MarkovChain<Scalar>;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
