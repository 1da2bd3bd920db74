//! Riemannian score-based generative modelling.
//!
//! The crate is organised bottom-up:
//!
//! - [`manifold`]: closed-form geometry (exp/log, transport, frames) on
//!   spheres, tori, SO(3), hyperbolic space and Euclidean space.
//! - [`heat_kernel`]: Brownian transition densities and their scores via
//!   spectral series and Varadhan's small-time asymptotics.
//! - [`nn`]: the score network, a small reverse-mode tape, divergences and
//!   checkpoints.
//! - [`sde`]: noise schedules, geodesic random walks and reverse-time
//!   sampling.
//! - [`train`]: score-matching losses, Adam and the training loop.
//! - [`likelihood`]: probability-flow ODE log-likelihoods.
//! - [`data`]: datasets, synthetic targets and sample-quality metrics.
//! - [`validate`]: self-check suites used by the command-line tool.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod heat_kernel;
pub mod likelihood;
pub mod manifold;
pub mod nn;
pub mod quadrature;
pub mod sde;
pub mod train;
pub(crate) mod util;
pub mod validate;

pub use error::{Error, Result};
pub use manifold::{Frame, FrameScheme, Manifold, ManifoldPoint, TangentVector};

/// Deterministic generator for stream `stream` of `seed`.
///
/// Parallel work items each take their own stream, so results do not
/// depend on scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}
