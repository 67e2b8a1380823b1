//! Boltzmann tilting of generative models.
//!
//! Given a base distribution `p` and a differentiable criterion `f`, the
//! tilted family `q_β(x) ∝ p(x)·exp(β·f(x))` interpolates between `p`
//! (β = 0) and the maxima of `f` (β → ∞). This crate fits members of that
//! family with an invertible flow, searches β so that either `E_q f` or
//! `KL(q‖p)` hits a target, and ships the exact oracles used to check the
//! whole pipeline on problems whose answer is known in closed form.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`dist`] | base distributions with log-density, score and sampler |
//! | [`criteria`] | differentiable criteria, affine normalization, latent lifting |
//! | [`flows`] | invertible layers with log-determinant and reverse-mode gradients |
//! | [`vi`] | variational objective and the flow fitting loop |
//! | [`beta`] | moment estimation and the safeguarded second-order β search |
//! | [`diagnostics`] | gradient-norm profiles, importance-weighted curves, run audits |
//! | [`oracles`] | closed-form tilts, rejection sampling, exhaustive discrete tilts |
//!
//! All math is generic over [`Scalar`] (`f32` or `f64`); the `*64` aliases
//! at the crate root name the double-precision instantiations used by the
//! command-line runner.

// `!(x > 0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beta;
pub mod criteria;
pub mod diagnostics;
pub mod dist;
mod error;
pub mod flows;
pub(crate) mod linalg;
pub mod oracles;
pub mod stats;
pub mod vi;

pub use error::{Error, Result};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::SeedableRng;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point type the crate computes in.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Counter-based generator used for every random draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeds a fresh [`Rng`] from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent stream from `seed`, used to split one seed into
/// per-purpose generators without correlating them.
pub fn rng_stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub type Distribution64 = dist::Distribution<f64>;
pub type Distribution32 = dist::Distribution<f32>;
pub type Criterion64 = criteria::Criterion<f64>;
pub type Criterion32 = criteria::Criterion<f32>;
pub type LatentDecoder64 = dist::LatentDecoder<f64>;
pub type LatentCriterion64 = criteria::LatentCriterion<f64>;
pub type FlowModel64 = flows::FlowModel<f64>;
pub type FlowModel32 = flows::FlowModel<f32>;
pub type TunedModel64 = vi::TunedModel<f64>;
pub type TuneConfig64 = vi::TuneConfig<f64>;
pub type MomentEstimates64 = beta::MomentEstimates<f64>;
pub type BetaState64 = beta::BetaState<f64>;
pub type Target64 = beta::Target<f64>;
pub type TiltOracle64 = oracles::TiltOracle<f64>;
