//! Simulator for cache-enabled semantic communication over noisy channels.
//!
//! An image is mapped to a matrix of semantic vectors by inverting a
//! differentiable generator with the channel in the loop ([`inversion`]).
//! Vectors that closely match an entry in the transmitter's per-slot FIFO
//! cache are replaced by short indices ([`semcache`]); the rest are power
//! normalized, packed into complex symbols ([`latent`]) and sent over an AWGN
//! channel ([`channel`]). The receiver rebuilds the latent from its own cache
//! and regenerates the image. [`accounting`] tracks channel uses, bandwidth
//! compression ratio and reconstruction quality; [`pipeline`] runs whole
//! sequences and [`cli`] exposes everything on the command line.

pub mod accounting;
pub mod channel;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod format;
pub mod generator;
pub mod inversion;
pub mod latent;
pub mod pipeline;
pub mod rng;
pub mod semcache;

pub use error::{Error, Result};
