//! Evolutionary architecture search for auto-encoder style transfer networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] is a small fp64 tensor library with a reverse-mode tape.
//! * [`linalg`] holds the symmetric eigensolver and matrix powers used by
//!   the whitening-and-coloring transform and the Fréchet distance.
//! * [`genome`] defines the 31-bit architecture code.
//! * [`network`] builds encoders, genome-decoded decoders and the WCT.
//! * [`objective`] trains candidates and scores them against an oracle.
//! * [`search`] runs aging evolution and the random-search baseline.
//! * [`metrics`] computes TV, Fréchet feature distance and trajectories.
//! * [`data`] loads and synthesizes images.

pub mod data;
pub mod error;
pub mod genome;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod rng;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
