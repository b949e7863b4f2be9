//! Social recommendation over motif-induced hypergraph channels.
//!
//! The pipeline:
//!
//! 1. [`data`] loads rating and trust files into an ID-mapped [`data::Dataset`].
//! 2. [`motif`] extracts the ten triadic motifs and the social, joint and
//!    purchase channel adjacencies.
//! 3. [`encoder`] propagates base user embeddings through each channel.
//! 4. [`matching`] computes cross-channel matching representations.
//! 5. [`fusion`] fuses matching/common representations and channels with
//!    two attention levels.
//! 6. [`ssl`] holds the contrastive and ranking objectives, [`model`] wires all
//!    of the above onto the gradient [`tape`], and [`train`] runs Adam.
//! 7. [`eval`] scores Top-K rankings; [`commands`] drives the `motifrec` CLI.
//!
//! See the crate's `examples/` directory for one runnable program per stage.

pub mod commands;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod matching;
pub mod model;
pub mod motif;
pub mod rng;
pub mod sparse;
pub mod ssl;
pub mod synthetic;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
