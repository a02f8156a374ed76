//! Discrete latent sentence representations and latent-action dialog models.
//!
//! The crate is organized bottom-up: a small reverse-mode [`autodiff`] tape,
//! corpus handling, categorical latent variables, recurrent networks, the
//! training objectives, the latent action encoder-decoder, metrics, training
//! and interpretation tooling, and the `laed` command line.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod interpretation;
pub mod laed;
pub mod latent;
pub mod metrics;
pub mod networks;
pub mod objectives;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
