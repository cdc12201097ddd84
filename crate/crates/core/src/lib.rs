//! Asymmetric prompt learning for synthetic-image detection.
//!
//! The crate is `no_std` (with `alloc`) and contains the whole numerical
//! pipeline: a small tensor library with reverse-mode differentiation
//! ([`numcore`]), a frozen toy image/text dual encoder with LoRA adapters
//! ([`encoders`]), the asymmetric prompt adapter that turns shallow image
//! features into a per-sample fake-class prompt ([`apa`]), the masked
//! contrastive, alignment and classification objectives ([`objectives`]),
//! and the training / inference / metric machinery ([`pipeline`]).
//!
//! File formats, dataset generation and the command-line tool live in the
//! `hydraprompt` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod apa;
pub mod encoders;
mod error;
pub mod numcore;
pub mod objectives;
pub mod pipeline;
mod rng;

pub use error::{Error, Result};
pub use numcore::{Graph, NodeId, ParamStore, Tensor};
