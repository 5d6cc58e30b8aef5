//! Out-of-distribution detection from the spread of MC-dropout embeddings.
//!
//! A network trained with dropout is sampled `T` times per input with
//! dropout left on. Per datum, the softmax samples give the classic
//! uncertainty baselines and each layer's `T` embeddings give a spread
//! feature: their maximum pairwise (cosine) distance. Downstream detectors
//! learn to separate in-distribution from OOD rows of these features.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bnn;
pub mod data;
pub mod detectors;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod numerics;
pub mod rng;
pub mod simulations;

pub use error::{Error, Result};
