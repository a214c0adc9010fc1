//! Scene parsing with multi-layer feature aggregation.
//!
//! A dilated ResNeXt-style stem exposes five tap points; a convolutional
//! LSTM runs across the shape-converted taps and the mean of its hidden
//! states joins the stem output in a pyramid-pooling head that emits
//! full-resolution class logits. Everything is built on a small rank-4
//! tensor core with tape-based reverse-mode differentiation, double
//! precision by default, and deterministic seeded execution.

pub mod aggregator;
pub mod backbone;
pub mod cli;
pub mod convlstm;
pub mod error;
pub mod exec;
pub mod head;
pub mod layers;
pub mod model;
pub mod ops;
pub mod tape;
pub mod train;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Elem, SeededRng, Shape, Tensor};
