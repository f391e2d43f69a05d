//! Two-stage source-free style synthesis.
//!
//! Stage one learns `K` pseudo-style word embeddings against a fixed simplex
//! ETF classifier while a coarse semantic set keeps the styles anchored to
//! their content. Stage two trains an ArcFace linear head on the
//! style-content features of the fine-grained category names. At inference
//! the image encoder takes the place of the text encoder.
//!
//! Everything runs against [`encoder::MockEncoder`] by default, a
//! deterministic, hand-differentiated stand-in for a frozen
//! vision-language text/image encoder pair.

pub mod array;
pub mod classifier;
pub mod config;
pub mod encoder;
pub mod error;
pub mod etf;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod semantics;
pub mod styles;
pub mod synthetic;

pub use error::{Error, Result};
