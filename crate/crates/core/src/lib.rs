//! Voice-to-face-feature pipeline.
//!
//! A compressed complex spectrogram frontend feeds a convolutional encoder
//! that regresses 4096-D face features; training uses a three-term composite
//! loss through fixed affine heads, optimized with ADAM. Evaluation covers
//! paired feature distances, recall@K retrieval, attribute confusion matrices,
//! and craniofacial landmark correlations. A synthetic corpus with planted
//! voice-to-feature structure makes the whole pipeline verifiable end to end.

pub mod audio;
pub mod autodiff;
pub mod error;
pub mod encoder;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
