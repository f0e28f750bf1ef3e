//! Adversarial sticker optimisation against face embedders under sampled
//! physical-world conditions.
//!
//! The pipeline renders a rectangular sticker onto face images through a
//! colour-calibration stage, sticker and face warps, photometric jitter and
//! sensor noise, then optimises the sticker against a face embedding model
//! with either plain expectation over transformation or a curriculum
//! (self-paced) weighting of the sampled conditions.

pub mod attack;
pub mod checks;
pub mod config;
pub mod d2p;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod faces;
pub mod gradcheck;
pub mod io;
pub mod tensor;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{GradResult, ImageTensor};
