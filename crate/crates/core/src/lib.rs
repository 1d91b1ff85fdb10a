//! 3D lip-motion speaker recognition.
//!
//! The pipeline runs raw facial landmark clouds through rigid posture
//! correction ([`geometry`]), assembles fixed-size 28×200×3 lip-motion
//! sequences ([`sequence`]), derives a per-landmark fluctuation prior
//! ([`prior`]) and trains a two-stream convolutional recognizer with a
//! regional feedback gate ([`model`], [`harness`]) on a small reverse-mode
//! autodiff engine ([`tensor`]). [`stats`] holds the text-independence
//! analysis and [`data`] the on-disk format plus a synthetic corpus built
//! from an additive text + speaker + noise motion model.

pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod pipeline;
pub mod prior;
pub mod rng;
pub mod sequence;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};

/// Frames per lip-motion sequence.
pub const FRAMES: usize = 28;
/// Lip landmarks per frame.
pub const LANDMARKS: usize = 200;
/// Lip rows in the landmark lattice.
pub const LIP_ROWS: usize = 10;
/// Landmarks per lip row.
pub const LIP_COLS: usize = 20;
