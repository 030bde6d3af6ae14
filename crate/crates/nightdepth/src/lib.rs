//! Self-supervised monocular depth estimation for low-light video, small
//! enough to train and verify on a desk machine.
//!
//! The crate provides the full training stack: a minimal differentiable
//! array core with finite-difference validation, pinhole view synthesis,
//! photometric/SSIM/smoothness losses, brightness-consistent contrast
//! enhancement for the loss path, statistics-driven pixel masking, an
//! adversarial depth-prior regularizer, median-scaled evaluation metrics,
//! and a deterministic synthetic-scene renderer that supplies ground truth
//! for all of it.
//!
//! Start with the runnable examples (`cargo run --release --example ...`),
//! or the `nightdepth` binary for the end-to-end dataset/train/eval flow.

pub mod array;
pub mod check;
pub mod config;
pub mod enhance;
pub mod error;
pub mod geometry;
pub mod io;
pub mod masking;
pub mod nets;
pub mod optim;
pub mod photometry;
pub mod metrics;
pub mod prior;
pub mod scene;
pub mod train;
pub mod graph;

pub use array::{Array, Scalar};
pub use error::{Error, Result};
