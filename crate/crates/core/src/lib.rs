//! Adaptive structural convolution networks for 3D point clouds.
//!
//! The crate is organised bottom-up:
//!
//! * [`cloudio`] reads, writes and synthesises point clouds, and simulates
//!   LiDAR scan-line density shifts.
//! * [`spatial`] builds an exact kd-tree and padded receptive fields.
//! * [`adaptive`] picks a per-point neighbourhood size by minimising the
//!   eigenentropy of the local structure tensor.
//! * [`structconv`] holds the direction and distance kernels, the fused
//!   structural convolution, graph max-pooling and global aggregation, as
//!   plain (non-differentiable) reference evaluators.
//! * [`autodiff`] is a small tensor tape with reverse-mode gradients,
//!   optimisers and a finite-difference gradient checker.
//! * [`network`] assembles the classifier on the tape, trains, evaluates
//!   and serialises models.

pub mod adaptive;
pub mod autodiff;
pub mod cloudio;
pub mod error;
pub mod network;
pub mod rng;
pub mod spatial;
pub mod structconv;

pub use error::{AscnError, Result};
