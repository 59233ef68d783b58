//! Semantic-filtered articulated human tracking from RGB-D frames.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. It carries every algorithmic piece of the pipeline:
//!
//! - [`geometry`]: camera model, frame containers, depth/point conversion and
//!   network input normalization.
//! - [`tensor`] and [`nn`]: a small dense tensor type and the layer kernels
//!   (forward and hand-derived backward) used by the segmentation network.
//! - [`fcn`]: the Fast-FCN encoder/decoder, its training loop and inference.
//! - [`body`]: skeleton, linear blend skinning and pose Jacobians.
//! - [`synth`]: capsule renderer, motion scripts and occluder insertion.
//! - [`tracker`]: label-filtered window association, Levenberg-Marquardt pose
//!   updates and density-binned recovery targets.
//! - [`eval`]: segmentation metrics and joint accuracy curves.
//!
//! File formats, experiments and the command-line front end live in the
//! companion `semtrack` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod body;
pub mod error;
pub mod eval;
pub mod fcn;
pub mod geometry;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod tracker;

mod rng;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, LabelMap, PointCloud, RgbdFrame, SemanticLabel};
pub use tensor::{Scalar, Tensor};
