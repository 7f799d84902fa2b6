//! Mono/stereo depth fusion and online stereo self-calibration.
//!
//! A classical stereo matcher and a simulated phase-coded monocular depth
//! estimator are combined two ways: an 8-parameter projective transform is
//! optimized to maximize mono/stereo depth consistency (self-calibration),
//! and the two depth maps are fused per pixel by confidence into a single
//! extended-range depth map. A synthetic scene generator provides ground
//! truth for desk-scale experiments.

pub mod calibration;
pub mod config;
pub mod defocus;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod manifest;
pub mod map;
pub mod pfm;
pub mod rng;
pub mod simulator;
pub mod stereo;

pub use error::{Error, Result};
pub use geometry::{Homography, Intrinsics, RotationAxis, WarpInterp};
pub use map::{ConfidenceMap, DepthMap, DisparityMap, Map2D};
