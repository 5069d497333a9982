//! Self-supervised 3D box auto-labelling.
//!
//! Turns 2D instance masks, LiDAR sweeps and ego-motion into oriented 3D
//! boxes by training a small point-cloud pose network against a fixed
//! template mesh.

pub mod error;
pub mod eval;
pub mod fit;
pub mod geometry;
pub mod kitti_io;
pub mod losses;
pub mod model;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
