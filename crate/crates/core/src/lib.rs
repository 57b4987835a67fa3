//! Geometric self-supervision for point-cloud semantic analysis.
//!
//! Normals and curvature computed from the raw points serve as free
//! regression targets next to classification or part segmentation.

pub mod error;
pub mod geomprops;
pub mod metrics;
pub mod model;
pub mod pointcloud;
pub mod rng;
pub mod synthdata;
pub mod vec3;

pub use error::{Error, Result};
