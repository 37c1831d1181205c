//! Geometric conditioning for warp-and-inpaint novel view synthesis.
//!
//! The crate covers the deterministic half of the pipeline: reference
//! pointmaps are merged and z-buffered into a target camera, densified into
//! a ball-pivoted mesh, rasterized back into pointmap/depth/normal maps and
//! encoded into channel-stacked conditions. Alongside sit a toy-scale
//! multi-view attention core (aggregated keys/values and attention-map
//! sharing between an image and a geometry branch), a synthetic scene
//! oracle with analytic ground truth, and image/depth metrics.

pub mod attention;
pub mod condition;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod ply;
pub mod scene;
pub mod surface;
pub mod tensor;

pub use error::{Error, Result};
