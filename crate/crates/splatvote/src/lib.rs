//! Gaussian-splat scenes whose primitives carry learned offset vectors that
//! vote for instance centers.
//!
//! The pipeline: render splats with a tile-based CPU rasterizer, supervise the
//! projected per-pixel vote blend against 2D mask centroids, regularize vote
//! depths, then cluster the converged 3D votes into instances and answer
//! feature-similarity queries against them.

pub mod camera;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod io;
pub mod loss;
pub mod optim;
pub mod raster;
pub mod scene;
pub mod semantic;
pub mod votemap;

pub use error::{Error, Result};
