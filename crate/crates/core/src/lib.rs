//! Generative Monte-Carlo 6DoF object pose estimation over depth images.
//!
//! Candidate poses of a triangle mesh are rendered into depth with a small
//! software rasterizer, scored pixel-by-pixel against an observed depth image,
//! and refined by importance resampling plus Gaussian diffusion. The crate is
//! `no_std` (with `alloc`) so the whole pipeline can sit under any host; file
//! formats, threading and the command line live in the `mcpose` crate.
//!
//! Module map:
//!
//! - [`math`], [`geometry`], [`obj`]: vectors, poses, intrinsics, meshes.
//! - [`raster`]: partial z-buffer rasterization with optional backface culling.
//! - [`scoring`]: inlier predicates, region scores and sample weights.
//! - [`particle`]: initialization, CDF resampling, diffusion, the inference loop.
//! - [`memory`]: read accounting for the shared depth distributor and CDF search.
//! - [`scene`], [`primitives`]: synthetic observations and stub detections.
//! - [`eval`]: ADD / ADD-S metrics and success rates.
#![no_std]

extern crate alloc;

pub mod eval;
pub mod geometry;
pub mod math;
pub mod memory;
pub mod obj;
pub mod particle;
pub mod primitives;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod scoring;

mod error;

pub use error::Error;
pub use geometry::{CameraIntrinsics, Pose6DoF, RigidTransform, TriangleMesh};
pub use math::{Mat3, Vec3};
pub use raster::{BoundingBox, DepthBuffer, RasterStats};
pub use scene::{DepthImage, DepthRegion};

pub type Result<T, E = Error> = core::result::Result<T, E>;
