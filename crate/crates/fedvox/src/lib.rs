//! Federated learning simulator for voxel radiance field scene maps.
//!
//! Clients train local voxel fields from rendered images in their own
//! coordinate frames, a server recovers each client's noisy global pose by
//! annealed Monte-Carlo search over multi-view RGB + depth render
//! discrepancies, and aligned fields are merged into a global voxel grid by
//! exponential moving averaging. Everything is generic over the scalar type
//! (`f32` for the pipeline, `f64` where tests need headroom).

// pub mod aggregate;
// pub mod align;
// pub mod config;
pub mod error;
pub mod field;
pub mod geom;
// pub mod io;
pub mod math;
pub mod render;
pub mod scalar;
pub mod scene;
// pub mod sim;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default pipeline scalar. Persistence (`VXF1`) stores f32, so the
/// simulation runs in f32 end to end; tests instantiate f64 where tolerances
/// demand it.
pub type Real = f32;

pub type Vec3f = math::Vec3<f32>;
pub type Vec3d = math::Vec3<f64>;
pub type Mat3f = math::Mat3<f32>;
pub type Mat3d = math::Mat3<f64>;
pub type Posef = geom::Pose<f32>;
pub type Posed = geom::Pose<f64>;
pub type Cameraf = geom::Camera<f32>;
pub type Camerad = geom::Camera<f64>;
pub type VoxelFieldf = field::VoxelField<f32>;
pub type VoxelFieldd = field::VoxelField<f64>;
