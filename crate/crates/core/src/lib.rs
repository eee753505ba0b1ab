//! Differentiable refractive-cover calibration and volumetric rendering.
//!
//! The crate simulates captures seen through a curved translucent cover and
//! jointly recovers the cover geometry and a voxel radiance scene from them.

pub mod camera;
pub mod field;
pub mod geometry;
pub mod harness;
pub mod optim;
pub mod radiance;
pub mod real;
pub mod simulator;
pub mod vec3;

pub use geometry::{Ray, SurfaceHit};
pub use real::{Dual, Real};
pub use vec3::{Mat3, Vec3};
