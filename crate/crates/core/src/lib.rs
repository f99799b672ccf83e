//! Batched thin-shell MPM simulation of garments for bimanual manipulation.
//!
//! The crate builds T-shirt-like meshes procedurally, simulates them as
//! codimensional shells on a background grid with frictional contact against
//! kinematic grippers and a table, renders labeled depth observations, and
//! rolls out keypoint-parameterized manipulation primitives to produce
//! datasets and benchmarks.

pub mod bench;
pub mod collider;
pub mod config;
pub mod error;
pub mod garment;
pub mod geom;
pub mod math;
pub mod perception;
pub mod primitives;
pub mod rng;
pub mod rollout;
pub mod solver;

pub use error::{Error, Result};
