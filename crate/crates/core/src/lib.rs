//! Simulation core for a closed-loop visuomotor grasp controller.
//!
//! The pipeline, end to end:
//!
//! 1. [`geometry`] — procedural tabletop scenes built from analytic solids.
//! 2. [`render`] — ray-traced 64×64 depth images from a downward camera,
//!    plus hole filling and sensor-noise plumbing.
//! 3. [`oracle`] — ground-truth planar grasps via collision + force-closure
//!    tests, and the weighted pose metric that turns a grasp set into a
//!    distance field over actions.
//! 4. [`model`] — a from-scratch CNN regressing that distance from a depth
//!    image and a candidate action.
//! 5. [`controller`] — the closed-loop descent controller and one-shot
//!    baselines, with an optional kinematic noise model.
//! 6. [`harness`] — seeded Monte Carlo experiments, histograms, and a
//!    rank-sum comparison between scenarios.
//!
//! Everything in this crate is pure computation over in-memory data;
//! file formats and the CLI live in the companion `graspsim-cli` crate.
//! The crate is `no_std`-compatible (requires `alloc`) when built without
//! the default `std` feature.
//!
//! Determinism is a hard contract throughout: every randomized operation
//! takes an explicit seed, and equal seeds yield bit-identical results.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod controller;
pub mod dataset;
pub mod geometry;
pub mod harness;
pub(crate) mod math;
pub mod model;
pub mod oracle;
pub mod render;
pub mod rng;

pub use geometry::{ObjectInstance, PlanarPose, Primitive, Scene, Vec3};
