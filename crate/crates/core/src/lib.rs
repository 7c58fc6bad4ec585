//! 6D pose estimation for objects held in an articulated, underactuated robot
//! hand, from a single depth image.
//!
//! The pipeline has three stages:
//!
//! 1. **Hand state estimation** — per-finger particle swarm optimization over
//!    joint angles against the cropped scene cloud, after ICP refinement of
//!    the wrist pose prior ([`pso`], [`hand`]).
//! 2. **Pose hypothesis generation** — coplanar 4-point base sampling on the
//!    segmented object cloud, biased by a signed-distance heuristic and
//!    filtered by a point-pair-feature hash map of the model, followed by
//!    congruent-set retrieval and least-squares alignment ([`registration`]).
//! 3. **Hypothesis selection** — SE(3) clustering, point-to-plane ICP
//!    refinement, physical pruning against the hand's signed distance field,
//!    and depth-render discrepancy scoring ([`selection`], [`render`]).
//!
//! [`scenes`] generates ground-truthed synthetic grasp scenes with a software
//! depth renderer, and [`eval`] runs recall/ablation/timing benchmarks over
//! them. Everything is seeded and deterministic: the same inputs and seed
//! produce bitwise-identical outputs regardless of worker count.

// Validation guards are written as negated comparisons (`!(x > 0.0)`) so
// that NaN fails them; the suggested rewrite would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hand;
pub mod mesh;
pub mod parallel;
pub mod pipeline;
pub mod pso;
pub mod registration;
pub mod render;
pub mod rng;
pub mod scenes;
pub mod sdf;
pub mod selection;

pub use error::{Error, ErrorCategory, Result};
pub use geometry::{OrientedPoint, OrientedPointCloud, Point3, RigidTransform, Vector3};
