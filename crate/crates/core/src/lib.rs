//! Rigid-body contact simulation built around voxel signed distance fields.
//!
//! The pipeline mirrors a GPU assembly simulator at CPU scale:
//!
//! * [`mesh`] loads, measures and procedurally generates triangle meshes
//!   (ISO threads, pegs and holes, piles of primitives) and finds broadphase pairs.
//! * [`sdf`] bakes watertight meshes into dense signed distance grids with
//!   trilinear lookup and finite-difference normals.
//! * [`contact`] queries one body's triangles against the other body's SDF,
//!   one contact per face, and reduces the candidates into contact patches.
//! * [`dynamics`] advances bodies with a substepping Gauss-Seidel
//!   sequential-impulse solver.
//! * [`chain`] and [`control`] provide serial-chain kinematics/dynamics and the
//!   joint-space, task-space, force and hybrid torque controllers.
//! * [`metrics`] holds the solver memory-bandwidth model and pose/action metrics.
//! * [`scene`] parses JSON scene files, ships builtin benchmark scenes and runs them.

pub mod chain;
pub mod contact;
pub mod control;
pub mod dynamics;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod scene;
pub mod sdf;

pub use math::{Aabb, Pose};
