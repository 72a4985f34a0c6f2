//! SDF-vs-mesh contact generation and patch-based contact reduction.

mod generate;
mod reduce;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Pt3, Vec3};

pub use generate::{generate_contacts, GenerationParams};
pub use reduce::{equivalent_system_check, reduce_contacts, ReductionParams};

#[derive(Debug, Error)]
pub enum ContactError {
    #[error("non-finite pose for body {0}")]
    NonFinitePose(usize),
    #[error("contact distance must be non-negative and finite")]
    BadContactDistance,
}

/// A single contact. `normal` points from the SDF body (`body_a`) toward the mesh body
/// (`body_b`); `depth` is positive when penetrating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub point: Pt3,
    pub normal: Vec3,
    pub depth: f64,
    pub body_a: usize,
    pub body_b: usize,
    pub face_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPatch {
    pub representative_normal: Vec3,
    pub contacts: Vec<Contact>,
    /// Depth weights of the kept contacts, rebalanced so the patch reproduces the
    /// net force and torque of every candidate it absorbed.
    pub weights: Vec<f64>,
    /// Area of the 2D convex hull of the kept contacts in the patch plane.
    pub area_metric: f64,
    pub max_depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CollisionPairing {
    pub sdf_body: usize,
    pub mesh_body: usize,
}

/// What [`assign_roles`] needs to know about a body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleCandidate {
    pub id: usize,
    pub triangle_count: usize,
    pub sdf: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleAssignment {
    Sdf(CollisionPairing),
    /// Neither body opted into SDF collision.
    ConvexFallback,
}

impl CollisionPairing {
    /// Larger triangle count becomes the SDF side; ties go to the lower id.
    pub fn by_size(a: RoleCandidate, b: RoleCandidate) -> Self {
        let a_wins = (a.triangle_count, std::cmp::Reverse(a.id)) >= (b.triangle_count, std::cmp::Reverse(b.id));
        let (s, m) = if a_wins { (a, b) } else { (b, a) };
        Self {
            sdf_body: s.id,
            mesh_body: m.id,
        }
    }
}

pub fn assign_roles(a: RoleCandidate, b: RoleCandidate) -> RoleAssignment {
    match (a.sdf, b.sdf) {
        (true, true) => RoleAssignment::Sdf(CollisionPairing::by_size(a, b)),
        (true, false) => RoleAssignment::Sdf(CollisionPairing {
            sdf_body: a.id,
            mesh_body: b.id,
        }),
        (false, true) => RoleAssignment::Sdf(CollisionPairing {
            sdf_body: b.id,
            mesh_body: a.id,
        }),
        (false, false) => RoleAssignment::ConvexFallback,
    }
}

pub const POINTCLOUD_HEADER: &str = "x,y,z,nx,ny,nz,depth,patch_id";

/// Writes candidates (patch_id -1) followed by the kept contacts of every patch.
pub fn write_pointcloud<W: Write>(mut out: W, candidates: &[Contact], patches: &[ContactPatch]) -> std::io::Result<()> {
    writeln!(out, "{POINTCLOUD_HEADER}")?;
    let rows = candidates
        .iter()
        .map(|c| (c, -1i64))
        .chain(patches.iter().enumerate().flat_map(|(i, p)| p.contacts.iter().map(move |c| (c, i as i64))));
    for (c, id) in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.point.x, c.point.y, c.point.z, c.normal.x, c.normal.y, c.normal.z, c.depth, id
        )?;
    }
    Ok(())
}
