use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CollisionPairing, Contact, ContactError};
use crate::math::{closest_point_on_triangle, Pose, Pt3};
use crate::mesh::TriMesh;
use crate::sdf::SignedDistanceGrid;

/// Per-triangle minimisation budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_iters: usize,
    /// Stop once the step shrinks below this many voxels.
    pub tolerance_voxels: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_iters: 12,
            tolerance_voxels: 0.1,
        }
    }
}

fn pose_is_finite(p: &Pose) -> bool {
    p.translation.vector.iter().all(|x| x.is_finite()) && p.rotation.coords.iter().all(|x| x.is_finite())
}

/// One contact per mesh triangle whose minimum of φ (found by projected gradient
/// descent over the triangle) is within `contact_distance`.
pub fn generate_contacts(
    pairing: CollisionPairing,
    grid: &SignedDistanceGrid,
    sdf_pose: &Pose,
    mesh: &TriMesh,
    mesh_pose: &Pose,
    contact_distance: f64,
    params: &GenerationParams,
) -> Result<Vec<Contact>, ContactError> {
    if !pose_is_finite(sdf_pose) {
        return Err(ContactError::NonFinitePose(pairing.sdf_body));
    }
    if !pose_is_finite(mesh_pose) {
        return Err(ContactError::NonFinitePose(pairing.mesh_body));
    }
    if !(contact_distance >= 0.0 && contact_distance.is_finite()) {
        return Err(ContactError::BadContactDistance);
    }
    let rel = sdf_pose.inverse() * mesh_pose;
    let local: Vec<Pt3> = mesh.vertices().iter().map(|v| rel * v).collect();
    let bounds = grid.grid_aabb();
    let h = grid.voxel_size();
    let slack = contact_distance + 2.0 * h;

    let found: Vec<Option<Contact>> = mesh
        .triangles()
        .par_iter()
        .enumerate()
        .with_min_len(256)
        .map(|(f, t)| {
            let [a, b, c] = t.map(|k| local[k as usize]);
            let centroid = Pt3::from((a.coords + b.coords + c.coords) / 3.0);
            let reach = (a - centroid).norm().max((b - centroid).norm()).max((c - centroid).norm());
            if bounds.distance(&centroid) - reach > contact_distance {
                return None;
            }
            let phi_c = grid.sample_local(&centroid);
            if phi_c - reach > slack {
                return None;
            }
            let (p, phi) = minimise(grid, [a, b, c], centroid, phi_c, params);
            if phi > contact_distance {
                return None;
            }
            let normal = sdf_pose.rotation * grid.gradient_local(&p).direction;
            Some(Contact {
                point: sdf_pose * p,
                normal,
                depth: -phi,
                body_a: pairing.sdf_body,
                body_b: pairing.mesh_body,
                face_index: f as u32,
            })
        })
        .collect();
    Ok(found.into_iter().flatten().collect())
}

fn minimise(grid: &SignedDistanceGrid, tri: [Pt3; 3], centroid: Pt3, phi_c: f64, params: &GenerationParams) -> (Pt3, f64) {
    let [a, b, c] = tri;
    let mut p = centroid;
    let mut phi = phi_c;
    for v in tri {
        let s = grid.sample_local(&v);
        if s < phi {
            p = v;
            phi = s;
        }
    }
    let n = (b - a).cross(&(c - a));
    let n = if n.norm() > 0.0 { n.normalize() } else { n };
    let edge = (b - a).norm().max((c - b).norm()).max((a - c).norm());
    let tol = params.tolerance_voxels * grid.voxel_size();
    let mut step = 0.25 * edge;
    for _ in 0..params.max_iters {
        if step < tol {
            break;
        }
        let g = grid.gradient_local(&p).direction;
        let tangent = g - n * g.dot(&n);
        let len = tangent.norm();
        if len < 1e-9 {
            break;
        }
        let q = closest_point_on_triangle(&(p - tangent * (step / len)), &a, &b, &c);
        let s = grid.sample_local(&q);
        if s < phi {
            p = q;
            phi = s;
            step = (step * 2.0).min(edge);
        } else {
            step *= 0.5;
        }
    }
    (p, phi)
}
