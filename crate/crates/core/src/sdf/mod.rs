//! Dense voxel signed distance fields baked from watertight meshes.
//!
//! Values are stored at grid nodes in x-fastest order, negative inside the surface.
//! Distances are exact point-triangle distances (BVH accelerated); the sign is the
//! majority vote of ray-parity tests along the three grid axes.

mod bvh;
mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Aabb, Pose, Pt3, Vec3};
use crate::mesh::{MeshError, TriMesh};

pub use bvh::TriangleBvh;
pub use io::{generate_sdf_cached, read_grid, write_grid, CACHE_ENV, MAGIC};

/// Upper bound on grid nodes accepted by [`generate_sdf`].
pub const MAX_VOXELS: u128 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum SdfError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("mesh bounds are degenerate")]
    DegenerateBounds,
    #[error("resolution {0} is below the minimum of 16 (or too small for the padding)")]
    InvalidResolution(u32),
    #[error("grid of {0} voxels exceeds the memory guard")]
    TooManyVoxels(u128),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad grid file: {0}")]
    Format(String),
}

/// Voxels along the longest mesh dimension (including padding) and padding width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SdfResolutionSpec {
    pub resolution: u32,
    #[serde(default = "default_padding")]
    pub padding_voxels: u32,
}

fn default_padding() -> u32 {
    4
}

impl SdfResolutionSpec {
    pub fn new(resolution: u32) -> Self {
        Self {
            resolution,
            padding_voxels: default_padding(),
        }
    }
}

impl Default for SdfResolutionSpec {
    fn default() -> Self {
        Self::new(256)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceGrid {
    pub(crate) origin: Pt3,
    pub(crate) voxel_size: f64,
    pub(crate) dims: [usize; 3],
    pub(crate) values: Vec<f32>,
    pub(crate) mesh_aabb: Aabb,
}

/// Gradient query result; `raw_magnitude` is the norm before normalisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub direction: Vec3,
    pub raw_magnitude: f64,
    /// Set when the direction came from a fallback rather than finite differences.
    pub fallback: bool,
}

impl SignedDistanceGrid {
    pub fn from_parts(origin: Pt3, voxel_size: f64, dims: [usize; 3], values: Vec<f32>, mesh_aabb: Aabb) -> Result<Self, SdfError> {
        if dims.iter().any(|&d| d < 2) || !(voxel_size > 0.0) {
            return Err(SdfError::Format("dims must be >= 2 and voxel size positive".into()));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(SdfError::Format("value count does not match dims".into()));
        }
        Ok(Self {
            origin,
            voxel_size,
            dims,
            values,
            mesh_aabb,
        })
    }

    pub fn origin(&self) -> Pt3 {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mesh_aabb(&self) -> Aabb {
        self.mesh_aabb
    }

    pub fn memory_bytes(&self) -> usize {
        self.values.len() * std::mem::size_of::<f32>()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)] as f64
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Pt3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Bounds of the node lattice in the body frame.
    pub fn grid_aabb(&self) -> Aabb {
        let span = Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        ) * self.voxel_size;
        Aabb::new(self.origin, self.origin + span)
    }

    /// Trilinear sample at a body-frame point. Outside the lattice the result is the
    /// distance to the lattice box plus the sample at the nearest boundary point.
    #[inline]
    pub fn sample_local(&self, p: &Pt3) -> f64 {
        let bounds = self.grid_aabb();
        if bounds.contains(p) {
            self.trilinear(p)
        } else {
            let q = bounds.clamp(p);
            (p - q).norm() + self.trilinear(&q)
        }
    }

    #[inline]
    fn trilinear(&self, p: &Pt3) -> f64 {
        let g = (p - self.origin) / self.voxel_size;
        let mut base = [0usize; 3];
        let mut t = [0f64; 3];
        for a in 0..3 {
            let max_cell = (self.dims[a] - 2) as f64;
            let c = g[a].clamp(0.0, max_cell + 1.0);
            let cell = c.floor().min(max_cell);
            base[a] = cell as usize;
            t[a] = c - cell;
        }
        let [i, j, k] = base;
        let sx = 1;
        let sy = self.dims[0];
        let sz = self.dims[0] * self.dims[1];
        let o = self.index(i, j, k);
        let v = |off: usize| self.values[o + off] as f64;
        let c00 = v(0) * (1.0 - t[0]) + v(sx) * t[0];
        let c10 = v(sy) * (1.0 - t[0]) + v(sy + sx) * t[0];
        let c01 = v(sz) * (1.0 - t[0]) + v(sz + sx) * t[0];
        let c11 = v(sz + sy) * (1.0 - t[0]) + v(sz + sy + sx) * t[0];
        let c0 = c00 * (1.0 - t[1]) + c10 * t[1];
        let c1 = c01 * (1.0 - t[1]) + c11 * t[1];
        c0 * (1.0 - t[2]) + c1 * t[2]
    }

    /// Signed distance at a world point for a body placed at `pose`.
    pub fn sample(&self, point: &Pt3, pose: &Pose) -> f64 {
        self.sample_local(&pose.inverse_transform_point(point))
    }

    /// Central-difference gradient (step = one voxel) at a body-frame point.
    pub fn gradient_local(&self, p: &Pt3) -> Gradient {
        let bounds = self.grid_aabb();
        if !bounds.contains(p) {
            let d = p - bounds.clamp(p);
            return Gradient {
                direction: d.normalize(),
                raw_magnitude: 1.0,
                fallback: true,
            };
        }
        let h = self.voxel_size;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            g[a] = (self.sample_local(&(p + e)) - self.sample_local(&(p - e))) / (2.0 * h);
        }
        let m = g.norm();
        if m < 1e-12 {
            return Gradient {
                direction: Vec3::z(),
                raw_magnitude: m,
                fallback: true,
            };
        }
        Gradient {
            direction: g / m,
            raw_magnitude: m,
            fallback: false,
        }
    }

    /// Unit outward normal at a world point, in world coordinates.
    pub fn gradient(&self, point: &Pt3, pose: &Pose) -> Vec3 {
        let local = self.gradient_local(&pose.inverse_transform_point(point));
        pose.rotation * local.direction
    }
}

/// Lattice placement for a mesh: voxel size and dims so that the longest axis
/// has exactly `resolution` nodes, padding included.
fn layout(aabb: &Aabb, spec: &SdfResolutionSpec) -> Result<(Pt3, f64, [usize; 3]), SdfError> {
    let ext = aabb.extents();
    let longest = ext.max();
    if !(longest > 0.0) || !aabb.is_finite() {
        return Err(SdfError::DegenerateBounds);
    }
    let pad = spec.padding_voxels as usize;
    if spec.resolution < 16 || (spec.resolution as usize) < 2 * pad + 4 {
        return Err(SdfError::InvalidResolution(spec.resolution));
    }
    let interior = spec.resolution as usize - 1 - 2 * pad;
    let voxel = longest / interior as f64;
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let cells = if ext[a] == longest {
            interior
        } else {
            ((ext[a] / voxel) - 1e-9).ceil().max(1.0) as usize
        };
        dims[a] = cells + 1 + 2 * pad;
    }
    let total = dims.iter().map(|&d| d as u128).product::<u128>();
    if total > MAX_VOXELS {
        return Err(SdfError::TooManyVoxels(total));
    }
    // centre the lattice on the mesh box
    let span = Vec3::new(
        (dims[0] - 1) as f64,
        (dims[1] - 1) as f64,
        (dims[2] - 1) as f64,
    ) * voxel;
    let origin = aabb.center() - span / 2.0;
    Ok((origin, voxel, dims))
}

/// Bakes a signed distance grid for a watertight mesh (body frame = mesh frame).
pub fn generate_sdf(mesh: &TriMesh, spec: &SdfResolutionSpec) -> Result<SignedDistanceGrid, SdfError> {
    mesh.ensure_watertight()?;
    let aabb = mesh.aabb();
    let (origin, voxel, dims) = layout(&aabb, spec)?;
    let bvh = TriangleBvh::new(mesh);
    let [nx, ny, nz] = dims;

    let mut values = vec![0f32; nx * ny * nz];
    values.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        let mut hint = None;
        for j in 0..ny {
            for i in 0..nx {
                let p = origin + Vec3::new(i as f64, j as f64, k as f64) * voxel;
                let (d2, id) = bvh.nearest(&p, hint);
                hint = Some(id);
                slab[i + nx * j] = d2.sqrt() as f32;
            }
        }
    });

    let votes = inside_votes(mesh, &origin, voxel, dims);
    values
        .par_iter_mut()
        .zip(votes.par_iter())
        .for_each(|(v, &n)| {
            if n >= 2 {
                *v = -*v;
            }
        });
    SignedDistanceGrid::from_parts(origin, voxel, dims, values, aabb)
}

/// Per-node count (0..=3) of axes along which ray parity says "inside".
fn inside_votes(mesh: &TriMesh, origin: &Pt3, voxel: f64, dims: [usize; 3]) -> Vec<u8> {
    let [nx, ny, nz] = dims;
    let mut votes = vec![0u8; nx * ny * nz];
    // grid-index coordinates of every vertex
    let verts: Vec<Vec3> = mesh.vertices().iter().map(|v| (v - origin) / voxel).collect();
    // Off-lattice jitter keeps rays clear of mesh edges that lie on lattice lines.
    const JITTER: [f64; 2] = [1.234_567e-6, 2.718_281e-6];
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        let (nb, nc) = (dims[b], dims[c]);
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); nb * nc];
        for t in mesh.triangles() {
            let [p0, p1, p2] = t.map(|k| verts[k as usize]);
            let lo_b = p0[b].min(p1[b]).min(p2[b]) - JITTER[0];
            let hi_b = p0[b].max(p1[b]).max(p2[b]) - JITTER[0];
            let lo_c = p0[c].min(p1[c]).min(p2[c]) - JITTER[1];
            let hi_c = p0[c].max(p1[c]).max(p2[c]) - JITTER[1];
            let jb0 = lo_b.ceil().max(0.0) as i64;
            let jb1 = hi_b.floor().min(nb as f64 - 1.0) as i64;
            let jc0 = lo_c.ceil().max(0.0) as i64;
            let jc1 = hi_c.floor().min(nc as f64 - 1.0) as i64;
            let area = (p1[b] - p0[b]) * (p2[c] - p0[c]) - (p2[b] - p0[b]) * (p1[c] - p0[c]);
            if area == 0.0 {
                continue;
            }
            for jc in jc0..=jc1 {
                for jb in jb0..=jb1 {
                    let qb = jb as f64 + JITTER[0];
                    let qc = jc as f64 + JITTER[1];
                    let edge = |u: &Vec3, v: &Vec3| (v[b] - u[b]) * (qc - u[c]) - (v[c] - u[c]) * (qb - u[b]);
                    let w0 = edge(&p1, &p2);
                    let w1 = edge(&p2, &p0);
                    let w2 = edge(&p0, &p1);
                    let inside = (w0 > 0.0 && w1 > 0.0 && w2 > 0.0) || (w0 < 0.0 && w1 < 0.0 && w2 < 0.0);
                    if inside {
                        let s = w0 + w1 + w2;
                        let x = (w0 * p0[axis] + w1 * p1[axis] + w2 * p2[axis]) / s;
                        rows[jb as usize + nb * jc as usize].push(x);
                    }
                }
            }
        }
        for (r, hits) in rows.iter_mut().enumerate() {
            if hits.is_empty() {
                continue;
            }
            hits.sort_by(f64::total_cmp);
            let (jb, jc) = (r % nb, r / nb);
            let mut crossed = 0usize;
            for i in 0..dims[axis] {
                while crossed < hits.len() && hits[crossed] < i as f64 {
                    crossed += 1;
                }
                if crossed % 2 == 1 {
                    let mut idx = [0usize; 3];
                    idx[axis] = i;
                    idx[b] = jb;
                    idx[c] = jc;
                    votes[idx[0] + nx * (idx[1] + ny * idx[2])] += 1;
                }
            }
        }
    }
    votes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use rand::{Rng, SeedableRng};

    fn sphere_grid(res: u32) -> SignedDistanceGrid {
        generate_sdf(&primitives::icosphere(0.1, 4), &SdfResolutionSpec::new(res)).unwrap()
    }

    #[test]
    fn sphere_center_and_random_points() {
        let g = sphere_grid(64);
        let h = g.voxel_size();
        assert!((g.sample_local(&Pt3::origin()) + 0.1).abs() <= 2.0 * h);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let bounds = g.grid_aabb();
        for _ in 0..1000 {
            let p = Pt3::new(
                rng.gen_range(bounds.min.x..bounds.max.x),
                rng.gen_range(bounds.min.y..bounds.max.y),
                rng.gen_range(bounds.min.z..bounds.max.z),
            );
            let analytic = p.coords.norm() - 0.1;
            assert!((g.sample_local(&p) - analytic).abs() <= 2.0 * h);
        }
    }

    #[test]
    fn cube_face_node_is_near_zero() {
        let cube = primitives::box_mesh(Vec3::new(1.0, 1.0, 1.0), 1).translated(&Vec3::repeat(0.5));
        let g = generate_sdf(&cube, &SdfResolutionSpec::new(24)).unwrap();
        assert_eq!(g.dims(), [24, 24, 24]);
        let pad = 4;
        // node i = pad lies on the x = 0 face
        let p = g.node_position(pad, 10, 10);
        assert!(p.x.abs() < 1e-12);
        assert!(g.node(pad, 10, 10).abs() <= 0.5 * g.voxel_size());
        assert!(g.node(12, 12, 12) < 0.0);
        assert!(g.node(0, 0, 0) > 0.0);
    }

    #[test]
    fn node_and_edge_midpoint_samples() {
        let g = sphere_grid(32);
        let (i, j, k) = (10, 12, 14);
        assert_eq!(g.sample_local(&g.node_position(i, j, k)), g.node(i, j, k));
        let mid = nalgebra::center(&g.node_position(i, j, k), &g.node_position(i + 1, j, k));
        let expect = (g.node(i, j, k) + g.node(i + 1, j, k)) / 2.0;
        assert!((g.sample_local(&mid) - expect).abs() < 1e-12);
    }

    #[test]
    fn outside_queries_are_conservative() {
        let g = sphere_grid(32);
        let far = Pt3::new(1.0, 0.0, 0.0);
        let s = g.sample_local(&far);
        assert!(s > 0.0 && s <= 0.9 + 1e-9 + 2.0 * g.voxel_size());
        assert!(g.gradient_local(&far).fallback);
        assert!((g.gradient_local(&far).direction - Vec3::x()).norm() < 1e-12);
    }

    #[test]
    fn sphere_gradient_is_radial() {
        let g = sphere_grid(64);
        let grad = g.gradient_local(&Pt3::new(0.05, 0.0, 0.0));
        let angle = grad.direction.angle(&Vec3::x()).to_degrees();
        assert!(angle < 2.0, "{angle}");
        assert!(!grad.fallback);
    }

    #[test]
    fn slab_gradient_is_face_normal() {
        let slab = primitives::box_mesh(Vec3::new(1.0, 1.0, 0.2), 1);
        let g = generate_sdf(&slab, &SdfResolutionSpec::new(64)).unwrap();
        let grad = g.gradient_local(&Pt3::new(0.013, -0.021, 0.06));
        assert!((grad.direction - Vec3::z()).norm() < 1e-6, "{:?}", grad.direction);
    }

    #[test]
    fn pose_transform_is_consistent() {
        let g = sphere_grid(32);
        let pose = Pose::from_parts(
            nalgebra::Translation3::new(0.3, -0.2, 0.5),
            nalgebra::UnitQuaternion::from_euler_angles(0.3, 0.2, -0.7),
        );
        let local = Pt3::new(0.02, 0.05, -0.03);
        let world = pose * local;
        assert!((g.sample(&world, &pose) - g.sample_local(&local)).abs() < 1e-12);
        let n = g.gradient(&world, &pose);
        assert!((n - pose.rotation * g.gradient_local(&local).direction).norm() < 1e-12);
    }

    #[test]
    fn rejects_open_mesh_and_bad_resolution() {
        let tri = TriMesh::new(
            vec![Pt3::origin(), Pt3::new(1.0, 0.0, 0.0), Pt3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(generate_sdf(&tri, &SdfResolutionSpec::new(32)), Err(SdfError::Mesh(_))));
        let cube = primitives::box_mesh(Vec3::new(1.0, 1.0, 1.0), 1);
        assert!(matches!(generate_sdf(&cube, &SdfResolutionSpec::new(8)), Err(SdfError::InvalidResolution(8))));
        assert!(matches!(
            generate_sdf(&cube, &SdfResolutionSpec::new(1_100_000)),
            Err(SdfError::TooManyVoxels(_))
        ));
    }

    #[test]
    fn generation_is_deterministic_across_thread_counts() {
        let mesh = primitives::torus(0.02, 0.006, 24, 12);
        let spec = SdfResolutionSpec::new(32);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| generate_sdf(&mesh, &spec).unwrap());
        let b = four.install(|| generate_sdf(&mesh, &spec).unwrap());
        assert_eq!(a, b);
    }
}
