//! Indexed triangle meshes: validation, OBJ I/O, mass properties, broadphase
//! and procedural benchmark geometry.

mod broadphase;
mod mass;
mod obj;
pub mod primitives;
pub mod thread;

use std::collections::HashMap;

use thiserror::Error;

use crate::math::{Aabb, Pose, Pt3, Vec3};

pub use broadphase::{broadphase_pairs, broadphase_pairs_brute_force, SAP_THRESHOLD};
pub use mass::{mass_properties, MassProperties};
pub use obj::load_obj;
pub use thread::{generate_iso_thread, generate_peg_hole, iso_coarse_pitch, ThreadKind, ThreadSpec};

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: index out of range ({index} of {count} vertices)")]
    IndexOutOfRange { line: usize, index: i64, count: usize },
    #[error("line {line}: non-finite coordinate")]
    NonFinite { line: usize },
    #[error("line {line}: zero-area face")]
    ZeroAreaFace { line: usize },
    #[error("triangle {0} references a vertex out of range")]
    BadTriangle(usize),
    #[error("triangle {0} repeats a vertex")]
    RepeatedVertex(usize),
    #[error("triangle {0} has zero area")]
    DegenerateTriangle(usize),
    #[error("vertex {0} is not finite")]
    NonFiniteVertex(usize),
    #[error("mesh is not watertight ({0} edges not shared by exactly two triangles)")]
    NotWatertight(usize),
    #[error("mesh has no triangles")]
    Empty,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Indexed triangle surface. Face normals follow counter-clockwise winding.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Pt3>,
    triangles: Vec<[u32; 3]>,
    face_normals: Vec<Vec3>,
}

pub(crate) fn is_degenerate(a: &Pt3, b: &Pt3, c: &Pt3) -> bool {
    let ab = b - a;
    let ac = c - a;
    let cross = ab.cross(&ac).norm();
    cross == 0.0 || cross <= 1e-12 * ab.norm() * ac.norm()
}

impl TriMesh {
    /// Builds a mesh, checking indices, repeated corners, finiteness and face area.
    pub fn new(vertices: Vec<Pt3>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFiniteVertex(i));
        }
        let n = vertices.len() as u32;
        let mut face_normals = Vec::with_capacity(triangles.len());
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&k| k >= n) {
                return Err(MeshError::BadTriangle(i));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(MeshError::RepeatedVertex(i));
            }
            let [a, b, c] = t.map(|k| vertices[k as usize]);
            if is_degenerate(&a, &b, &c) {
                return Err(MeshError::DegenerateTriangle(i));
            }
            face_normals.push((b - a).cross(&(c - a)).normalize());
        }
        Ok(Self {
            vertices,
            triangles,
            face_normals,
        })
    }

    pub fn vertices(&self) -> &[Pt3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn face_normals(&self) -> &[Vec3] {
        &self.face_normals
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle(&self, i: usize) -> [Pt3; 3] {
        self.triangles[i].map(|k| self.vertices[k as usize])
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Number of undirected edges not shared by exactly two triangles.
    pub fn open_edge_count(&self) -> usize {
        let mut edges: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        edges.values().filter(|&&c| c != 2).count()
    }

    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.open_edge_count() == 0
    }

    pub fn ensure_watertight(&self) -> Result<(), MeshError> {
        if self.triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        match self.open_edge_count() {
            0 => Ok(()),
            n => Err(MeshError::NotWatertight(n)),
        }
    }

    pub fn transformed(&self, pose: &Pose) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| pose * v).collect(),
            triangles: self.triangles.clone(),
            face_normals: self.face_normals.iter().map(|n| pose * n).collect(),
        }
    }

    pub fn translated(&self, t: &Vec3) -> TriMesh {
        self.transformed(&Pose::translation(t.x, t.y, t.z))
    }

    /// Reverses the winding of every face.
    pub fn flipped(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
            face_normals: self.face_normals.iter().map(|n| -n).collect(),
        }
    }

    /// Disjoint union of two meshes.
    pub fn merged(&self, other: &TriMesh) -> TriMesh {
        let offset = self.vertices.len() as u32;
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut triangles = self.triangles.clone();
        triangles.extend(other.triangles.iter().map(|t| t.map(|k| k + offset)));
        let mut face_normals = self.face_normals.clone();
        face_normals.extend_from_slice(&other.face_normals);
        TriMesh {
            vertices,
            triangles,
            face_normals,
        }
    }

    /// Wavefront OBJ text with `v` and `f` records only.
    pub fn to_obj(&self) -> String {
        use std::fmt::Write;
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for v in &self.vertices {
            let _ = writeln!(s, "v {:e} {:e} {:e}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    /// Stable 64-bit content hash (FNV-1a over coordinates and indices), used as a cache key.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for v in &self.vertices {
            for c in v.iter() {
                feed(&c.to_le_bytes());
            }
        }
        for t in &self.triangles {
            for k in t {
                feed(&k.to_le_bytes());
            }
        }
        h
    }
}
