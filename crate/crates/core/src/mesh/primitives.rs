//! Closed primitive meshes used by tests and builtin scenes.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use super::TriMesh;
use crate::math::{Pt3, Vec3};

/// Merges vertices that coincide up to `tol` and builds the mesh.
pub(crate) fn welded(vertices: Vec<Pt3>, triangles: Vec<[u32; 3]>, tol: f64) -> TriMesh {
    let mut map: HashMap<[i64; 3], u32> = HashMap::new();
    let mut out_v = Vec::new();
    let mut remap = Vec::with_capacity(vertices.len());
    for v in &vertices {
        let key = [v.x, v.y, v.z].map(|c| (c / tol).round() as i64);
        let idx = *map.entry(key).or_insert_with(|| {
            out_v.push(*v);
            (out_v.len() - 1) as u32
        });
        remap.push(idx);
    }
    let tris = triangles.into_iter().map(|t| t.map(|k| remap[k as usize])).collect();
    TriMesh::new(out_v, tris).expect("primitive construction produced an invalid mesh")
}

/// Box centred at the origin with each face split into `subdivisions`^2 quads.
pub fn box_mesh(extents: Vec3, subdivisions: usize) -> TriMesh {
    let n = subdivisions.max(1);
    let h = extents * 0.5;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    // (normal axis, sign); the two in-plane axes are chosen so that u x v = sign * normal.
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (u, v) = if sign > 0.0 {
                ((axis + 1) % 3, (axis + 2) % 3)
            } else {
                ((axis + 2) % 3, (axis + 1) % 3)
            };
            let base = vertices.len() as u32;
            for j in 0..=n {
                for i in 0..=n {
                    let mut p = Pt3::origin();
                    p[axis] = sign * h[axis];
                    p[u] = -h[u] + extents[u] * i as f64 / n as f64;
                    p[v] = -h[v] + extents[v] * j as f64 / n as f64;
                    vertices.push(p);
                }
            }
            let idx = |i: usize, j: usize| base + (j * (n + 1) + i) as u32;
            for j in 0..n {
                for i in 0..n {
                    triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                    triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                }
            }
        }
    }
    welded(vertices, triangles, extents.min() * 1e-9)
}

/// Icosahedron refined `subdivisions` times with vertices projected to the sphere.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(verts.into_iter().map(|v| Pt3::from(v * radius)).collect(), faces)
        .expect("icosphere is valid")
}

/// Torus around the z axis.
pub fn torus(major_radius: f64, minor_radius: f64, major_segments: usize, minor_segments: usize) -> TriMesh {
    let (nu, nv) = (major_segments.max(3), minor_segments.max(3));
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let v = TAU * j as f64 / nv as f64;
            let r = major_radius + minor_radius * v.cos();
            vertices.push(Pt3::new(r * u.cos(), r * u.sin(), minor_radius * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| ((i % nu) * nv + (j % nv)) as u32;
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, triangles).expect("torus is valid")
}

/// Solid cylinder along z with its base at z = 0.
pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriMesh {
    let mut b = ColumnBuilder::new(segments.max(3), 0.0);
    for j in 0..b.columns() {
        let theta = b.angle(j);
        b.push(j, ColumnVertex::fixed(0.0, 0.0, 0, 0.0), theta);
        b.push(j, ColumnVertex::fixed(radius, 0.0, 0, 1.0), theta);
        b.push(j, ColumnVertex::fixed(radius, height, 0, 2.0), theta);
        b.push(j, ColumnVertex::fixed(0.0, height, 0, 3.0), theta);
    }
    b.build(false)
}

/// Vertex of a column path in the (radius, height) half-plane at the column angle.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ColumnVertex {
    pub radius: f64,
    pub z: f64,
    /// Lexicographic (segment, value) key, strictly increasing along each column path.
    pub segment: u32,
    pub key: f64,
    /// +1 / -1 for helical vertices traversed upward / downward, 0 for fixed vertices.
    pub helix_dir: f64,
}

impl ColumnVertex {
    pub fn fixed(radius: f64, z: f64, segment: u32, key: f64) -> Self {
        Self {
            radius,
            z,
            segment,
            key,
            helix_dir: 0.0,
        }
    }
}

/// Builds closed meshes from per-angle column paths. Each column is a polyline in
/// the (r, z) half-plane; consecutive columns are stitched by merging their vertex
/// keys, which lets helical rows (keys following the thread phase) line up across
/// columns while the caps and outer bodies stay planar. Axis vertices (r = 0) are
/// shared by all columns. Paths must be oriented so that the material lies to the
/// left when walking the path with the angle increasing into the page:
/// outer walls upward, inner walls downward.
pub(crate) struct ColumnBuilder {
    n: usize,
    lead: f64,
    paths: Vec<Vec<(u32, ColumnVertex)>>,
    vertices: Vec<Pt3>,
    axis: HashMap<i64, u32>,
}

impl ColumnBuilder {
    /// `lead` is the axial advance per revolution of helical keys (0 when unused).
    pub fn new(columns: usize, lead: f64) -> Self {
        Self {
            n: columns,
            lead,
            paths: vec![Vec::new(); columns],
            vertices: Vec::new(),
            axis: HashMap::new(),
        }
    }

    pub fn columns(&self) -> usize {
        self.n
    }

    pub fn angle(&self, j: usize) -> f64 {
        TAU * j as f64 / self.n as f64
    }

    pub fn push(&mut self, column: usize, v: ColumnVertex, theta: f64) {
        let idx = if v.radius.abs() < 1e-15 {
            let key = (v.z * 1e12).round() as i64;
            let vertices = &mut self.vertices;
            *self.axis.entry(key).or_insert_with(|| {
                vertices.push(Pt3::new(0.0, 0.0, v.z));
                (vertices.len() - 1) as u32
            })
        } else {
            self.vertices
                .push(Pt3::new(v.radius * theta.cos(), v.radius * theta.sin(), v.z));
            (self.vertices.len() - 1) as u32
        };
        self.paths[column].push((idx, v));
    }

    /// `closed`: the path is a loop (annular solids); otherwise it runs axis to axis.
    pub fn build(self, closed: bool) -> TriMesh {
        let mut triangles = Vec::new();
        let key = |v: &ColumnVertex, shift: f64| (v.segment, v.key - v.helix_dir * shift);
        for j in 0..self.n {
            let a = &self.paths[j];
            let b = &self.paths[(j + 1) % self.n];
            let shift = if j + 1 == self.n { self.lead } else { 0.0 };
            let (mut ia, mut ib) = (0usize, 0usize);
            let la = a.len() + usize::from(closed);
            let lb = b.len() + usize::from(closed);
            let at = |p: &Vec<(u32, ColumnVertex)>, i: usize| p[i % p.len()].0;
            let ka = |i: usize| {
                if i >= a.len() {
                    (u32::MAX, 0.0)
                } else {
                    key(&a[i].1, 0.0)
                }
            };
            let kb = |i: usize| {
                if i >= b.len() {
                    (u32::MAX, 0.0)
                } else {
                    key(&b[i].1, shift)
                }
            };
            while ia + 1 < la || ib + 1 < lb {
                let advance_a = ib + 1 >= lb
                    || (ia + 1 < la && ka(ia + 1).partial_cmp(&kb(ib + 1)) != Some(std::cmp::Ordering::Greater));
                let tri = if advance_a {
                    let t = [at(a, ia), at(b, ib), at(a, ia + 1)];
                    ia += 1;
                    t
                } else {
                    let t = [at(a, ia), at(b, ib), at(b, ib + 1)];
                    ib += 1;
                    t
                };
                if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                    triangles.push(tri);
                }
            }
        }
        TriMesh::new(self.vertices, triangles).expect("column surface is valid")
    }
}

/// Polar radius of a regular hexagon with the given across-flats width; flats face 0°, 60°, ...
pub(crate) fn hex_radius(across_flats: f64, theta: f64) -> f64 {
    let sector = PI / 3.0;
    let local = (theta + sector / 2.0).rem_euclid(sector) - sector / 2.0;
    across_flats / 2.0 / local.cos()
}

/// Polar radius of a square of side `side` with flats facing 0°, 90°, ...
pub(crate) fn square_radius(side: f64, theta: f64) -> f64 {
    let sector = PI / 2.0;
    let local = (theta + sector / 2.0).rem_euclid(sector) - sector / 2.0;
    side / 2.0 / local.cos()
}
