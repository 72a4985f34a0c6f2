//! Bounding volume hierarchy over triangles for nearest-point queries.

use crate::math::{closest_point_on_triangle, Aabb, Pt3};
use crate::mesh::TriMesh;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    aabb: Aabb,
    /// Leaf: first triangle slot. Inner: index of the left child (right is `first + 1`).
    first: u32,
    /// Number of triangles for leaves, 0 for inner nodes.
    count: u32,
}

#[derive(Debug, Clone)]
pub struct TriangleBvh {
    nodes: Vec<Node>,
    tris: Vec<[Pt3; 3]>,
    ids: Vec<u32>,
    /// Inverse of `ids`: slot of each triangle id.
    slots: Vec<u32>,
}

impl TriangleBvh {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut tris: Vec<[Pt3; 3]> = (0..mesh.triangle_count()).map(|i| mesh.triangle(i)).collect();
        let mut ids: Vec<u32> = (0..tris.len() as u32).collect();
        let centroids: Vec<Pt3> = tris
            .iter()
            .map(|[a, b, c]| Pt3::from((a.coords + b.coords + c.coords) / 3.0))
            .collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = vec![Node {
            aabb: Aabb::empty(),
            first: 0,
            count: 0,
        }];
        build(&mut nodes, 0, &mut order, 0, &tris, &centroids);
        tris = order.iter().map(|&i| tris[i]).collect();
        ids = order.iter().map(|&i| ids[i]).collect();
        let mut slots = vec![0u32; ids.len()];
        for (slot, &id) in ids.iter().enumerate() {
            slots[id as usize] = slot as u32;
        }
        Self { nodes, tris, ids, slots }
    }

    /// Squared distance and id of the nearest triangle.
    /// `hint` is a triangle id to test first (typically the answer for a neighbouring point).
    pub fn nearest(&self, p: &Pt3, hint: Option<usize>) -> (f64, usize) {
        let mut best = f64::INFINITY;
        let mut best_id = usize::MAX;
        if let Some(h) = hint {
            let slot = self.slot_of(h);
            let [a, b, c] = &self.tris[slot];
            best = (closest_point_on_triangle(p, a, b, c) - p).norm_squared();
            best_id = h;
        }
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.aabb.distance_squared(p) >= best {
                continue;
            }
            if node.count > 0 {
                let start = node.first as usize;
                for slot in start..start + node.count as usize {
                    let [a, b, c] = &self.tris[slot];
                    let d = (closest_point_on_triangle(p, a, b, c) - p).norm_squared();
                    if d < best || (d == best && (self.ids[slot] as usize) < best_id) {
                        best = d;
                        best_id = self.ids[slot] as usize;
                    }
                }
            } else {
                let l = node.first;
                let dl = self.nodes[l as usize].aabb.distance_squared(p);
                let dr = self.nodes[l as usize + 1].aabb.distance_squared(p);
                // push the farther child first so the nearer one is searched first
                if dl <= dr {
                    stack.push(l + 1);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(l + 1);
                }
            }
        }
        (best, best_id)
    }

    fn slot_of(&self, id: usize) -> usize {
        self.slots[id] as usize
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }
}

fn build(nodes: &mut Vec<Node>, ni: usize, order: &mut [usize], offset: usize, tris: &[[Pt3; 3]], centroids: &[Pt3]) {
    let mut aabb = Aabb::empty();
    let mut caabb = Aabb::empty();
    for &i in order.iter() {
        for v in &tris[i] {
            aabb.grow(v);
        }
        caabb.grow(&centroids[i]);
    }
    nodes[ni].aabb = aabb;
    if order.len() <= LEAF_SIZE {
        nodes[ni].first = offset as u32;
        nodes[ni].count = order.len() as u32;
        return;
    }
    let ext = caabb.extents();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
    });
    let left = nodes.len();
    nodes.push(Node {
        aabb: Aabb::empty(),
        first: 0,
        count: 0,
    });
    nodes.push(Node {
        aabb: Aabb::empty(),
        first: 0,
        count: 0,
    });
    nodes[ni].first = left as u32;
    nodes[ni].count = 0;
    let (lo, hi) = order.split_at_mut(mid);
    build(nodes, left, lo, offset, tris, centroids);
    build(nodes, left + 1, hi, offset + mid, tris, centroids);
}
