use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Contact, ContactPatch};
use crate::math::{nnls, tangent_basis, Pt3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionParams {
    pub max_patches: usize,
    pub per_patch_cap: usize,
    pub normal_cone_cos: f64,
    /// Candidates shallower than this are dropped before binning.
    pub min_depth: f64,
    /// Only penetrating members and those at most this far below the deepest are kept.
    pub depth_band: f64,
    pub batch_size: usize,
}

impl Default for ReductionParams {
    fn default() -> Self {
        Self {
            max_patches: 128,
            per_patch_cap: 6,
            normal_cone_cos: 20f64.to_radians().cos(),
            min_depth: f64::NEG_INFINITY,
            depth_band: f64::INFINITY,
            batch_size: 1024,
        }
    }
}

/// Depth used as the contact's share of the normal load.
fn weight(c: &Contact) -> f64 {
    c.depth.max(0.0)
}

struct Builder {
    normal: Vec3,
    basis: (Vec3, Vec3),
    members: Vec<Contact>,
    deepest: usize,
    anchor: Pt3,
    force: Vec3,
    torque: Vec3,
    area: Option<f64>,
}

impl Builder {
    fn new(seed: Contact) -> Self {
        Self {
            normal: seed.normal,
            basis: tangent_basis(&seed.normal),
            members: vec![seed],
            deepest: 0,
            anchor: seed.point,
            force: seed.normal * weight(&seed),
            torque: Vec3::zeros(),
            area: None,
        }
    }

    fn add(&mut self, c: Contact) {
        let f = c.normal * weight(&c);
        self.force += f;
        self.torque += (c.point - self.anchor).cross(&f);
        if c.depth > self.members[self.deepest].depth {
            self.deepest = self.members.len();
        }
        self.members.push(c);
        self.area = None;
    }

    fn max_depth(&self) -> f64 {
        self.members[self.deepest].depth
    }

    fn project(&self, p: &Pt3) -> [f64; 2] {
        [p.coords.dot(&self.basis.0), p.coords.dot(&self.basis.1)]
    }

    fn area(&mut self) -> f64 {
        if self.area.is_none() {
            let pts: Vec<[f64; 2]> = self.members.iter().map(|c| self.project(&c.point)).collect();
            self.area = Some(hull_area(&pts));
        }
        self.area.unwrap()
    }

    fn key(&mut self) -> (f64, f64) {
        (self.max_depth(), self.area())
    }

    /// Columns are each member's unit-load wrench (normal; lever × normal / scale).
    fn wrench_system(&self, ids: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let scale = ids.iter().map(|&i| (self.members[i].point - self.anchor).norm()).fold(0.0, f64::max);
        let inv = if scale > 0.0 { 1.0 / scale } else { 0.0 };
        let mut a = DMatrix::zeros(6, ids.len());
        for (j, &i) in ids.iter().enumerate() {
            let c = &self.members[i];
            let t = (c.point - self.anchor).cross(&c.normal) * inv;
            for r in 0..3 {
                a[(r, j)] = c.normal[r];
                a[(r + 3, j)] = t[r];
            }
        }
        let t = self.torque * inv;
        let b = DVector::from_column_slice(&[self.force.x, self.force.y, self.force.z, t.x, t.y, t.z]);
        (a, b)
    }

    /// Kept contacts: the deepest, then the support of the non-negative fit of the
    /// patch's net force and torque, then hull-extremal points while room remains.
    fn select(&self, cap: usize, band: f64) -> Vec<usize> {
        let mut chosen = vec![self.deepest];
        let floor = (self.max_depth() - band).min(0.0);
        let all: Vec<usize> = (0..self.members.len()).filter(|&i| self.members[i].depth >= floor).collect();
        let (mut a, b) = self.wrench_system(&all);
        if b.norm() > 0.0 {
            // a heavy deepest column enters the active set first, so the fit usually
            // keeps it and the support still fits under the cap
            let d = all.iter().position(|&i| i == self.deepest).expect("deepest is in band");
            a.column_mut(d).scale_mut(1e3);
            let x = nnls(&a, &b);
            let mut support: Vec<(usize, f64)> = all.iter().copied().zip(x.iter().copied()).filter(|&(i, w)| w > 0.0 && i != self.deepest).collect();
            support.sort_by(|p, q| q.1.total_cmp(&p.1).then(p.0.cmp(&q.0)));
            let mut support: Vec<usize> = support.into_iter().map(|(i, _)| i).collect();
            support.truncate(cap.saturating_sub(1));
            support.sort_unstable();
            chosen.extend(support);
        }
        let pts: Vec<[f64; 2]> = self.members.iter().map(|c| self.project(&c.point)).collect();
        let mut hull: Vec<[f64; 2]> = chosen.iter().map(|&i| pts[i]).collect();
        while chosen.len() < cap.min(pts.len()) {
            let mut best: Option<(usize, (f64, f64))> = None;
            for (i, p) in pts.iter().enumerate() {
                if chosen.contains(&i) || self.members[i].depth < floor {
                    continue;
                }
                hull.push(*p);
                let area = hull_area(&hull);
                hull.pop();
                let spread: f64 = hull.iter().map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()).sum();
                let score = (area, spread);
                if best.is_none_or(|(_, b)| cmp_key(score, b) == Ordering::Greater) {
                    best = Some((i, score));
                }
            }
            let Some((i, _)) = best else { break };
            chosen.push(i);
            hull.push(pts[i]);
        }
        chosen
    }

    fn finish(mut self, cap: usize, band: f64) -> ContactPatch {
        let area = self.area();
        let kept = self.select(cap, band);
        let (a, b) = self.wrench_system(&kept);
        let x = nnls(&a, &b);
        ContactPatch {
            representative_normal: self.normal,
            contacts: kept.iter().map(|&i| self.members[i]).collect(),
            weights: x.iter().copied().collect(),
            area_metric: area,
            max_depth: self.max_depth(),
        }
    }
}

fn cmp_key(a: (f64, f64), b: (f64, f64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
}

/// Monotone-chain convex hull area of 2D points.
fn hull_area(pts: &[[f64; 2]]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for q in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(*q);
        }
        hull.pop();
    }
    let n = hull.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    twice.abs() / 2.0
}

fn similar_patch(patches: &[Builder], n: &Vec3, cone_cos: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in patches.iter().enumerate() {
        let d = p.normal.dot(n);
        if d >= cone_cos && best.is_none_or(|(_, b)| d > b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Batched Assign / FindDeepest / BinReduce / AddPatch reduction of one shape pair's
/// candidates.
pub fn reduce_contacts(candidates: &[Contact], params: &ReductionParams) -> Vec<ContactPatch> {
    let cap = params.per_patch_cap.max(1);
    let n_max = params.max_patches.max(1);
    let cone = params.normal_cone_cos;
    let mut patches: Vec<Builder> = Vec::new();
    for batch in candidates.chunks(params.batch_size.max(1)) {
        let mut pending: Vec<&Contact> = batch.iter().filter(|c| c.depth >= params.min_depth).collect();
        // Assign
        pending.retain(|c| match similar_patch(&patches, &c.normal, cone) {
            Some(i) => {
                patches[i].add(**c);
                false
            }
            None => true,
        });
        while !pending.is_empty() {
            // FindDeepest
            let mut best = 0;
            for (i, c) in pending.iter().enumerate() {
                if c.depth > pending[best].depth {
                    best = i;
                }
            }
            let seed = *pending.remove(best);
            let mut patch = Builder::new(seed);
            // BinReduce
            pending.retain(|c| {
                if c.normal.dot(&patch.normal) >= cone {
                    patch.add(**c);
                    false
                } else {
                    true
                }
            });
            // AddPatch
            if patches.len() < n_max {
                patches.push(patch);
                continue;
            }
            let victim = similar_patch(&patches, &patch.normal, cone).unwrap_or_else(|| {
                let keys: Vec<(f64, f64)> = patches.iter_mut().map(Builder::key).collect();
                let mut worst = 0;
                for (i, k) in keys.iter().enumerate() {
                    if cmp_key(*k, keys[worst]) == Ordering::Less {
                        worst = i;
                    }
                }
                worst
            });
            if cmp_key(patch.key(), patches[victim].key()) == Ordering::Greater {
                patches[victim] = patch;
            }
        }
    }
    patches.into_iter().map(|p| p.finish(cap, params.depth_band)).collect()
}

/// Relative force and torque error of the reduced, reweighted contact set against the
/// depth-weighted candidate set, torque taken about `reference`.
///
/// When the candidates carry no net force the force error is absolute instead.
pub fn equivalent_system_check(candidates: &[Contact], patches: &[ContactPatch], reference: &Pt3) -> (f64, f64) {
    let mut f_full = Vec3::zeros();
    let mut t_full = Vec3::zeros();
    for c in candidates {
        let f = c.normal * weight(c);
        f_full += f;
        t_full += (c.point - reference).cross(&f);
    }
    let mut f_red = Vec3::zeros();
    let mut t_red = Vec3::zeros();
    for p in patches {
        for (c, w) in p.contacts.iter().zip(&p.weights) {
            let f = c.normal * *w;
            f_red += f;
            t_red += (c.point - reference).cross(&f);
        }
    }
    let rel = |full: Vec3, red: Vec3| {
        let n = full.norm();
        let d = (full - red).norm();
        if n > 1e-300 {
            d / n
        } else {
            d
        }
    };
    (rel(f_full, f_red), rel(t_full, t_red))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contact(x: f64, y: f64, depth: f64, normal: Vec3, face: u32) -> Contact {
        Contact {
            point: Pt3::new(x, y, 0.0),
            normal,
            depth,
            body_a: 0,
            body_b: 1,
            face_index: face,
        }
    }

    fn grid_cloud(n: usize, depth: f64) -> Vec<Contact> {
        let mut v = Vec::new();
        for j in 0..n {
            for i in 0..n {
                v.push(contact(i as f64 * 0.01, j as f64 * 0.01, depth, Vec3::z(), (i + n * j) as u32));
            }
        }
        v
    }

    #[test]
    fn coplanar_single_patch() {
        let cands = grid_cloud(8, 1e-3);
        let p = reduce_contacts(&cands, &ReductionParams::default());
        assert_eq!(p.len(), 1);
        assert!(p[0].contacts.len() <= 6);
        let (fe, te) = equivalent_system_check(&cands, &p, &Pt3::new(0.3, -0.2, 0.1));
        assert!(fe < 1e-12 && te < 1e-9, "{fe} {te}");
        assert!((p[0].area_metric - 0.07 * 0.07).abs() < 1e-12);
    }

    #[test]
    fn square_reduced_to_corners() {
        let cands = grid_cloud(5, 2e-3);
        let params = ReductionParams {
            per_patch_cap: 4,
            ..Default::default()
        };
        let p = reduce_contacts(&cands, &params);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].contacts.len(), 4);
        let (fe, te) = equivalent_system_check(&cands, &p, &Pt3::new(-0.05, 0.01, 0.02));
        let corners: Vec<[f64; 2]> = p[0].contacts.iter().map(|c| [c.point.x, c.point.y]).collect();
        for k in [[0.0, 0.0], [0.04, 0.0], [0.0, 0.04], [0.04, 0.04]] {
            assert!(corners.iter().any(|c| (c[0] - k[0]).abs() < 1e-12 && (c[1] - k[1]).abs() < 1e-12));
        }
        assert!(fe < 1e-12 && te < 1e-9, "{fe} {te}");
    }

    #[test]
    fn opposite_normals_make_two_patches() {
        let mut c = grid_cloud(4, 1e-3);
        for (i, k) in c.iter_mut().enumerate() {
            if i % 2 == 1 {
                k.normal = -Vec3::z();
            }
        }
        let params = ReductionParams {
            normal_cone_cos: 30f64.to_radians().cos(),
            ..Default::default()
        };
        assert_eq!(reduce_contacts(&c, &params).len(), 2);
    }

    #[test]
    fn identity_when_nothing_is_reduced() {
        let c = vec![contact(0.0, 0.0, 1e-3, Vec3::z(), 0)];
        let p = reduce_contacts(&c, &ReductionParams::default());
        let (fe, te) = equivalent_system_check(&c, &p, &Pt3::origin());
        assert!(fe < 1e-12 && te < 1e-12);
        assert!(reduce_contacts(&[], &ReductionParams::default()).is_empty());
    }

    #[test]
    fn patch_limit_keeps_deepest() {
        // 40 distinct normals spread over a hemisphere, more than the patch limit
        let mut c = Vec::new();
        for i in 0..40 {
            let a = i as f64 * 0.9;
            let n = Vec3::new(a.cos(), a.sin(), 0.2 + i as f64 * 0.05).normalize();
            c.push(Contact {
                point: Pt3::new(a.cos(), a.sin(), 0.0),
                normal: n,
                depth: 1e-3 * ((i * 7) % 13) as f64,
                body_a: 0,
                body_b: 1,
                face_index: i,
            });
        }
        let params = ReductionParams {
            max_patches: 4,
            normal_cone_cos: 0.999,
            batch_size: 8,
            ..Default::default()
        };
        let p = reduce_contacts(&c, &params);
        assert!(p.len() <= 4);
        let deepest = c.iter().map(|k| k.depth).fold(f64::MIN, f64::max);
        assert!(p.iter().any(|q| q.contacts.iter().any(|k| k.depth == deepest)));
    }

    #[test]
    fn depth_band_skips_far_members() {
        // a ring touching at depth 0 inside a wider ring hovering 3 mm away
        let mut c = Vec::new();
        for i in 0..32 {
            let a = i as f64 * std::f64::consts::TAU / 32.0;
            c.push(contact(0.02 * a.cos(), 0.02 * a.sin(), 0.0, Vec3::z(), i));
            c.push(contact(0.03 * a.cos(), 0.03 * a.sin(), -3e-3, Vec3::z(), 32 + i));
        }
        let params = ReductionParams {
            depth_band: 1e-3,
            ..Default::default()
        };
        let p = reduce_contacts(&c, &params);
        assert_eq!(p[0].contacts.len(), 6);
        assert!(p[0].contacts.iter().all(|k| k.depth == 0.0));
        let wide = reduce_contacts(&c, &ReductionParams::default());
        assert!(wide[0].contacts.iter().any(|k| k.depth < 0.0));
    }

    #[test]
    fn min_depth_culls() {
        let c = grid_cloud(3, -1e-3);
        let params = ReductionParams {
            min_depth: 0.0,
            ..Default::default()
        };
        assert!(reduce_contacts(&c, &params).is_empty());
    }

    #[test]
    fn hull_area_of_square_with_interior_points() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5], [0.2, 0.7]];
        assert!((hull_area(&pts) - 1.0).abs() < 1e-12);
        assert_eq!(hull_area(&pts[..2]), 0.0);
    }
}
