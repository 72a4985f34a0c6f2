//! Small geometric helpers shared by the collision and dynamics code.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Point3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Pt3 = Point3<f64>;
/// Rigid transform from a body frame to the world frame.
pub type Pose = Isometry3<f64>;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Pt3,
    pub max: Pt3,
}

impl Aabb {
    pub fn new(min: Pt3, max: Pt3) -> Self {
        Self { min, max }
    }

    pub fn empty() -> Self {
        Self {
            min: Pt3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Pt3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Pt3>) -> Self {
        let mut aabb = Self::empty();
        for p in points {
            aabb.grow(p);
        }
        aabb
    }

    pub fn grow(&mut self, p: &Pt3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn inflate(&self, margin: f64) -> Aabb {
        let m = Vec3::repeat(margin);
        Aabb::new(self.min - m, self.max + m)
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Pt3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn is_finite(&self) -> bool {
        self.min.iter().chain(self.max.iter()).all(|v| v.is_finite())
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn contains(&self, p: &Pt3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: &Pt3) -> Pt3 {
        p.sup(&self.min).inf(&self.max)
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance(&self, p: &Pt3) -> f64 {
        (p - self.clamp(p)).norm()
    }

    pub fn distance_squared(&self, p: &Pt3) -> f64 {
        (p - self.clamp(p)).norm_squared()
    }

    /// Bounds of this box after applying `pose` (conservative, via the 8 corners).
    pub fn transformed(&self, pose: &Pose) -> Aabb {
        let mut out = Aabb::empty();
        for i in 0..8 {
            let c = Pt3::new(
                if i & 1 == 0 { self.min.x } else { self.max.x },
                if i & 2 == 0 { self.min.y } else { self.max.y },
                if i & 4 == 0 { self.min.z } else { self.max.z },
            );
            out.grow(&(pose * c));
        }
        out
    }
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Pt3, a: &Pt3, b: &Pt3, c: &Pt3) -> Pt3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation vector (axis * angle, angle in [0, pi]) of a unit quaternion.
pub fn rotation_vector(q: &UnitQuaternion<f64>) -> Vec3 {
    q.scaled_axis()
}

/// Two unit vectors completing `n` to a right-handed orthonormal basis.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    // Duff et al., "Building an Orthonormal Basis, Revisited".
    let sign = 1f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let t1 = Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let t2 = Vec3::new(b, sign + n.y * n.y * a, -n.y);
    (t1, t2)
}

/// Non-negative least squares, min ‖A x − b‖ subject to x ≥ 0 (Lawson–Hanson active set).
/// The positive entries of the result index linearly independent columns of `a`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let scale = a.norm() * b.norm();
    if n == 0 || scale == 0.0 {
        return x;
    }
    let tol = 1e-12 * scale;
    let solve = |passive: &[bool]| {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let z = a.select_columns(&cols).svd(true, true).solve(b, 1e-12).unwrap_or_else(|_| DVector::zeros(cols.len()));
        let mut s = DVector::zeros(n);
        for (k, &j) in cols.iter().enumerate() {
            s[j] = z[k];
        }
        s
    };
    for _ in 0..3 * n + 10 {
        let w = a.tr_mul(&(b - a * &x));
        let mut pick = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol && pick.is_none_or(|p: usize| w[j] > w[p]) {
                pick = Some(j);
            }
        }
        let Some(j) = pick else { break };
        passive[j] = true;
        let mut s = solve(&passive);
        let mut inner = 0;
        while (0..n).any(|k| passive[k] && s[k] <= 0.0) && inner < 3 * n {
            inner += 1;
            let mut alpha = f64::INFINITY;
            for k in 0..n {
                if passive[k] && s[k] <= 0.0 {
                    alpha = alpha.min(x[k] / (x[k] - s[k]));
                }
            }
            x += (&s - &x) * alpha;
            for k in 0..n {
                if passive[k] && x[k] <= 1e-15 * x.amax().max(1e-300) {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
            s = solve(&passive);
        }
        x = s;
        if inner >= 3 * n {
            break;
        }
    }
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closest_point_regions() {
        let a = Pt3::new(0.0, 0.0, 0.0);
        let b = Pt3::new(1.0, 0.0, 0.0);
        let c = Pt3::new(0.0, 1.0, 0.0);
        let inside = closest_point_on_triangle(&Pt3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert!((inside - Pt3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
        let vert = closest_point_on_triangle(&Pt3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(vert, a);
        let edge = closest_point_on_triangle(&Pt3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((edge - Pt3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        for n in [Vec3::z(), -Vec3::z(), Vec3::new(1.0, 2.0, -3.0).normalize()] {
            let (t1, t2) = tangent_basis(&n);
            assert!(t1.dot(&n).abs() < 1e-12 && t2.dot(&n).abs() < 1e-12);
            assert!(t1.dot(&t2).abs() < 1e-12);
            assert!((t1.cross(&t2) - n).norm() < 1e-12);
        }
    }

    #[test]
    fn aabb_overlap_and_distance() {
        let a = Aabb::new(Pt3::origin(), Pt3::new(1.0, 1.0, 1.0));
        let b = Aabb::new(Pt3::new(4.0, 0.0, 0.0), Pt3::new(5.0, 1.0, 1.0));
        assert!(!a.overlaps(&b));
        assert!(a.inflate(1.5).overlaps(&b.inflate(1.5)));
        assert!((a.distance(&Pt3::new(2.0, 0.5, 0.5)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_matches_unconstrained_when_feasible_and_clamps_otherwise() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
        let b = DVector::from_column_slice(&[-1.0, 2.0, 1.0]);
        let x = nnls(&a, &b);
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 1.5).abs() < 1e-12);
        assert_eq!(nnls(&a, &DVector::zeros(3)), DVector::zeros(2));
    }
}
