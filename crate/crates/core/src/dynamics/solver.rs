use nalgebra::{Matrix3, Matrix6, Vector6};

use super::RigidBody;
use crate::contact::Contact;
use crate::math::{tangent_basis, Pt3, Vec3};

/// Velocity state seen by the solver: twist (linear velocity of `reference`; angular
/// velocity) and the 6×6 mobility mapping a wrench impulse about `reference` to a twist
/// change. Free bodies have block-diagonal mobility; a body carried by a chain has
/// J M⁻¹ Jᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverBody {
    pub twist: Vector6<f64>,
    pub mobility: Matrix6<f64>,
    pub reference: Pt3,
}

impl SolverBody {
    pub fn fixed(reference: Pt3) -> Self {
        Self {
            twist: Vector6::zeros(),
            mobility: Matrix6::zeros(),
            reference,
        }
    }

    pub fn from_rigid(b: &RigidBody) -> Self {
        if b.is_static {
            return Self::fixed(b.position);
        }
        let mut mobility = Matrix6::zeros();
        mobility
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * b.inverse_mass()));
        mobility.fixed_view_mut::<3, 3>(3, 3).copy_from(&b.inverse_inertia_world());
        let mut twist = Vector6::zeros();
        twist.fixed_rows_mut::<3>(0).copy_from(&b.linear_velocity);
        twist.fixed_rows_mut::<3>(3).copy_from(&b.angular_velocity);
        Self {
            twist,
            mobility,
            reference: b.position,
        }
    }

    pub fn linear(&self) -> Vec3 {
        self.twist.fixed_rows::<3>(0).into_owned()
    }

    pub fn angular(&self) -> Vec3 {
        self.twist.fixed_rows::<3>(3).into_owned()
    }

    pub fn velocity_at(&self, p: &Pt3) -> Vec3 {
        self.linear() + self.angular().cross(&(p - self.reference))
    }

    fn row(&self, p: &Pt3, d: &Vec3) -> Vector6<f64> {
        let r = p - self.reference;
        let rxd = r.cross(d);
        Vector6::new(d.x, d.y, d.z, rxd.x, rxd.y, rxd.z)
    }
}

/// One contact between `body_a` (SDF side) and `body_b`; the normal points from a to b.
/// Direction 0 is the normal, 1 and 2 the tangents.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactConstraint {
    pub body_a: usize,
    pub body_b: usize,
    pub point: Pt3,
    pub normal: Vec3,
    pub tangents: [Vec3; 2],
    pub depth: f64,
    pub friction: f64,
    pub restitution: f64,
    pub slop: f64,
    pub patch: u32,
    pub face: u32,
    rows: [[Vector6<f64>; 2]; 3],
    responses: [[Vector6<f64>; 2]; 3],
    pub normal_mass: f64,
    pub tangent_mass: [f64; 2],
    pub normal_impulse: f64,
    pub tangent_impulse: [f64; 2],
    /// Relative normal velocity before solving.
    pub relative_velocity0: f64,
    /// Separation after the position phase moved the bodies.
    pub separation_after: f64,
}

fn inv(k: f64) -> f64 {
    if k > 0.0 {
        1.0 / k
    } else {
        0.0
    }
}

impl ContactConstraint {
    pub fn new(
        c: &Contact,
        patch: u32,
        friction: f64,
        restitution: f64,
        slop: f64,
        bodies: &[SolverBody],
    ) -> Self {
        let (t1, t2) = tangent_basis(&c.normal);
        let (a, b) = (&bodies[c.body_a], &bodies[c.body_b]);
        let dirs = [c.normal, t1, t2];
        let rows = dirs.map(|d| [a.row(&c.point, &d), b.row(&c.point, &d)]);
        let responses = rows.map(|[ga, gb]| [a.mobility * ga, b.mobility * gb]);
        let k = |i: usize| rows[i][0].dot(&responses[i][0]) + rows[i][1].dot(&responses[i][1]);
        let mut out = Self {
            body_a: c.body_a,
            body_b: c.body_b,
            point: c.point,
            normal: c.normal,
            tangents: [t1, t2],
            depth: c.depth,
            friction,
            restitution,
            slop,
            patch,
            face: c.face_index,
            rows,
            responses,
            normal_mass: inv(k(0)),
            tangent_mass: [inv(k(1)), inv(k(2))],
            normal_impulse: 0.0,
            tangent_impulse: [0.0; 2],
            relative_velocity0: 0.0,
            separation_after: -c.depth,
        };
        out.relative_velocity0 = out.relative_velocity(0, bodies);
        out
    }

    /// Velocity of b relative to a along direction `i`.
    pub fn relative_velocity(&self, i: usize, bodies: &[SolverBody]) -> f64 {
        self.rows[i][1].dot(&bodies[self.body_b].twist) - self.rows[i][0].dot(&bodies[self.body_a].twist)
    }

    fn apply(&self, i: usize, impulse: f64, bodies: &mut [SolverBody]) {
        bodies[self.body_a].twist -= self.responses[i][0] * impulse;
        bodies[self.body_b].twist += self.responses[i][1] * impulse;
    }

    /// Applies impulses carried over from an earlier solve.
    pub fn warm_start(&mut self, normal: f64, tangent: &Vec3, bodies: &mut [SolverBody]) {
        self.normal_impulse = normal.max(0.0);
        let mut t = [tangent.dot(&self.tangents[0]), tangent.dot(&self.tangents[1])];
        let limit = self.friction * self.normal_impulse;
        let norm = (t[0] * t[0] + t[1] * t[1]).sqrt();
        if norm > limit && norm > 0.0 {
            t = t.map(|v| v * limit / norm);
        }
        self.tangent_impulse = t;
        self.apply(0, self.normal_impulse, bodies);
        self.apply(1, t[0], bodies);
        self.apply(2, t[1], bodies);
    }

    /// Total impulse on body b (world frame); body a receives the negative.
    pub fn impulse(&self) -> Vec3 {
        self.normal * self.normal_impulse + self.tangents[0] * self.tangent_impulse[0] + self.tangents[1] * self.tangent_impulse[1]
    }

    /// Wrench impulse about each side's reference point, (a, b).
    pub fn wrench_impulses(&self) -> (Vector6<f64>, Vector6<f64>) {
        let l = [self.normal_impulse, self.tangent_impulse[0], self.tangent_impulse[1]];
        let mut wa = Vector6::zeros();
        let mut wb = Vector6::zeros();
        for i in 0..3 {
            wa -= self.rows[i][0] * l[i];
            wb += self.rows[i][1] * l[i];
        }
        (wa, wb)
    }

    fn solve_normal(&mut self, target: f64, bodies: &mut [SolverBody]) {
        let vn = self.relative_velocity(0, bodies);
        let new = (self.normal_impulse + self.normal_mass * (target - vn)).max(0.0);
        let delta = new - self.normal_impulse;
        self.normal_impulse = new;
        self.apply(0, delta, bodies);
    }

    fn solve_friction(&mut self, bodies: &mut [SolverBody]) {
        if self.friction <= 0.0 {
            return;
        }
        let vt = [self.relative_velocity(1, bodies), self.relative_velocity(2, bodies)];
        let mut t = [
            self.tangent_impulse[0] - self.tangent_mass[0] * vt[0],
            self.tangent_impulse[1] - self.tangent_mass[1] * vt[1],
        ];
        let limit = self.friction * self.normal_impulse;
        let norm = (t[0] * t[0] + t[1] * t[1]).sqrt();
        if norm > limit {
            let s = if norm > 0.0 { limit / norm } else { 0.0 };
            t = t.map(|v| v * s);
        }
        let d = [t[0] - self.tangent_impulse[0], t[1] - self.tangent_impulse[1]];
        self.tangent_impulse = t;
        self.apply(1, d[0], bodies);
        self.apply(2, d[1], bodies);
    }

    /// Records the separation after positions advanced by `h` with the current velocities.
    pub fn update_separation(&mut self, h: f64, bodies: &[SolverBody]) {
        self.separation_after = -self.depth + h * self.relative_velocity(0, bodies);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepPhase {
    /// Non-penetration with Baumgarte bias on penetration beyond the slop.
    Position { h: f64, bias_factor: f64, max_bias_velocity: f64 },
    /// Bias-free pass removing residual approach velocity; restitution for fast impacts.
    Velocity { h: f64, restitution_threshold: f64 },
}

/// One in-order Gauss-Seidel sweep: normal impulse with accumulated clamping, then the
/// friction disc of radius μ·λn.
pub fn solve_contact_sweep(constraints: &mut [ContactConstraint], bodies: &mut [SolverBody], phase: SweepPhase) {
    for c in constraints.iter_mut() {
        let target = match phase {
            SweepPhase::Position {
                h,
                bias_factor,
                max_bias_velocity,
            } => {
                if c.depth < 0.0 {
                    c.depth / h
                } else if c.depth > c.slop {
                    (bias_factor * (c.depth - c.slop) / h).min(max_bias_velocity)
                } else {
                    0.0
                }
            }
            SweepPhase::Velocity {
                h,
                restitution_threshold,
            } => {
                let mut t = if c.separation_after > 0.0 {
                    -c.separation_after / h
                } else {
                    0.0
                };
                if c.restitution > 0.0 && c.relative_velocity0 < -restitution_threshold && c.normal_impulse > 0.0 {
                    t = t.max(-c.restitution * c.relative_velocity0);
                }
                t
            }
        };
        c.solve_normal(target, bodies);
        c.solve_friction(bodies);
    }
}
