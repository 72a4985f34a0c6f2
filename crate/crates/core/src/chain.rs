//! Serial revolute/prismatic chains: kinematics, Jacobians, joint-space inertia and
//! gravity. Coriolis and centrifugal terms are not modelled.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6xX, Translation3, UnitQuaternion, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{skew, Pose, Pt3, Vec3};
use crate::mesh::MassProperties;

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("chain needs at least one joint")]
    Empty,
    #[error("joint {0} axis is not unit length")]
    BadAxis(usize),
    #[error("expected {expected} joint values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("orientation angle {0} is too close to pi for the axis-angle parametrisation")]
    Singular(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointType {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub joint: JointType,
    /// Joint axis in the joint frame.
    pub axis: Vec3,
    /// Parent link frame to joint frame at q = 0.
    pub origin: Pose,
    /// Link inertia in the link frame (the joint frame after the joint motion).
    pub mass_props: MassProperties,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub base: Pose,
    pub links: Vec<Link>,
    /// Last link frame to end-effector frame.
    pub tool: Pose,
    pub gravity: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl JointState {
    pub fn zeros(n: usize) -> Self {
        Self {
            q: DVector::zeros(n),
            qd: DVector::zeros(n),
        }
    }
}

/// End-effector pose and twist (linear; angular).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub pose: Pose,
    pub twist: Vector6<f64>,
}

/// World-frame quantities of one configuration.
struct Frames {
    links: Vec<Pose>,
    joint_points: Vec<Pt3>,
    joint_axes: Vec<Vec3>,
    ee: Pose,
}

/// Inverse of the left Jacobian of SO(3): maps world angular velocity to the rate of
/// the rotation vector `phi`.
pub fn so3_left_jacobian_inv(phi: &Vec3) -> Result<Matrix3<f64>, ChainError> {
    let theta = phi.norm();
    if theta > std::f64::consts::PI - 1e-6 {
        return Err(ChainError::Singular(theta));
    }
    let k = skew(phi);
    let c = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Ok(Matrix3::identity() - 0.5 * k + c * k * k)
}

impl Chain {
    pub fn new(base: Pose, links: Vec<Link>, tool: Pose, gravity: Vec3) -> Result<Self, ChainError> {
        if links.is_empty() {
            return Err(ChainError::Empty);
        }
        for (i, l) in links.iter().enumerate() {
            if (l.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(ChainError::BadAxis(i));
            }
        }
        Ok(Self {
            base,
            links,
            tool,
            gravity,
        })
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    fn check(&self, q: &DVector<f64>) -> Result<(), ChainError> {
        if q.len() != self.dof() {
            return Err(ChainError::Dimension {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    fn frames(&self, q: &DVector<f64>) -> Frames {
        let n = self.dof();
        let mut links = Vec::with_capacity(n);
        let mut joint_points = Vec::with_capacity(n);
        let mut joint_axes = Vec::with_capacity(n);
        let mut t = self.base;
        for (l, &qi) in self.links.iter().zip(q.iter()) {
            let j = t * l.origin;
            joint_points.push(Pt3::from(j.translation.vector));
            joint_axes.push(j.rotation * l.axis);
            let motion = match l.joint {
                JointType::Revolute => Pose::from_parts(
                    Translation3::identity(),
                    UnitQuaternion::from_scaled_axis(l.axis * qi),
                ),
                JointType::Prismatic => Pose::from_parts(Translation3::from(l.axis * qi), UnitQuaternion::identity()),
            };
            t = j * motion;
            links.push(t);
        }
        Frames {
            ee: t * self.tool,
            links,
            joint_points,
            joint_axes,
        }
    }

    /// World pose of every link frame.
    pub fn link_poses(&self, q: &DVector<f64>) -> Result<Vec<Pose>, ChainError> {
        self.check(q)?;
        Ok(self.frames(q).links)
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Pose, ChainError> {
        self.check(q)?;
        Ok(self.frames(q).ee)
    }

    pub fn task_state(&self, s: &JointState) -> Result<TaskState, ChainError> {
        let j = self.geometric_jacobian(&s.q)?;
        Ok(TaskState {
            pose: self.frames(&s.q).ee,
            twist: &j * &s.qd,
        })
    }

    fn jacobian_at(&self, f: &Frames, point: &Pt3, upto: usize) -> Matrix6xX<f64> {
        let mut jac = Matrix6xX::zeros(self.dof());
        for i in 0..upto {
            let a = f.joint_axes[i];
            let (lin, ang) = match self.links[i].joint {
                JointType::Revolute => (a.cross(&(point - f.joint_points[i])), a),
                JointType::Prismatic => (a, Vec3::zeros()),
            };
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&ang);
        }
        jac
    }

    /// World-frame geometric Jacobian of the end-effector origin, rows (linear; angular).
    pub fn geometric_jacobian(&self, q: &DVector<f64>) -> Result<Matrix6xX<f64>, ChainError> {
        self.check(q)?;
        let f = self.frames(q);
        let p = Pt3::from(f.ee.translation.vector);
        Ok(self.jacobian_at(&f, &p, self.dof()))
    }

    /// Jacobian whose angular rows give the rate of the end-effector rotation vector.
    pub fn analytic_jacobian(&self, q: &DVector<f64>) -> Result<Matrix6xX<f64>, ChainError> {
        let mut j = self.geometric_jacobian(q)?;
        let phi = self.frames(q).ee.rotation.scaled_axis();
        let e = so3_left_jacobian_inv(&phi)?;
        let ang = e * j.rows(3, 3);
        j.rows_mut(3, 3).copy_from(&ang);
        Ok(j)
    }

    /// World-frame inertia of each link (mass, COM, inertia about COM).
    fn world_inertias(&self, f: &Frames) -> Vec<MassProperties> {
        self.links
            .iter()
            .zip(&f.links)
            .map(|(l, t)| {
                let r = t.rotation.to_rotation_matrix();
                MassProperties::new(
                    l.mass_props.mass,
                    t * l.mass_props.center_of_mass,
                    r.matrix() * l.mass_props.inertia * r.matrix().transpose(),
                )
            })
            .collect()
    }

    /// Composite bodies: entry i lumps links i.. together.
    fn composites(&self, f: &Frames) -> Vec<Option<MassProperties>> {
        let parts = self.world_inertias(f);
        let mut out = vec![None; self.dof()];
        let mut acc: Option<MassProperties> = None;
        for i in (0..self.dof()).rev() {
            if parts[i].mass > 0.0 {
                acc = Some(match acc {
                    Some(a) => a.combine(&parts[i]),
                    None => parts[i],
                });
            }
            out[i] = acc;
        }
        out
    }

    /// Joint-space inertia by composite-rigid-body accumulation.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, ChainError> {
        self.check(q)?;
        let f = self.frames(q);
        let comp = self.composites(&f);
        let n = self.dof();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let Some(c) = comp[i] else { continue };
            let a = f.joint_axes[i];
            let p = f.joint_points[i];
            let lever = c.center_of_mass - p;
            // momentum of composite i under unit rate of joint i, moment taken about p_i
            let (force, moment) = match self.links[i].joint {
                JointType::Revolute => {
                    let fo = c.mass * a.cross(&lever);
                    (fo, c.inertia * a + lever.cross(&fo))
                }
                JointType::Prismatic => {
                    let fo = c.mass * a;
                    (fo, lever.cross(&fo))
                }
            };
            for j in 0..=i {
                let aj = f.joint_axes[j];
                let v = match self.links[j].joint {
                    JointType::Revolute => aj.dot(&(moment + (p - f.joint_points[j]).cross(&force))),
                    JointType::Prismatic => aj.dot(&force),
                };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    /// Gradient of gravitational potential energy; the torque needed to hold still.
    pub fn gravity_torque(&self, q: &DVector<f64>) -> Result<DVector<f64>, ChainError> {
        self.check(q)?;
        let f = self.frames(q);
        let comp = self.composites(&f);
        Ok(DVector::from_iterator(
            self.dof(),
            (0..self.dof()).map(|i| {
                let Some(c) = comp[i] else { return 0.0 };
                let a = f.joint_axes[i];
                let dc = match self.links[i].joint {
                    JointType::Revolute => a.cross(&(c.center_of_mass - f.joint_points[i])),
                    JointType::Prismatic => a,
                };
                -c.mass * self.gravity.dot(&dc)
            }),
        ))
    }

    pub fn potential_energy(&self, q: &DVector<f64>) -> Result<f64, ChainError> {
        self.check(q)?;
        let f = self.frames(q);
        Ok(self.world_inertias(&f).iter().map(|p| -p.mass * self.gravity.dot(&p.center_of_mass.coords)).sum())
    }

    /// Kinetic energy summed link by link from each link's own twist.
    pub fn kinetic_energy(&self, s: &JointState) -> Result<f64, ChainError> {
        self.check(&s.q)?;
        let f = self.frames(&s.q);
        let parts = self.world_inertias(&f);
        let mut ke = 0.0;
        for (k, p) in parts.iter().enumerate() {
            let j = self.jacobian_at(&f, &p.center_of_mass, k + 1);
            let tw = j * &s.qd;
            let v = tw.fixed_rows::<3>(0).into_owned();
            let w = tw.fixed_rows::<3>(3).into_owned();
            ke += 0.5 * p.mass * v.norm_squared() + 0.5 * w.dot(&(p.inertia * w));
        }
        Ok(ke)
    }

    /// Joint accelerations M⁻¹(τ − g) with velocity-product terms neglected.
    pub fn forward_dynamics(&self, q: &DVector<f64>, tau: &DVector<f64>) -> Result<DVector<f64>, ChainError> {
        let m = self.mass_matrix(q)?;
        let g = self.gravity_torque(q)?;
        Ok(solve_spd(&m, &(tau - g)))
    }

    /// Same chain with `extra` (given in the end-effector frame) rigidly added to the last link.
    pub fn with_payload(&self, extra: &MassProperties) -> Chain {
        let mut c = self.clone();
        let last = c.links.last_mut().expect("chain has links");
        let r = self.tool.rotation.to_rotation_matrix();
        let moved = MassProperties::new(
            extra.mass,
            self.tool * extra.center_of_mass,
            r.matrix() * extra.inertia * r.matrix().transpose(),
        );
        last.mass_props = if last.mass_props.mass > 0.0 {
            last.mass_props.combine(&moved)
        } else {
            moved
        };
        c
    }

    /// Planar arm in the xy plane: revolute joints about z, links of the given lengths
    /// along x, each a uniform rod of the given mass.
    pub fn planar(lengths: &[f64], masses: &[f64]) -> Result<Chain, ChainError> {
        let mut links = Vec::new();
        let mut prev = 0.0;
        for (&l, &m) in lengths.iter().zip(masses) {
            let rod = Matrix3::from_diagonal(&Vec3::new(0.0, m * l * l / 12.0, m * l * l / 12.0));
            links.push(Link {
                joint: JointType::Revolute,
                axis: Vec3::z(),
                origin: Pose::translation(prev, 0.0, 0.0),
                mass_props: MassProperties::new(m, Pt3::new(l / 2.0, 0.0, 0.0), rod),
            });
            prev = l;
        }
        Chain::new(Pose::identity(), links, Pose::translation(prev, 0.0, 0.0), Vec3::new(0.0, 0.0, -9.81))
    }

    /// Generic 7-DOF arm with alternating joint axes and roughly arm-like link masses;
    /// base at the origin, zero pose pointing up.
    pub fn arm_7dof() -> Chain {
        let spec: [(Vec3, [f64; 3], f64); 7] = [
            (Vec3::z(), [0.0, 0.0, 0.333], 4.0),
            (Vec3::y(), [0.0, 0.0, 0.0], 4.0),
            (Vec3::z(), [0.0, 0.0, 0.316], 3.0),
            (Vec3::y(), [0.0825, 0.0, 0.0], 3.0),
            (Vec3::z(), [-0.0825, 0.0, 0.384], 2.0),
            (Vec3::y(), [0.0, 0.0, 0.0], 1.5),
            (Vec3::z(), [0.088, 0.0, 0.0], 0.5),
        ];
        let links = spec
            .iter()
            .enumerate()
            .map(|(i, (axis, o, m))| {
                let com = Pt3::new(0.01 * (i as f64 % 3.0), -0.01, 0.04);
                let inertia = Matrix3::from_diagonal(&Vec3::new(0.02, 0.025, 0.015)) * *m / 3.0;
                Link {
                    joint: JointType::Revolute,
                    axis: *axis,
                    origin: Pose::translation(o[0], o[1], o[2]),
                    mass_props: MassProperties::new(*m, com, inertia),
                }
            })
            .collect();
        Chain::new(Pose::identity(), links, Pose::translation(0.0, 0.0, 0.107), Vec3::new(0.0, 0.0, -9.81))
            .expect("static arm description is valid")
    }
}

/// Solves `m x = rhs` for symmetric positive definite `m`, falling back to the
/// pseudo-inverse when the factorisation fails.
pub fn solve_spd<C: nalgebra::Dim>(
    m: &DMatrix<f64>,
    rhs: &nalgebra::OMatrix<f64, nalgebra::Dyn, C>,
) -> nalgebra::OMatrix<f64, nalgebra::Dyn, C>
where
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<nalgebra::Dyn, C>,
{
    match m.clone().cholesky() {
        Some(c) => c.solve(rhs),
        None => m.clone().pseudo_inverse(1e-12).expect("finite matrix") * rhs,
    }
}

/// Regularised task-space inertia (J M⁻¹ Jᵀ + λ²I)⁻¹ for any task dimension.
pub fn task_space_inertia_from(j: &DMatrix<f64>, m: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let minv_jt = solve_spd(m, &j.transpose());
    let mut a = j * minv_jt;
    for i in 0..a.nrows() {
        a[(i, i)] += lambda * lambda;
    }
    let inv = a.clone().try_inverse();
    inv.unwrap_or_else(|| a.pseudo_inverse(1e-12).expect("finite matrix"))
}

impl Chain {
    pub fn task_space_inertia(&self, q: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>, ChainError> {
        let j = self.geometric_jacobian(q)?;
        let j = DMatrix::from_column_slice(6, self.dof(), j.as_slice());
        Ok(task_space_inertia_from(&j, &self.mass_matrix(q)?, lambda))
    }

    /// Task-space gravity Λ J M⁻¹ g, so that Jᵀ applied to it compensates gravity
    /// along the dynamically consistent task directions.
    pub fn task_gravity(&self, q: &DVector<f64>, lambda: f64) -> Result<Vector6<f64>, ChainError> {
        let j = self.geometric_jacobian(q)?;
        let j = DMatrix::from_column_slice(6, self.dof(), j.as_slice());
        let m = self.mass_matrix(q)?;
        let g = self.gravity_torque(q)?;
        let lam = task_space_inertia_from(&j, &m, lambda);
        let minv_g = solve_spd(&m, &g);
        Ok(Vector6::from_column_slice((lam * (j * minv_g)).as_slice()))
    }
}
