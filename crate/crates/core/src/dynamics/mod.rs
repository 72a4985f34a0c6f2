//! Rigid-body state, semi-implicit integration and the substepping sequential-impulse
//! contact solver.

mod solver;
mod world;

use nalgebra::{Matrix3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::ChainError;
use crate::contact::ContactError;
use crate::math::{Pose, Pt3, Vec3};
use crate::mesh::MassProperties;
use crate::sdf::SdfError;

pub use solver::{solve_contact_sweep, ContactConstraint, SolverBody, SweepPhase};
pub use world::{AttachedChain, Collider, FrameStats, PairDebug, TorqueSource, World};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("body {body} has non-finite {what} at t = {time:.6} s")]
    NonFinite { body: usize, what: &'static str, time: f64 },
    #[error("invalid solver parameters: {0}")]
    BadParams(String),
    #[error("body index {0} out of range")]
    NoSuchBody(usize),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Sdf(#[from] SdfError),
    #[error("controller failed: {0}")]
    Controller(String),
}

/// 6-DOF body. `position` is the centre of mass in world coordinates; the mesh frame
/// sits at `position − R·com_local`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBody {
    pub position: Pt3,
    pub orientation: UnitQuaternion<f64>,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    pub mass_props: MassProperties,
    pub is_static: bool,
    pub friction: f64,
    pub restitution: f64,
}

impl RigidBody {
    /// Dynamic body whose mesh frame is placed at `frame`.
    pub fn new(mass_props: MassProperties, frame: Pose) -> Self {
        Self {
            position: frame * mass_props.center_of_mass,
            orientation: frame.rotation,
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            mass_props,
            is_static: false,
            friction: 0.5,
            restitution: 0.0,
        }
    }

    pub fn fixed(frame: Pose) -> Self {
        Self {
            is_static: true,
            ..Self::new(MassProperties::point(0.0, Pt3::origin()), frame)
        }
    }

    pub fn with_material(mut self, friction: f64, restitution: f64) -> Self {
        self.friction = friction;
        self.restitution = restitution;
        self
    }

    pub fn frame_pose(&self) -> Pose {
        let t = self.position - self.orientation * self.mass_props.center_of_mass.coords;
        Pose::from_parts(t.coords.into(), self.orientation)
    }

    pub fn set_frame_pose(&mut self, frame: &Pose) {
        self.position = frame * self.mass_props.center_of_mass;
        self.orientation = frame.rotation;
    }

    pub fn inverse_mass(&self) -> f64 {
        if self.is_static || self.mass_props.mass <= 0.0 {
            0.0
        } else {
            1.0 / self.mass_props.mass
        }
    }

    pub fn inverse_inertia_world(&self) -> Matrix3<f64> {
        if self.is_static {
            return Matrix3::zeros();
        }
        let r = self.orientation.to_rotation_matrix();
        let inv = self.mass_props.inertia.try_inverse().unwrap_or_else(Matrix3::zeros);
        r.matrix() * inv * r.matrix().transpose()
    }

    pub fn inertia_world(&self) -> Matrix3<f64> {
        let r = self.orientation.to_rotation_matrix();
        r.matrix() * self.mass_props.inertia * r.matrix().transpose()
    }

    pub fn kinetic_energy(&self) -> f64 {
        if self.is_static {
            return 0.0;
        }
        0.5 * self.mass_props.mass * self.linear_velocity.norm_squared()
            + 0.5 * self.angular_velocity.dot(&(self.inertia_world() * self.angular_velocity))
    }

    pub fn potential_energy(&self, gravity: &Vec3) -> f64 {
        if self.is_static {
            0.0
        } else {
            -self.mass_props.mass * gravity.dot(&self.position.coords)
        }
    }

    pub fn momentum(&self) -> Vec3 {
        if self.is_static {
            Vec3::zeros()
        } else {
            self.linear_velocity * self.mass_props.mass
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }

    pub(crate) fn integrate_velocity(&mut self, h: f64, gravity: &Vec3) {
        if !self.is_static {
            self.linear_velocity += gravity * h;
        }
    }

    pub(crate) fn integrate_position(&mut self, h: f64) {
        if self.is_static {
            return;
        }
        self.position += self.linear_velocity * h;
        let dq = UnitQuaternion::from_scaled_axis(self.angular_velocity * h);
        self.orientation = UnitQuaternion::new_normalize((dq * self.orientation).into_inner());
    }
}

/// One unconstrained semi-implicit Euler step: velocity first, then position.
pub fn integrate(body: &RigidBody, dt: f64, gravity: &Vec3) -> Result<RigidBody, DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::BadParams(format!("dt must be positive, got {dt}")));
    }
    let mut b = body.clone();
    b.integrate_velocity(dt, gravity);
    b.integrate_position(dt);
    if !b.is_finite() {
        return Err(DynamicsError::NonFinite {
            body: 0,
            what: "state",
            time: dt,
        });
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub dt: f64,
    pub substeps: u32,
    pub pos_iterations: u32,
    pub vel_iterations: u32,
    /// Penetration left uncorrected by the bias; `None` means half a voxel of the
    /// pair's SDF.
    pub penetration_slop: Option<f64>,
    pub bias_factor: f64,
    /// Approach speeds below this bounce with restitution 0.
    pub restitution_threshold: f64,
    /// Cap on the separation speed introduced by the bias.
    pub max_bias_velocity: f64,
    /// Seed impulses from the nearest contact of the previous substep.
    pub warm_start: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            dt: 1.0 / 60.0,
            substeps: 1,
            pos_iterations: 16,
            vel_iterations: 1,
            penetration_slop: None,
            bias_factor: 0.2,
            restitution_threshold: 0.5,
            max_bias_velocity: 1.0,
            warm_start: true,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: &str| Err(DynamicsError::BadParams(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.substeps < 1 {
            return bad("substeps must be at least 1");
        }
        if self.pos_iterations < 1 {
            return bad("pos_iterations must be at least 1");
        }
        if let Some(s) = self.penetration_slop {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("penetration_slop must be non-negative");
            }
        }
        if !(0.0..=1.0).contains(&self.bias_factor) {
            return bad("bias_factor must lie in [0, 1]");
        }
        if !(self.restitution_threshold >= 0.0 && self.max_bias_velocity > 0.0) {
            return bad("restitution_threshold and max_bias_velocity must be non-negative");
        }
        Ok(())
    }

    pub fn substep(&self) -> f64 {
        self.dt / self.substeps as f64
    }
}
