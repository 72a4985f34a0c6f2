//! Joint-space, task-space, force and hybrid torque controllers plus differential IK.
//!
//! Every controller is a pure function of state, target and gains. Velocity-product
//! (Coriolis/centrifugal) terms are taken as zero throughout.

use nalgebra::{DMatrix, DVector, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{solve_spd, so3_left_jacobian_inv, Chain, ChainError, JointState};
use crate::math::Pose;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("jacobian is singular (smallest singular value {0:e})")]
    Singular(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("gains must be finite and non-negative")]
    BadGains,
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Below this singular value the plain pseudoinverse refuses to invert.
pub const SIGMA_MIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum IkMethod {
    Pseudoinverse,
    Transpose,
    Dls { lambda: f64 },
    AdaptiveSvd { lambda_max: f64 },
}

impl Default for IkMethod {
    fn default() -> Self {
        IkMethod::Dls { lambda: 0.05 }
    }
}

/// Joint displacement that realises the task-space `error` to first order.
pub fn ik_delta(j: &DMatrix<f64>, error: &DVector<f64>, method: IkMethod) -> Result<DVector<f64>, ControlError> {
    if j.nrows() != error.len() {
        return Err(ControlError::Dimension(format!(
            "jacobian has {} rows, error has {}",
            j.nrows(),
            error.len()
        )));
    }
    match method {
        IkMethod::Transpose => Ok(j.transpose() * error),
        IkMethod::Dls { lambda } => {
            let mut a = j * j.transpose();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * lambda;
            }
            let y = a
                .clone()
                .lu()
                .solve(error)
                .or_else(|| a.pseudo_inverse(1e-14).ok().map(|p| p * error))
                .ok_or(ControlError::Singular(0.0))?;
            Ok(j.transpose() * y)
        }
        IkMethod::Pseudoinverse => {
            let svd = j.clone().svd(true, true);
            let smin = svd.singular_values.min();
            if smin < SIGMA_MIN {
                return Err(ControlError::Singular(smin));
            }
            damped_svd_solve(&svd, error, |_| 0.0)
        }
        IkMethod::AdaptiveSvd { lambda_max } => {
            let svd = j.clone().svd(true, true);
            let s1 = svd.singular_values.max();
            damped_svd_solve(&svd, error, |s| {
                if s1 > 0.0 {
                    lambda_max * (1.0 - (s / s1).powi(2)).max(0.0)
                } else {
                    lambda_max
                }
            })
        }
    }
}

fn damped_svd_solve(
    svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    error: &DVector<f64>,
    damping: impl Fn(f64) -> f64,
) -> Result<DVector<f64>, ControlError> {
    let u = svd.u.as_ref().expect("svd computed with u");
    let vt = svd.v_t.as_ref().expect("svd computed with v_t");
    let mut coeffs = u.transpose() * error;
    for (c, &s) in coeffs.iter_mut().zip(svd.singular_values.iter()) {
        let l = damping(s);
        let d = s * s + l * l;
        *c = if d > 0.0 { *c * s / d } else { 0.0 };
    }
    Ok(vt.transpose() * coeffs)
}

/// Diagonal gains. `kp`/`kd` have joint dimension for joint-space controllers and
/// six entries for task-space ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    #[serde(default)]
    pub kf: [f64; 6],
    #[serde(default = "all_axes")]
    pub selection_motion: [bool; 6],
    #[serde(default)]
    pub selection_force: [bool; 6],
}

fn all_axes() -> [bool; 6] {
    [true; 6]
}

impl ControllerGains {
    pub fn uniform(dim: usize, kp: f64, kd: f64) -> Self {
        Self {
            kp: vec![kp; dim],
            kd: vec![kd; dim],
            kf: [0.0; 6],
            selection_motion: [true; 6],
            selection_force: [false; 6],
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let ok = |v: &f64| v.is_finite() && *v >= 0.0;
        if self.kp.iter().chain(&self.kd).chain(&self.kf).all(ok) {
            Ok(())
        } else {
            Err(ControlError::BadGains)
        }
    }

    fn check(&self, dim: usize) -> Result<(), ControlError> {
        self.validate()?;
        if self.kp.len() != dim || self.kd.len() != dim {
            return Err(ControlError::Dimension(format!(
                "gains have {}/{} entries, expected {dim}",
                self.kp.len(),
                self.kd.len()
            )));
        }
        Ok(())
    }

    /// kp∘e − kd∘v.
    fn pd(&self, e: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
        self.check(e.len())?;
        if v.len() != e.len() {
            return Err(ControlError::Dimension("velocity and error differ in length".into()));
        }
        Ok(DVector::from_fn(e.len(), |i, _| self.kp[i] * e[i] - self.kd[i] * v[i]))
    }
}

/// Task-space targets, all relative to the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlTarget {
    PoseDelta {
        delta: [f64; 6],
    },
    Wrench {
        target: [f64; 6],
        measured: [f64; 6],
    },
    Hybrid {
        delta: [f64; 6],
        target: [f64; 6],
        measured: [f64; 6],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianFlavor {
    Geometric,
    Analytic,
}

/// Pose difference target ⊖ current as (linear; angular). Geometric: axis-angle of the
/// rotation taking current to target; analytic: difference of rotation vectors.
pub fn pose_error(current: &Pose, target: &Pose, flavor: JacobianFlavor) -> Result<Vector6<f64>, ControlError> {
    let lin = target.translation.vector - current.translation.vector;
    let ang = match flavor {
        JacobianFlavor::Geometric => (target.rotation * current.rotation.inverse()).scaled_axis(),
        JacobianFlavor::Analytic => {
            let a = target.rotation.scaled_axis();
            let b = current.rotation.scaled_axis();
            so3_left_jacobian_inv(&a)?;
            so3_left_jacobian_inv(&b)?;
            a - b
        }
    };
    Ok(Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z))
}

fn dv6(v: &Vector6<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn check_jacobian(j: &DMatrix<f64>) -> Result<(), ControlError> {
    if j.nrows() != 6 {
        return Err(ControlError::Dimension(format!("jacobian must have 6 rows, has {}", j.nrows())));
    }
    Ok(())
}

/// τ = kp(q_t − q_c) − kd q̇_c.
pub fn joint_ik_control(q_err: &DVector<f64>, qd: &DVector<f64>, gains: &ControllerGains) -> Result<DVector<f64>, ControlError> {
    gains.pd(q_err, qd)
}

/// τ = M(kp(q_t − q_c) − kd q̇_c) + g.
pub fn joint_id_control(
    q_err: &DVector<f64>,
    qd: &DVector<f64>,
    m: &DMatrix<f64>,
    g: &DVector<f64>,
    gains: &ControllerGains,
) -> Result<DVector<f64>, ControlError> {
    Ok(m * gains.pd(q_err, qd)? + g)
}

/// τ = Jᵀ(kp(x_t ⊖ x_c) − kd ẋ_c).
pub fn task_impedance_control(
    x_err: &Vector6<f64>,
    xd: &Vector6<f64>,
    j: &DMatrix<f64>,
    gains: &ControllerGains,
) -> Result<DVector<f64>, ControlError> {
    check_jacobian(j)?;
    Ok(j.transpose() * gains.pd(&dv6(x_err), &dv6(xd))?)
}

fn osc_inner(
    x_err: &Vector6<f64>,
    xd: &Vector6<f64>,
    lambda: &DMatrix<f64>,
    g_task: &Vector6<f64>,
    gains: &ControllerGains,
) -> Result<DVector<f64>, ControlError> {
    Ok(lambda * gains.pd(&dv6(x_err), &dv6(xd))? + dv6(g_task))
}

/// τ = Jᵀ(Λ(kp(x_t ⊖ x_c) − kd ẋ_c) + g_task).
pub fn osc_motion_control(
    x_err: &Vector6<f64>,
    xd: &Vector6<f64>,
    j: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    g_task: &Vector6<f64>,
    gains: &ControllerGains,
) -> Result<DVector<f64>, ControlError> {
    check_jacobian(j)?;
    Ok(j.transpose() * osc_inner(x_err, xd, lambda, g_task, gains)?)
}

/// τ = Jᵀ F_t.
pub fn open_loop_force(f_target: &Vector6<f64>, j: &DMatrix<f64>) -> Result<DVector<f64>, ControlError> {
    check_jacobian(j)?;
    Ok(j.transpose() * dv6(f_target))
}

fn force_inner(f_target: &Vector6<f64>, f_measured: &Vector6<f64>, gains: &ControllerGains) -> DVector<f64> {
    DVector::from_fn(6, |i, _| f_target[i] + gains.kf[i] * (f_target[i] - f_measured[i]))
}

/// τ = Jᵀ(F_t + kf(F_t − F_c)).
pub fn closed_loop_force(
    f_target: &Vector6<f64>,
    f_measured: &Vector6<f64>,
    j: &DMatrix<f64>,
    gains: &ControllerGains,
) -> Result<DVector<f64>, ControlError> {
    check_jacobian(j)?;
    gains.validate()?;
    Ok(j.transpose() * force_inner(f_target, f_measured, gains))
}

/// τ = Jᵀ(S_m[Λ(kp e − kd ẋ) + g_task] + S_f[F_t + kf(F_t − F_c)]); the two selections
/// may overlap.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_force_motion(
    x_err: &Vector6<f64>,
    xd: &Vector6<f64>,
    f_target: &Vector6<f64>,
    f_measured: &Vector6<f64>,
    j: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    g_task: &Vector6<f64>,
    gains: &ControllerGains,
) -> Result<DVector<f64>, ControlError> {
    check_jacobian(j)?;
    let motion = osc_inner(x_err, xd, lambda, g_task, gains)?;
    let force = force_inner(f_target, f_measured, gains);
    let combined = DVector::from_fn(6, |i, _| {
        let m = if gains.selection_motion[i] { motion[i] } else { 0.0 };
        let f = if gains.selection_force[i] { force[i] } else { 0.0 };
        m + f
    });
    Ok(j.transpose() * combined)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControllerKind {
    JointIk {
        #[serde(default)]
        ik: IkMethod,
    },
    JointId {
        #[serde(default)]
        ik: IkMethod,
    },
    TaskImpedance {
        #[serde(default = "geometric")]
        flavor: JacobianFlavor,
    },
    Osc,
    OpenLoopForce,
    ClosedLoopForce,
    HybridForceMotion,
}

fn geometric() -> JacobianFlavor {
    JacobianFlavor::Geometric
}

/// Regularisation used for the task-space inertia inside the controllers.
pub const TASK_INERTIA_LAMBDA: f64 = 1e-3;

/// Evaluates `kind` for a chain in state `s`. Pose deltas are task errors as produced
/// by [`pose_error`]; wrench fields are (force; torque) at the end effector.
pub fn compute_torque(
    kind: ControllerKind,
    chain: &Chain,
    s: &JointState,
    target: &ControlTarget,
    gains: &ControllerGains,
) -> Result<DVector<f64>, ControlError> {
    let n = chain.dof();
    let jg = chain.geometric_jacobian(&s.q)?;
    let j = DMatrix::from_column_slice(6, n, jg.as_slice());
    let xd = Vector6::from_column_slice((&j * &s.qd).as_slice());
    let zero = [0.0; 6];
    let (delta, ft, fc) = match target {
        ControlTarget::PoseDelta { delta } => (*delta, zero, zero),
        ControlTarget::Wrench { target, measured } => (zero, *target, *measured),
        ControlTarget::Hybrid { delta, target, measured } => (*delta, *target, *measured),
    };
    let e = Vector6::from_column_slice(&delta);
    let ft = Vector6::from_column_slice(&ft);
    let fc = Vector6::from_column_slice(&fc);
    match kind {
        ControllerKind::JointIk { ik } => {
            let dq = ik_delta(&j, &dv6(&e), ik)?;
            joint_ik_control(&dq, &s.qd, gains)
        }
        ControllerKind::JointId { ik } => {
            let dq = ik_delta(&j, &dv6(&e), ik)?;
            joint_id_control(&dq, &s.qd, &chain.mass_matrix(&s.q)?, &chain.gravity_torque(&s.q)?, gains)
        }
        ControllerKind::TaskImpedance { flavor } => {
            let jj = match flavor {
                JacobianFlavor::Geometric => j,
                JacobianFlavor::Analytic => {
                    let ja = chain.analytic_jacobian(&s.q)?;
                    DMatrix::from_column_slice(6, n, ja.as_slice())
                }
            };
            let v = Vector6::from_column_slice((&jj * &s.qd).as_slice());
            task_impedance_control(&e, &v, &jj, gains)
        }
        ControllerKind::Osc => {
            let lam = chain.task_space_inertia(&s.q, TASK_INERTIA_LAMBDA)?;
            let g = chain.task_gravity(&s.q, TASK_INERTIA_LAMBDA)?;
            osc_motion_control(&e, &xd, &j, &lam, &g, gains)
        }
        ControllerKind::OpenLoopForce => open_loop_force(&ft, &j),
        ControllerKind::ClosedLoopForce => closed_loop_force(&ft, &fc, &j, gains),
        ControllerKind::HybridForceMotion => {
            let lam = chain.task_space_inertia(&s.q, TASK_INERTIA_LAMBDA)?;
            let g = chain.task_gravity(&s.q, TASK_INERTIA_LAMBDA)?;
            hybrid_force_motion(&e, &xd, &ft, &fc, &j, &lam, &g, gains)
        }
    }
}

/// Joint accelerations produced by `tau` (no velocity-product terms).
pub fn joint_acceleration(chain: &Chain, q: &DVector<f64>, tau: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
    let m = chain.mass_matrix(q)?;
    Ok(solve_spd(&m, &(tau - chain.gravity_torque(q)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Translation3, UnitQuaternion};
    use std::f64::consts::FRAC_PI_2;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn joint_ik_direct() {
        let g = ControllerGains::uniform(3, 10.0, 0.0);
        let t = joint_ik_control(&dv(&[1.0, 0.0, 0.0]), &dv(&[0.3, 0.2, 0.1]), &g).unwrap();
        assert_eq!(t, dv(&[10.0, 0.0, 0.0]));
        let g = ControllerGains::uniform(3, 10.0, 2.0);
        assert_eq!(joint_ik_control(&dv(&[0.0; 3]), &dv(&[0.0; 3]), &g).unwrap(), dv(&[0.0; 3]));
    }

    #[test]
    fn joint_id_is_gravity_at_rest_and_reduces_with_identity_mass() {
        let g = dv(&[1.0, -2.0]);
        let gains = ControllerGains::uniform(2, 5.0, 1.0);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_eq!(joint_id_control(&dv(&[0.0, 0.0]), &dv(&[0.0, 0.0]), &m, &g, &gains).unwrap(), g);
        let e = dv(&[0.2, -0.1]);
        let v = dv(&[0.5, 0.4]);
        let id = joint_id_control(&e, &v, &DMatrix::identity(2, 2), &g, &gains).unwrap();
        assert_eq!(id, joint_ik_control(&e, &v, &gains).unwrap() + g);
    }

    #[test]
    fn open_loop_planar_example() {
        let c = Chain::planar(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        let j = c.geometric_jacobian(&dv(&[0.0, 0.0])).unwrap();
        let j = DMatrix::from_column_slice(6, 2, j.as_slice());
        let t = open_loop_force(&Vector6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0), &j).unwrap();
        assert!((t - dv(&[2.0, 1.0])).amax() < 1e-15);
        assert_eq!(open_loop_force(&Vector6::zeros(), &j).unwrap(), dv(&[0.0, 0.0]));
    }

    #[test]
    fn geometric_error_of_quarter_turn() {
        let cur = Pose::identity();
        let tgt = Pose::from_parts(Translation3::identity(), UnitQuaternion::from_euler_angles(0.0, 0.0, FRAC_PI_2));
        let e = pose_error(&cur, &tgt, JacobianFlavor::Geometric).unwrap();
        assert!((e - Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2)).norm() < 1e-12);
        let near_pi = Pose::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::PI - 1e-9),
        );
        assert!(pose_error(&cur, &near_pi, JacobianFlavor::Analytic).is_err());
    }

    #[test]
    fn pseudoinverse_rejects_singular() {
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-9]);
        assert!(matches!(ik_delta(&j, &dv(&[1.0, 1.0]), IkMethod::Pseudoinverse), Err(ControlError::Singular(_))));
        assert!(ik_delta(&j, &dv(&[1.0, 1.0]), IkMethod::AdaptiveSvd { lambda_max: 0.05 }).is_ok());
    }

    #[test]
    fn dls_with_zero_damping_inverts_square_jacobian() {
        let j = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.3, 1.0, 0.2, 0.0, -0.4, 1.5]);
        let e = dv(&[0.3, -0.7, 1.1]);
        let dq = ik_delta(&j, &e, IkMethod::Dls { lambda: 0.0 }).unwrap();
        let exact = j.clone().try_inverse().unwrap() * &e;
        assert!((dq - exact).amax() < 1e-12);
    }

    #[test]
    fn dls_output_bounded_near_singularity() {
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-6]);
        let e = dv(&[0.0, 1.0]);
        let lambda = 0.01;
        let dq = ik_delta(&j, &e, IkMethod::Dls { lambda }).unwrap();
        assert!(dq.norm() <= e.norm() / (2.0 * lambda) * (1.0 + 1e-9));
    }

    #[test]
    fn gains_validated() {
        let mut g = ControllerGains::uniform(2, 1.0, 1.0);
        g.kd[1] = -1.0;
        assert_eq!(joint_ik_control(&dv(&[0.0, 0.0]), &dv(&[0.0, 0.0]), &g), Err(ControlError::BadGains));
        let g = ControllerGains::uniform(3, 1.0, 1.0);
        assert!(matches!(
            joint_ik_control(&dv(&[0.0, 0.0]), &dv(&[0.0, 0.0]), &g),
            Err(ControlError::Dimension(_))
        ));
    }
}
