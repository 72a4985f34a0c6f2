use std::f64::consts::PI;

use contactsim::chain::{Chain, JointState};
use contactsim::control::*;
use contactsim::math::Pose;
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v6(rng: &mut ChaCha8Rng) -> Vector6<f64> {
    Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0))
}

fn dvec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

fn jac(chain: &Chain, q: &DVector<f64>) -> DMatrix<f64> {
    let j = chain.geometric_jacobian(q).unwrap();
    DMatrix::from_column_slice(6, chain.dof(), j.as_slice())
}

fn d6(v: &Vector6<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn random_gains(rng: &mut ChaCha8Rng, dim: usize) -> ControllerGains {
    let mut g = ControllerGains::uniform(dim, 0.0, 0.0);
    for i in 0..dim {
        g.kp[i] = rng.gen_range(0.0..50.0);
        g.kd[i] = rng.gen_range(0.0..5.0);
    }
    for k in g.kf.iter_mut() {
        *k = rng.gen_range(0.0..2.0);
    }
    g
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n)
}

/// First six joints of the 7-DOF arm with the same tool.
fn arm_6dof() -> Chain {
    let arm = Chain::arm_7dof();
    Chain::new(arm.base, arm.links[..6].to_vec(), arm.tool, arm.gravity).unwrap()
}

fn well_conditioned(chain: &Chain, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let q = DVector::from_fn(chain.dof(), |_, _| rng.gen_range(-1.5..1.5));
        let s = jac(chain, &q).singular_values();
        if s.min() > 0.05 {
            return q;
        }
    }
}

#[test]
fn zero_inputs_give_zero_torque() {
    let arm = Chain::arm_7dof();
    let q = DVector::from_element(7, 0.3);
    let j = jac(&arm, &q);
    let z6 = Vector6::zeros();
    let z7 = DVector::zeros(7);
    let mut g = ControllerGains::uniform(7, 30.0, 3.0);
    g.kf = [1.0; 6];
    let m = arm.mass_matrix(&q).unwrap();
    assert_eq!(joint_ik_control(&z7, &z7, &g).unwrap(), z7);
    assert_eq!(joint_id_control(&z7, &z7, &m, &z7, &g).unwrap(), z7);
    let g6 = ControllerGains { kp: vec![30.0; 6], kd: vec![3.0; 6], ..g.clone() };
    let lam = arm.task_space_inertia(&q, TASK_INERTIA_LAMBDA).unwrap();
    assert_eq!(task_impedance_control(&z6, &z6, &j, &g6).unwrap(), z7);
    assert_eq!(osc_motion_control(&z6, &z6, &j, &lam, &z6, &g6).unwrap(), z7);
    assert_eq!(open_loop_force(&z6, &j).unwrap(), z7);
    assert_eq!(closed_loop_force(&z6, &z6, &j, &g6).unwrap(), z7);
    let mut h = g6.clone();
    h.selection_force = [true; 6];
    assert_eq!(hybrid_force_motion(&z6, &z6, &z6, &z6, &j, &lam, &z6, &h).unwrap(), z7);
}

#[test]
fn every_controller_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = 7;
        let j = DMatrix::from_fn(6, n, |_, _| rng.gen_range(-1.0..1.0));
        let (qe, qd) = (dvec(&mut rng, n), dvec(&mut rng, n));
        let (xe, xd, ft, fc, gt) = (v6(&mut rng), v6(&mut rng), v6(&mut rng), v6(&mut rng), v6(&mut rng));
        let gj = random_gains(&mut rng, n);
        let mut gx = random_gains(&mut rng, 6);
        for i in 0..6 {
            gx.selection_motion[i] = rng.gen_bool(0.5);
            gx.selection_force[i] = rng.gen_bool(0.5);
        }
        let m = spd(&mut rng, n);
        let lam = spd(&mut rng, 6);
        let grav = dvec(&mut rng, n);
        let kp = DMatrix::from_diagonal(&DVector::from_vec(gj.kp.clone()));
        let kd = DMatrix::from_diagonal(&DVector::from_vec(gj.kd.clone()));
        let kpx = DMatrix::from_diagonal(&DVector::from_vec(gx.kp.clone()));
        let kdx = DMatrix::from_diagonal(&DVector::from_vec(gx.kd.clone()));
        let kf = DMatrix::from_diagonal(&DVector::from_column_slice(&gx.kf));
        let sel = |s: &[bool; 6]| DMatrix::from_diagonal(&DVector::from_fn(6, |i, _| if s[i] { 1.0 } else { 0.0 }));
        let (sm, sf) = (sel(&gx.selection_motion), sel(&gx.selection_force));
        let jt = j.transpose();
        let close = |a: DVector<f64>, b: DVector<f64>| assert!((&a - &b).amax() <= 1e-12 * (1.0 + b.amax()), "{a} vs {b}");

        close(joint_ik_control(&qe, &qd, &gj).unwrap(), &kp * &qe - &kd * &qd);
        close(joint_id_control(&qe, &qd, &m, &grav, &gj).unwrap(), &m * (&kp * &qe - &kd * &qd) + &grav);
        let pd = &kpx * d6(&xe) - &kdx * d6(&xd);
        close(task_impedance_control(&xe, &xd, &j, &gx).unwrap(), &jt * &pd);
        close(osc_motion_control(&xe, &xd, &j, &lam, &gt, &gx).unwrap(), &jt * (&lam * &pd + d6(&gt)));
        close(open_loop_force(&ft, &j).unwrap(), &jt * d6(&ft));
        let force = d6(&ft) + &kf * (d6(&ft) - d6(&fc));
        close(closed_loop_force(&ft, &fc, &j, &gx).unwrap(), &jt * &force);
        close(
            hybrid_force_motion(&xe, &xd, &ft, &fc, &j, &lam, &gt, &gx).unwrap(),
            &jt * (&sm * (&lam * &pd + d6(&gt)) + &sf * &force),
        );
    }
}

#[test]
fn torque_is_linear_in_gains() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let j = DMatrix::from_fn(6, 7, |_, _| rng.gen_range(-1.0..1.0));
    let (qe, qd) = (dvec(&mut rng, 7), dvec(&mut rng, 7));
    let (xe, xd, fc) = (v6(&mut rng), v6(&mut rng), v6(&mut rng));
    let (m, lam) = (spd(&mut rng, 7), spd(&mut rng, 6));
    let (z6, z7) = (Vector6::zeros(), DVector::zeros(7));
    let scale = |g: &ControllerGains, c: f64| {
        let mut g = g.clone();
        g.kp.iter_mut().for_each(|k| *k *= c);
        g.kd.iter_mut().for_each(|k| *k *= c);
        g.kf.iter_mut().for_each(|k| *k *= c);
        g
    };
    let mut gj = random_gains(&mut rng, 7);
    gj.kd.iter_mut().for_each(|k| *k = 0.0);
    let mut gx = random_gains(&mut rng, 6);
    gx.kd.iter_mut().for_each(|k| *k = 0.0);
    gx.selection_force = [true; 6];
    let eval = |gj: &ControllerGains, gx: &ControllerGains| {
        vec![
            joint_ik_control(&qe, &qd, gj).unwrap(),
            joint_id_control(&qe, &qd, &m, &z7, gj).unwrap(),
            task_impedance_control(&xe, &xd, &j, gx).unwrap(),
            osc_motion_control(&xe, &xd, &j, &lam, &z6, gx).unwrap(),
            closed_loop_force(&z6, &fc, &j, gx).unwrap(),
            hybrid_force_motion(&xe, &xd, &z6, &fc, &j, &lam, &z6, gx).unwrap(),
        ]
    };
    let base = eval(&gj, &gx);
    let doubled = eval(&scale(&gj, 2.0), &scale(&gx, 2.0));
    for (a, b) in base.iter().zip(&doubled) {
        assert!(a.amax() > 0.0);
        assert!((b - a * 2.0).amax() <= 1e-12 * a.amax());
    }
}

#[test]
fn joint_id_holds_against_gravity() {
    let arm = Chain::arm_7dof();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gains = ControllerGains::uniform(7, 100.0, 10.0);
    for _ in 0..20 {
        let q = dvec(&mut rng, 7) * 2.0;
        let m = arm.mass_matrix(&q).unwrap();
        let g = arm.gravity_torque(&q).unwrap();
        let z = DVector::zeros(7);
        let tau = joint_id_control(&z, &z, &m, &g, &gains).unwrap();
        assert_eq!(tau, g);
        let qdd = joint_acceleration(&arm, &q, &tau).unwrap();
        assert!(qdd.amax() <= 1e-6, "{qdd}");
        let tau = compute_torque(
            ControllerKind::JointId { ik: IkMethod::default() },
            &arm,
            &JointState { q: q.clone(), qd: z.clone() },
            &ControlTarget::PoseDelta { delta: [0.0; 6] },
            &gains,
        )
        .unwrap();
        assert!(joint_acceleration(&arm, &q, &tau).unwrap().amax() <= 1e-6);
    }
}

#[test]
fn joint_id_with_identity_mass_is_joint_ik_plus_gravity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_gains(&mut rng, 4);
    let (qe, qd, grav) = (dvec(&mut rng, 4), dvec(&mut rng, 4), dvec(&mut rng, 4));
    let a = joint_id_control(&qe, &qd, &DMatrix::identity(4, 4), &grav, &g).unwrap();
    let b = joint_ik_control(&qe, &qd, &g).unwrap() + &grav;
    assert!((a - b).amax() <= 1e-12);
}

#[test]
fn pseudoinverse_is_minimum_norm_for_redundant_arm() {
    let arm = Chain::arm_7dof();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let q = well_conditioned(&arm, &mut rng);
        let j = jac(&arm, &q);
        let e = d6(&v6(&mut rng));
        let dq = ik_delta(&j, &e, IkMethod::Pseudoinverse).unwrap();
        assert!((&j * &dq - &e).amax() <= 1e-9);
        let svd = j.clone().svd(true, true);
        let vt = svd.v_t.unwrap();
        // Rank 6 in a 7-dimensional joint space: the null space is the last row of Vᵀ
        // in the full decomposition, recovered as the orthogonal complement.
        let mut n = DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
        for r in 0..vt.nrows() {
            let row = vt.row(r).transpose();
            n -= &row * row.dot(&n);
        }
        n.normalize_mut();
        assert!((&j * &n).amax() <= 1e-9);
        assert!(dq.dot(&n).abs() <= 1e-9);
        for t in [-0.1, -1e-3, 1e-3, 0.1] {
            let other = &dq + &n * t;
            assert!((&j * &other - &e).amax() <= 1e-9);
            assert!(other.norm() > dq.norm());
        }
    }
}

#[test]
fn dls_converges_to_pseudoinverse() {
    let arm = arm_6dof();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let q = well_conditioned(&arm, &mut rng);
        let j = jac(&arm, &q);
        let e = d6(&v6(&mut rng));
        let exact = ik_delta(&j, &e, IkMethod::Pseudoinverse).unwrap();
        let gap = |lambda: f64| (ik_delta(&j, &e, IkMethod::Dls { lambda }).unwrap() - &exact).norm();
        let (g1, g2, g3) = (gap(1e-2), gap(1e-3), gap(1e-4));
        assert!(g3 < g2 && g2 < g1);
        // O(λ²): a tenfold smaller λ shrinks the gap about a hundredfold.
        assert!(g2 <= g1 / 50.0 && g3 <= g2 / 50.0, "{g1} {g2} {g3}");
        assert!(gap(0.0) <= 1e-9 * exact.norm());
    }
}

#[test]
fn transpose_and_adaptive_methods() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let j = DMatrix::from_fn(6, 7, |_, _| rng.gen_range(-1.0..1.0));
    let e = d6(&v6(&mut rng));
    assert_eq!(ik_delta(&j, &e, IkMethod::Transpose).unwrap(), j.transpose() * &e);
    let tiny = ik_delta(&j, &e, IkMethod::AdaptiveSvd { lambda_max: 1e-9 }).unwrap();
    let exact = ik_delta(&j, &e, IkMethod::Pseudoinverse).unwrap();
    assert!((tiny - exact).norm() <= 1e-6);

    let mut sing = DMatrix::<f64>::zeros(6, 6);
    for i in 0..6 {
        sing[(i, i)] = if i == 5 { 1e-9 } else { 1.0 };
    }
    let e = DVector::from_element(6, 1.0);
    assert!(matches!(ik_delta(&sing, &e, IkMethod::Pseudoinverse), Err(ControlError::Singular(_))));
    let out = ik_delta(&sing, &e, IkMethod::AdaptiveSvd { lambda_max: 0.05 }).unwrap();
    assert!(out.iter().all(|v| v.is_finite()));
    assert!(out[5].abs() <= 1.0 / (2.0 * 0.05) * 1.001);
    assert!((out[0] - 1.0).abs() <= 1e-12);
}

#[test]
fn osc_reduces_to_impedance_with_unit_inertia() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let j = DMatrix::from_fn(6, 7, |_, _| rng.gen_range(-1.0..1.0));
    let g = random_gains(&mut rng, 6);
    let (xe, xd) = (v6(&mut rng), v6(&mut rng));
    let a = osc_motion_control(&xe, &xd, &j, &DMatrix::identity(6, 6), &Vector6::zeros(), &g).unwrap();
    let b = task_impedance_control(&xe, &xd, &j, &g).unwrap();
    assert!((a - b).amax() <= 1e-12);
    let gt = v6(&mut rng);
    let z = Vector6::zeros();
    let only_g = osc_motion_control(&z, &z, &j, &DMatrix::identity(6, 6), &gt, &g).unwrap();
    assert!((only_g - j.transpose() * d6(&gt)).amax() <= 1e-12);
}

#[test]
fn osc_decouples_task_acceleration() {
    let arm = arm_6dof();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let gains = ControllerGains {
        kp: vec![40.0, 30.0, 20.0, 15.0, 10.0, 5.0],
        kd: vec![4.0, 3.0, 2.0, 1.5, 1.0, 0.5],
        ..ControllerGains::uniform(6, 0.0, 0.0)
    };
    for _ in 0..10 {
        let q = well_conditioned(&arm, &mut rng);
        let j = jac(&arm, &q);
        let qd = dvec(&mut rng, 6) * 0.2;
        let xd = Vector6::from_column_slice((&j * &qd).as_slice());
        let xe = v6(&mut rng) * 0.05;
        let lam = arm.task_space_inertia(&q, TASK_INERTIA_LAMBDA).unwrap();
        let gt = arm.task_gravity(&q, TASK_INERTIA_LAMBDA).unwrap();
        let tau = osc_motion_control(&xe, &xd, &j, &lam, &gt, &gains).unwrap();
        let xdd = &j * joint_acceleration(&arm, &q, &tau).unwrap();
        let want = DVector::from_fn(6, |i, _| gains.kp[i] * xe[i] - gains.kd[i] * xd[i]);
        assert!((&xdd - &want).norm() <= 0.02 * want.norm(), "{xdd} vs {want}");
    }
}

#[test]
fn planar_z_translation_impedance() {
    let chain = Chain::planar(&[1.0, 0.8], &[1.0, 1.0]).unwrap();
    let q = DVector::from_vec(vec![0.4, -0.7]);
    let j = jac(&chain, &q);
    let gains = ControllerGains::uniform(6, 25.0, 2.0);
    let d = 0.03;
    let xe = Vector6::new(0.0, 0.0, d, 0.0, 0.0, 0.0);
    let tau = task_impedance_control(&xe, &Vector6::zeros(), &j, &gains).unwrap();
    assert_eq!(tau, j.transpose() * d6(&Vector6::new(0.0, 0.0, 25.0 * d, 0.0, 0.0, 0.0)));
}

#[test]
fn pose_error_flavours() {
    let cur = Pose::from_parts(Vector3::new(0.1, 0.2, 0.3).into(), UnitQuaternion::from_euler_angles(0.2, 0.1, -0.4));
    let tgt = Pose::from_parts(cur.translation, UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI / 2.0) * cur.rotation);
    let e = pose_error(&cur, &tgt, JacobianFlavor::Geometric).unwrap();
    assert!((e - Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, PI / 2.0)).amax() <= 1e-12);

    let near_pi = Pose::from_parts(cur.translation, UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI - 1e-12));
    assert!(pose_error(&Pose::identity(), &near_pi, JacobianFlavor::Analytic).is_err());
    assert!(pose_error(&Pose::identity(), &near_pi, JacobianFlavor::Geometric).is_ok());
}

#[test]
fn force_controller_examples() {
    let chain = Chain::planar(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
    let j = jac(&chain, &DVector::zeros(2));
    let f = Vector6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
    let tau = open_loop_force(&f, &j).unwrap();
    assert!((tau - DVector::from_vec(vec![2.0, 1.0])).amax() <= 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let j = DMatrix::from_fn(6, 7, |_, _| rng.gen_range(-1.0..1.0));
    let (f1, f2) = (v6(&mut rng), v6(&mut rng));
    let (a, b) = (1.7, -0.6);
    let lhs = open_loop_force(&(f1 * a + f2 * b), &j).unwrap();
    let rhs = open_loop_force(&f1, &j).unwrap() * a + open_loop_force(&f2, &j).unwrap() * b;
    assert!((lhs - rhs).amax() <= 1e-12);

    let mut g = random_gains(&mut rng, 6);
    let open = open_loop_force(&f1, &j).unwrap();
    assert!((closed_loop_force(&f1, &f1, &j, &g).unwrap() - &open).amax() <= 1e-12);
    let fc = v6(&mut rng);
    let kf = g.kf;
    let out = closed_loop_force(&Vector6::zeros(), &fc, &j, &g).unwrap();
    let want = -(j.transpose() * d6(&Vector6::from_fn(|i, _| kf[i] * fc[i])));
    assert!((out - want).amax() <= 1e-12);
    g.kf = [0.0; 6];
    assert!((closed_loop_force(&f1, &fc, &j, &g).unwrap() - open).amax() <= 1e-12);
}

#[test]
fn hybrid_selection_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let j = DMatrix::from_fn(6, 7, |_, _| rng.gen_range(-1.0..1.0));
    let (xe, xd, ft, fc, gt) = (v6(&mut rng), v6(&mut rng), v6(&mut rng), v6(&mut rng), v6(&mut rng));
    let lam = spd(&mut rng, 6);
    let mut g = random_gains(&mut rng, 6);
    let osc = osc_motion_control(&xe, &xd, &j, &lam, &gt, &g).unwrap();
    let force = closed_loop_force(&ft, &fc, &j, &g).unwrap();
    let mut run = |m: bool, f: bool| {
        g.selection_motion = [m; 6];
        g.selection_force = [f; 6];
        hybrid_force_motion(&xe, &xd, &ft, &fc, &j, &lam, &gt, &g).unwrap()
    };
    assert!((run(true, false) - &osc).amax() <= 1e-12);
    assert!((run(false, true) - &force).amax() <= 1e-12);
    assert!((run(true, true) - (&osc + &force)).amax() <= 1e-12);
    assert_eq!(run(false, false), DVector::zeros(7));
}

proptest! {
    #[test]
    fn square_dls_without_damping_inverts(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(6, 6) * 3.0;
        let e = d6(&v6(&mut rng));
        let dq = ik_delta(&j, &e, IkMethod::Dls { lambda: 0.0 }).unwrap();
        let inv = j.clone().try_inverse().unwrap() * &e;
        prop_assert!((dq - inv).amax() <= 1e-10);
    }

    #[test]
    fn dls_bounded_by_half_inverse_damping(s in 1e-9f64..1e-3, lambda in 1e-3f64..0.1) {
        let mut j = DMatrix::<f64>::identity(6, 7);
        j[(5, 5)] = s;
        let e = DVector::from_element(6, 1.0).normalize();
        let dq = ik_delta(&j, &e, IkMethod::Dls { lambda }).unwrap();
        let worst = e.iter().take(5).map(|v| v * v).sum::<f64>().sqrt() + e[5] / (2.0 * lambda);
        prop_assert!(dq.norm() <= worst * (1.0 + 1e-9));
    }
}
