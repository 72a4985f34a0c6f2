use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::Serialize;

use super::solver::{solve_contact_sweep, ContactConstraint, SolverBody, SweepPhase};
use super::{DynamicsError, RigidBody, SolverParams};
use crate::chain::{solve_spd, Chain, JointState};
use crate::contact::{
    assign_roles, generate_contacts, reduce_contacts, CollisionPairing, Contact, ContactPatch, GenerationParams,
    ReductionParams, RoleAssignment, RoleCandidate,
};
use crate::math::{Pose, Pt3, Vec3};
use crate::mesh::{broadphase_pairs, MassProperties, TriMesh};
use crate::sdf::{generate_sdf_cached, SdfResolutionSpec, SignedDistanceGrid};

/// Collision geometry in the body's mesh frame.
#[derive(Debug, Clone)]
pub struct Collider {
    pub mesh: Arc<TriMesh>,
    pub sdf: Option<Arc<SignedDistanceGrid>>,
    /// Speculative margin used when this body is the SDF side; defaults to two voxels.
    pub contact_distance: Option<f64>,
}

impl Collider {
    pub fn new(mesh: Arc<TriMesh>, sdf: Option<Arc<SignedDistanceGrid>>) -> Self {
        Self {
            mesh,
            sdf,
            contact_distance: None,
        }
    }

    fn margin(&self) -> f64 {
        match (&self.sdf, self.contact_distance) {
            (_, Some(d)) => d,
            (Some(g), None) => 2.0 * g.voxel_size(),
            (None, None) => 0.0,
        }
    }
}

/// Joint torques for an attached chain, queried once per substep. `measured` is the
/// contact wrench on the held body from the previous frame.
pub trait TorqueSource: Send {
    fn torque(&mut self, chain: &Chain, state: &JointState, measured: &Vector6<f64>, time: f64) -> Result<DVector<f64>, String>;
}

/// A body welded to a chain's end effector. The chain carries the body's inertia.
pub struct AttachedChain {
    pub chain: Chain,
    pub state: JointState,
    pub body: usize,
    /// End-effector frame to the body's mesh frame.
    pub ee_to_frame: Pose,
    pub controller: Option<Box<dyn TorqueSource>>,
    pub last_torque: DVector<f64>,
    /// Contact wrench on the body about the end effector, averaged over the last frame.
    pub contact_wrench: Vector6<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrameStats {
    pub frame: u64,
    pub contacts_before: usize,
    pub contacts_after: usize,
    pub patches: usize,
    pub contact_handling_time_s: f64,
    pub solve_time_s: f64,
    pub max_penetration: f64,
    /// Candidates deeper than slop + 2 voxels.
    pub penetration_violations: usize,
    /// Mean contact force magnitude on each body over the frame.
    pub body_forces: Vec<f64>,
}

/// Contacts of one body pair from the most recent substep.
#[derive(Debug, Clone)]
pub struct PairDebug {
    pub pairing: CollisionPairing,
    pub candidates: Vec<Contact>,
    pub patches: Vec<ContactPatch>,
}

struct PairContacts {
    patches: Vec<ContactPatch>,
    friction: f64,
    restitution: f64,
    slop: f64,
    /// Radius within which a previous contact's impulse seeds a new one.
    match_radius: f64,
}

pub struct World {
    pub bodies: Vec<RigidBody>,
    pub colliders: Vec<Option<Collider>>,
    pub attachments: Vec<AttachedChain>,
    pub gravity: Vec3,
    pub params: SolverParams,
    pub reduction: ReductionParams,
    pub generation: GenerationParams,
    pub exclusions: HashSet<(usize, usize)>,
    /// Keep candidates and patches of the last substep in `last_contacts`.
    pub capture_contacts: bool,
    pub last_contacts: Vec<PairDebug>,
    /// SDF resolution used when neither body of a pair has one.
    pub fallback_resolution: u32,
    pub time: f64,
    pub frame: u64,
    warm: HashMap<(usize, usize), Vec<WarmEntry>>,
}

/// Solved impulses of one contact, located in the mesh body's frame.
struct WarmEntry {
    local: Pt3,
    normal: f64,
    tangent: Vec3,
}

impl World {
    pub fn new(gravity: Vec3, params: SolverParams) -> Self {
        Self {
            bodies: Vec::new(),
            colliders: Vec::new(),
            attachments: Vec::new(),
            gravity,
            params,
            reduction: ReductionParams::default(),
            generation: GenerationParams::default(),
            exclusions: HashSet::new(),
            capture_contacts: false,
            last_contacts: Vec::new(),
            fallback_resolution: 64,
            time: 0.0,
            frame: 0,
            warm: HashMap::new(),
        }
    }

    pub fn add_body(&mut self, body: RigidBody, collider: Option<Collider>) -> usize {
        self.bodies.push(body);
        self.colliders.push(collider);
        self.bodies.len() - 1
    }

    pub fn exclude_pair(&mut self, a: usize, b: usize) {
        self.exclusions.insert((a.min(b), a.max(b)));
    }

    /// Welds `body` to the end effector of `chain` at `ee_to_frame`; the body's mass is
    /// folded into the last link and its pose follows the chain from now on.
    pub fn attach(
        &mut self,
        body: usize,
        chain: &Chain,
        state: JointState,
        ee_to_frame: Pose,
        controller: Option<Box<dyn TorqueSource>>,
    ) -> Result<usize, DynamicsError> {
        let b = self.bodies.get_mut(body).ok_or(DynamicsError::NoSuchBody(body))?;
        b.is_static = false;
        let mp = &b.mass_props;
        let r = ee_to_frame.rotation.to_rotation_matrix();
        let payload = MassProperties::new(
            mp.mass,
            ee_to_frame * mp.center_of_mass,
            r.matrix() * mp.inertia * r.matrix().transpose(),
        );
        let chain = chain.with_payload(&payload);
        let n = chain.dof();
        self.attachments.push(AttachedChain {
            chain,
            state,
            body,
            ee_to_frame,
            controller,
            last_torque: DVector::zeros(n),
            contact_wrench: Vector6::zeros(),
        });
        let idx = self.attachments.len() - 1;
        self.sync_attached(idx)?;
        Ok(idx)
    }

    fn sync_attached(&mut self, idx: usize) -> Result<(), DynamicsError> {
        let a = &self.attachments[idx];
        let ee = a.chain.forward_kinematics(&a.state.q)?;
        let j = a.chain.geometric_jacobian(&a.state.q)?;
        let twist = j * &a.state.qd;
        let body = &mut self.bodies[a.body];
        body.set_frame_pose(&(ee * a.ee_to_frame));
        let w = Vec3::new(twist[3], twist[4], twist[5]);
        let v_ee = Vec3::new(twist[0], twist[1], twist[2]);
        body.linear_velocity = v_ee + w.cross(&(body.position - Pt3::from(ee.translation.vector)));
        body.angular_velocity = w;
        Ok(())
    }

    fn attached_index(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.bodies.len()];
        for (i, a) in self.attachments.iter().enumerate() {
            out[a.body] = Some(i);
        }
        out
    }

    pub fn kinetic_energy(&self) -> f64 {
        let attached = self.attached_index();
        let bodies: f64 = self
            .bodies
            .iter()
            .zip(&attached)
            .filter(|(_, a)| a.is_none())
            .map(|(b, _)| b.kinetic_energy())
            .sum();
        let chains: f64 = self
            .attachments
            .iter()
            .map(|a| a.chain.kinetic_energy(&a.state).unwrap_or(f64::NAN))
            .sum();
        bodies + chains
    }

    pub fn potential_energy(&self) -> f64 {
        let attached = self.attached_index();
        let bodies: f64 = self
            .bodies
            .iter()
            .zip(&attached)
            .filter(|(_, a)| a.is_none())
            .map(|(b, _)| b.potential_energy(&self.gravity))
            .sum();
        let chains: f64 = self
            .attachments
            .iter()
            .map(|a| a.chain.potential_energy(&a.state.q).unwrap_or(f64::NAN))
            .sum();
        bodies + chains
    }

    pub fn total_energy(&self) -> f64 {
        self.kinetic_energy() + self.potential_energy()
    }

    pub fn linear_momentum(&self) -> Vec3 {
        self.bodies.iter().map(|b| b.momentum()).sum()
    }

    /// Advances one frame of `params.dt`.
    pub fn step(&mut self) -> Result<FrameStats, DynamicsError> {
        self.params.validate()?;
        let h = self.params.substep();
        let mut stats = FrameStats {
            frame: self.frame,
            body_forces: vec![0.0; self.bodies.len()],
            ..Default::default()
        };
        let mut impulses = vec![Vec3::zeros(); self.bodies.len()];
        let mut wrenches = vec![Vector6::zeros(); self.attachments.len()];
        for _ in 0..self.params.substeps {
            self.substep(h, &mut stats, &mut impulses, &mut wrenches)?;
        }
        let dt = self.params.dt;
        stats.body_forces = impulses.iter().map(|i| i.norm() / dt).collect();
        for (a, w) in self.attachments.iter_mut().zip(&wrenches) {
            a.contact_wrench = w / dt;
        }
        self.frame += 1;
        Ok(stats)
    }

    fn substep(
        &mut self,
        h: f64,
        stats: &mut FrameStats,
        impulses: &mut [Vec3],
        wrenches: &mut [Vector6<f64>],
    ) -> Result<(), DynamicsError> {
        let attached = self.attached_index();
        let gravity = self.gravity;
        for (b, a) in self.bodies.iter_mut().zip(&attached) {
            if a.is_none() {
                b.integrate_velocity(h, &gravity);
            }
        }
        let mut chain_data: Vec<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> = Vec::new();
        for a in self.attachments.iter_mut() {
            let n = a.chain.dof();
            let tau = match a.controller.as_mut() {
                Some(c) => c.torque(&a.chain, &a.state, &a.contact_wrench, self.time).map_err(DynamicsError::Controller)?,
                None => DVector::zeros(n),
            };
            if tau.len() != n {
                return Err(DynamicsError::Controller(format!("torque has {} entries, chain has {n}", tau.len())));
            }
            let m = a.chain.mass_matrix(&a.state.q)?;
            let g = a.chain.gravity_torque(&a.state.q)?;
            a.state.qd += solve_spd(&m, &(&tau - g)) * h;
            a.last_torque = tau;
            let j = a.chain.geometric_jacobian(&a.state.q)?;
            let j = DMatrix::from_column_slice(6, n, j.as_slice());
            chain_data.push((m, j, a.state.qd.clone()));
        }

        let t0 = Instant::now();
        let pairs = self.collide(stats)?;
        stats.contact_handling_time_s += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let mut sb: Vec<SolverBody> = self.bodies.iter().map(SolverBody::from_rigid).collect();
        for (a, (m, j, qd)) in self.attachments.iter().zip(&chain_data) {
            let ee = a.chain.forward_kinematics(&a.state.q)?;
            let minv_jt = solve_spd(m, &j.transpose());
            let k = j * minv_jt;
            sb[a.body] = SolverBody {
                twist: Vector6::from_column_slice((j * qd).as_slice()),
                mobility: Matrix6::from_column_slice(k.as_slice()),
                reference: Pt3::from(ee.translation.vector),
            };
        }
        let mut constraints = Vec::new();
        let mut locals = Vec::new();
        let mut patch_id = 0u32;
        for pc in &pairs {
            let mut used = vec![];
            for patch in &pc.patches {
                for c in &patch.contacts {
                    let mut cc = ContactConstraint::new(c, patch_id, pc.friction, pc.restitution, pc.slop, &sb);
                    let local = self.bodies[c.body_b].frame_pose().inverse() * c.point;
                    if self.params.warm_start {
                        if let Some(prev) = self.warm.get(&(c.body_a, c.body_b)) {
                            used.resize(prev.len(), false);
                            let best = prev
                                .iter()
                                .enumerate()
                                .filter(|(k, e)| !used[*k] && (e.local - local).norm() <= pc.match_radius)
                                .min_by(|x, y| (x.1.local - local).norm().total_cmp(&(y.1.local - local).norm()));
                            if let Some((k, e)) = best {
                                used[k] = true;
                                cc.warm_start(e.normal, &e.tangent, &mut sb);
                            }
                        }
                    }
                    constraints.push(cc);
                    locals.push(local);
                }
                patch_id += 1;
            }
        }

        let p = self.params;
        let pos = SweepPhase::Position {
            h,
            bias_factor: p.bias_factor,
            max_bias_velocity: p.max_bias_velocity,
        };
        for _ in 0..p.pos_iterations {
            solve_contact_sweep(&mut constraints, &mut sb, pos);
        }

        for (i, b) in self.bodies.iter_mut().enumerate() {
            if attached[i].is_none() && !b.is_static {
                b.linear_velocity = sb[i].linear();
                b.angular_velocity = sb[i].angular();
                b.integrate_position(h);
            }
        }
        for ai in 0..self.attachments.len() {
            let w = attached_wrench(&constraints, self.attachments[ai].body);
            let (m, j, qd0) = &chain_data[ai];
            let a = &mut self.attachments[ai];
            let qd = qd0 + solve_spd(m, &(j.transpose() * w));
            a.state.q += &qd * h;
            a.state.qd = qd;
            self.sync_attached(ai)?;
        }
        for c in constraints.iter_mut() {
            c.update_separation(h, &sb);
        }

        let vel = SweepPhase::Velocity {
            h,
            restitution_threshold: p.restitution_threshold,
        };
        for _ in 0..p.vel_iterations {
            solve_contact_sweep(&mut constraints, &mut sb, vel);
        }
        for (i, b) in self.bodies.iter_mut().enumerate() {
            if attached[i].is_none() && !b.is_static {
                b.linear_velocity = sb[i].linear();
                b.angular_velocity = sb[i].angular();
            }
        }
        for ai in 0..self.attachments.len() {
            let w = attached_wrench(&constraints, self.attachments[ai].body);
            wrenches[ai] += Vector6::from_column_slice(w.as_slice());
            let (m, j, qd0) = &chain_data[ai];
            self.attachments[ai].state.qd = qd0 + solve_spd(m, &(j.transpose() * w));
            self.sync_attached(ai)?;
        }

        self.warm.clear();
        for (c, local) in constraints.iter().zip(locals) {
            self.warm.entry((c.body_a, c.body_b)).or_default().push(WarmEntry {
                local,
                normal: c.normal_impulse,
                tangent: c.impulse() - c.normal * c.normal_impulse,
            });
            let imp = c.impulse();
            impulses[c.body_a] -= imp;
            impulses[c.body_b] += imp;
        }
        stats.solve_time_s += t1.elapsed().as_secs_f64();
        self.time += h;

        for (i, b) in self.bodies.iter().enumerate() {
            if !b.is_finite() {
                return Err(DynamicsError::NonFinite {
                    body: i,
                    what: "state",
                    time: self.time,
                });
            }
        }
        for a in &self.attachments {
            if !a.state.q.iter().chain(a.state.qd.iter()).all(|v| v.is_finite()) {
                return Err(DynamicsError::NonFinite {
                    body: a.body,
                    what: "joint state",
                    time: self.time,
                });
            }
        }
        Ok(())
    }

    fn collide(&mut self, stats: &mut FrameStats) -> Result<Vec<PairContacts>, DynamicsError> {
        stats.contacts_before = 0;
        stats.contacts_after = 0;
        stats.patches = 0;
        stats.max_penetration = 0.0;
        stats.penetration_violations = 0;
        self.last_contacts.clear();

        let attached = self.attached_index();
        let mut boxes = Vec::new();
        let mut margin: f64 = 0.0;
        for (i, c) in self.colliders.iter().enumerate() {
            if let Some(c) = c {
                boxes.push((c.mesh.aabb().transformed(&self.bodies[i].frame_pose()), i));
                margin = margin.max(c.margin());
            }
        }
        let moves = |i: usize| !self.bodies[i].is_static || attached[i].is_some();
        let pairs: Vec<(usize, usize)> = broadphase_pairs(&boxes, margin)
            .into_iter()
            .filter(|&(a, b)| (moves(a) || moves(b)) && !self.exclusions.contains(&(a.min(b), a.max(b))))
            .collect();

        let mut out = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let cand = |i: usize| {
                let c = self.colliders[i].as_ref().expect("broadphase only sees colliders");
                RoleCandidate {
                    id: i,
                    triangle_count: c.mesh.triangle_count(),
                    sdf: c.sdf.is_some(),
                }
            };
            let pairing = match assign_roles(cand(a), cand(b)) {
                RoleAssignment::Sdf(p) => p,
                RoleAssignment::ConvexFallback => {
                    let p = CollisionPairing::by_size(cand(a), cand(b));
                    let c = self.colliders[p.sdf_body].as_mut().expect("collider");
                    log::warn!("bodies {a} and {b} have no SDF; baking one for body {}", p.sdf_body);
                    c.sdf = Some(generate_sdf_cached(&c.mesh, &SdfResolutionSpec::new(self.fallback_resolution))?);
                    p
                }
            };
            let sdf_col = self.colliders[pairing.sdf_body].as_ref().expect("collider");
            let grid = sdf_col.sdf.as_ref().expect("sdf side has a grid");
            let mesh = &self.colliders[pairing.mesh_body].as_ref().expect("collider").mesh;
            let voxel = grid.voxel_size();
            let cd = sdf_col.contact_distance.unwrap_or(2.0 * voxel);
            let (sa, mb) = (&self.bodies[pairing.sdf_body], &self.bodies[pairing.mesh_body]);
            let candidates = generate_contacts(
                pairing,
                grid,
                &sa.frame_pose(),
                mesh,
                &mb.frame_pose(),
                cd,
                &self.generation,
            )?;
            let slop = self.params.penetration_slop.unwrap_or(0.5 * voxel);
            let bound = slop + 2.0 * voxel;
            stats.contacts_before += candidates.len();
            for c in &candidates {
                stats.max_penetration = stats.max_penetration.max(c.depth);
                if c.depth > bound {
                    stats.penetration_violations += 1;
                }
            }
            let params = ReductionParams {
                min_depth: -cd,
                depth_band: slop,
                ..self.reduction
            };
            let patches = reduce_contacts(&candidates, &params);
            stats.patches += patches.len();
            stats.contacts_after += patches.iter().map(|p| p.contacts.len()).sum::<usize>();
            let friction = (sa.friction * mb.friction).max(0.0).sqrt();
            let restitution = sa.restitution.max(mb.restitution);
            if self.capture_contacts {
                self.last_contacts.push(PairDebug {
                    pairing,
                    candidates,
                    patches: patches.clone(),
                });
            }
            out.push(PairContacts {
                patches,
                friction,
                restitution,
                slop,
                match_radius: 2.0 * voxel,
            });
        }
        Ok(out)
    }
}

fn attached_wrench(constraints: &[ContactConstraint], body: usize) -> DVector<f64> {
    let mut w = Vector6::zeros();
    for c in constraints {
        if c.body_a == body || c.body_b == body {
            let (wa, wb) = c.wrench_impulses();
            if c.body_a == body {
                w += wa;
            }
            if c.body_b == body {
                w += wb;
            }
        }
    }
    DVector::from_column_slice(w.as_slice())
}
