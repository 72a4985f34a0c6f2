//! JSON scene files, builtin benchmark scenes and the instance runner.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DVector, Matrix3, Translation3, UnitQuaternion, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Chain, ChainError, JointState, JointType, Link};
use crate::contact::{write_pointcloud, ReductionParams};
use crate::control::{compute_torque, pose_error, ControlTarget, ControllerGains, ControllerKind, JacobianFlavor};
use crate::dynamics::{Collider, DynamicsError, FrameStats, RigidBody, SolverParams, TorqueSource, World};
use crate::math::{Pose, Pt3, Vec3};
use crate::mesh::thread::Fit;
use crate::mesh::{
    generate_iso_thread, generate_peg_hole, load_obj, mass_properties, primitives, MassProperties, MeshError, ThreadKind,
    ThreadSpec, TriMesh,
};
use crate::sdf::{generate_sdf_cached, SdfError, SdfResolutionSpec, SignedDistanceGrid};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("config key `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("mesh file {}: {source}", path.display())]
    MeshFile { path: PathBuf, source: std::io::Error },
    #[error("unknown builtin scene `{0}` (known: {known})", known = BUILTIN_SCENES.join(", "))]
    UnknownScene(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Sdf(#[from] SdfError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("instance {instance}: {source}")]
    Dynamics { instance: usize, source: DynamicsError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub const BUILTIN_SCENES: &[&str] = &[
    "peg_in_hole",
    "nut_and_bolt",
    "nut_pile",
    "torus_pile",
    "screw_track",
    "box_stack",
    "box_drop",
];

/// Frame placement: translation plus a rotation vector (axis times angle, rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseConfig {
    pub position: [f64; 3],
    pub rotation: [f64; 3],
}

impl PoseConfig {
    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self {
            position: [x, y, z],
            rotation: [0.0; 3],
        }
    }

    pub fn to_pose(&self) -> Pose {
        let [x, y, z] = self.position;
        Pose::from_parts(
            Translation3::new(x, y, z),
            UnitQuaternion::from_scaled_axis(Vec3::from(self.rotation)),
        )
    }

    pub fn from_pose(p: &Pose) -> Self {
        Self {
            position: p.translation.vector.into(),
            rotation: p.rotation.scaled_axis().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeshSource {
    /// Wavefront OBJ, relative paths resolved against the config file's directory.
    Obj { path: PathBuf },
    Box {
        extents: [f64; 3],
        #[serde(default = "one")]
        subdivisions: usize,
    },
    Sphere {
        radius: f64,
        #[serde(default = "three")]
        subdivisions: usize,
    },
    Torus {
        major_radius: f64,
        minor_radius: f64,
        #[serde(default = "thirty_two")]
        major_segments: usize,
        #[serde(default = "thirty_two")]
        minor_segments: usize,
    },
    Cylinder {
        radius: f64,
        height: f64,
        #[serde(default = "sixty_four")]
        segments: usize,
    },
    Thread(ThreadSpec),
    Peg {
        diameter: f64,
        clearance: f64,
        length: f64,
        #[serde(default = "sixty_four")]
        segments: usize,
    },
    Hole {
        diameter: f64,
        clearance: f64,
        length: f64,
        #[serde(default = "sixty_four")]
        segments: usize,
    },
}

fn one() -> usize {
    1
}
fn three() -> usize {
    3
}
fn thirty_two() -> usize {
    32
}
fn sixty_four() -> usize {
    64
}

impl MeshSource {
    pub fn build(&self, base_dir: &Path) -> Result<TriMesh, SceneError> {
        Ok(match self {
            MeshSource::Obj { path } => {
                let path = base_dir.join(path);
                let text = fs::read_to_string(&path).map_err(|source| SceneError::MeshFile { path, source })?;
                load_obj(&text)?
            }
            MeshSource::Box { extents, subdivisions } => primitives::box_mesh(Vec3::from(*extents), *subdivisions),
            MeshSource::Sphere { radius, subdivisions } => primitives::icosphere(*radius, *subdivisions),
            MeshSource::Torus {
                major_radius,
                minor_radius,
                major_segments,
                minor_segments,
            } => primitives::torus(*major_radius, *minor_radius, *major_segments, *minor_segments),
            MeshSource::Cylinder { radius, height, segments } => primitives::cylinder(*radius, *height, *segments),
            MeshSource::Thread(spec) => generate_iso_thread(spec)?,
            MeshSource::Peg {
                diameter,
                clearance,
                length,
                segments,
            } => generate_peg_hole(*diameter, *clearance, *length, *segments)?.0,
            MeshSource::Hole {
                diameter,
                clearance,
                length,
                segments,
            } => generate_peg_hole(*diameter, *clearance, *length, *segments)?.1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfConfig {
    pub resolution: u32,
    /// Speculative contact margin when this body is the SDF side (m); two voxels if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyConfig {
    pub name: String,
    pub mesh: MeshSource,
    #[serde(default)]
    pub pose: PoseConfig,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_friction")]
    pub friction: f64,
    #[serde(default)]
    pub restitution: f64,
    #[serde(default)]
    pub fixed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdf: Option<SdfConfig>,
    #[serde(default)]
    pub linear_velocity: [f64; 3],
    #[serde(default)]
    pub angular_velocity: [f64; 3],
}

fn default_density() -> f64 {
    1000.0
}
fn default_friction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub joint: JointType,
    pub axis: [f64; 3],
    #[serde(default)]
    pub origin: PoseConfig,
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    /// Principal moments about the centre of mass, in the link frame.
    pub inertia: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChainModel {
    #[serde(rename = "arm_7dof")]
    Arm7Dof,
    Planar { lengths: Vec<f64>, masses: Vec<f64> },
    Links {
        links: Vec<LinkConfig>,
        #[serde(default)]
        tool: PoseConfig,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MotionPath {
    /// Keep the initial end-effector pose.
    #[default]
    Hold,
    /// Turn about a world axis through the initial end-effector point at `rate` rad/s
    /// while advancing `pitch` metres per revolution along it.
    Helix { axis: [f64; 3], rate: f64, pitch: f64 },
}

impl MotionPath {
    fn pose_at(&self, start: &Pose, t: f64) -> Pose {
        match *self {
            MotionPath::Hold => *start,
            MotionPath::Helix { axis, rate, pitch } => {
                let axis = Vec3::from(axis).normalize();
                let angle = rate * t;
                let spin = UnitQuaternion::from_scaled_axis(axis * angle);
                let shift = axis * (pitch * angle / std::f64::consts::TAU);
                Pose::from_parts(Translation3::from(start.translation.vector + shift), spin * start.rotation)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub gains: ControllerGains,
    #[serde(default)]
    pub path: MotionPath,
    /// Target end-effector wrench (force; torque) for the force controllers.
    #[serde(default)]
    pub wrench: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachConfig {
    pub body: String,
    /// End-effector frame to the body's mesh frame; when absent the body keeps its
    /// configured pose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ee_to_frame: Option<PoseConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub model: ChainModel,
    #[serde(default)]
    pub base: PoseConfig,
    #[serde(default)]
    pub q0: Vec<f64>,
    pub attach: AttachConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
}

impl ChainConfig {
    pub fn build(&self, gravity: Vec3) -> Result<Chain, SceneError> {
        let mut chain = match &self.model {
            ChainModel::Arm7Dof => Chain::arm_7dof(),
            ChainModel::Planar { lengths, masses } => {
                if lengths.len() != masses.len() {
                    return Err(SceneError::Invalid("planar chain needs one mass per length".into()));
                }
                Chain::planar(lengths, masses)?
            }
            ChainModel::Links { links, tool } => {
                let links = links
                    .iter()
                    .map(|l| Link {
                        joint: l.joint,
                        axis: Vec3::from(l.axis).normalize(),
                        origin: l.origin.to_pose(),
                        mass_props: MassProperties::new(l.mass, Pt3::from(l.com), Matrix3::from_diagonal(&Vec3::from(l.inertia))),
                    })
                    .collect();
                Chain::new(Pose::identity(), links, tool.to_pose(), gravity)?
            }
        };
        chain.base = self.base.to_pose();
        chain.gravity = gravity;
        Ok(chain)
    }

    fn q0(&self, dof: usize) -> Result<DVector<f64>, SceneError> {
        match self.q0.len() {
            0 => Ok(DVector::zeros(dof)),
            n if n == dof => Ok(DVector::from_column_slice(&self.q0)),
            n => Err(SceneError::Invalid(format!("q0 has {n} entries, chain has {dof} joints"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionConfig {
    pub max_patches: usize,
    pub per_patch_cap: usize,
    /// Half-angle of the normal cone that groups contacts into a patch (degrees).
    pub normal_cone_deg: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        let d = ReductionParams::default();
        Self {
            max_patches: d.max_patches,
            per_patch_cap: d.per_patch_cap,
            normal_cone_deg: d.normal_cone_cos.acos().to_degrees(),
        }
    }
}

/// Seeded perturbation of every free body's initial pose, drawn per instance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Jitter {
    pub position: f64,
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pointcloud_dir: Option<PathBuf>,
    /// Dump contacts every this many frames; 0 disables.
    pub dump_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frames")]
    pub frames: u64,
    #[serde(default = "one")]
    pub instances: usize,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default)]
    pub jitter: Jitter,
    #[serde(default)]
    pub bodies: Vec<BodyConfig>,
    #[serde(default)]
    pub chains: Vec<ChainConfig>,
    /// Body name pairs that never collide.
    #[serde(default)]
    pub exclusions: Vec<[String; 2]>,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_frames() -> u64 {
    600
}
fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

impl Default for SceneConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| SceneError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn body_index(&self, name: &str) -> Result<usize, SceneError> {
        self.bodies
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| SceneError::Invalid(format!("no body named `{name}`")))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        self.solver.validate().map_err(|e| SceneError::Invalid(e.to_string()))?;
        if self.instances == 0 {
            return bad("instances must be at least 1".into());
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return bad("gravity must be finite".into());
        }
        if self.reduction.max_patches == 0 || self.reduction.per_patch_cap == 0 {
            return bad("reduction limits must be positive".into());
        }
        let mut seen = HashMap::new();
        for (i, b) in self.bodies.iter().enumerate() {
            if seen.insert(b.name.as_str(), i).is_some() {
                return bad(format!("duplicate body name `{}`", b.name));
            }
            if !(b.density > 0.0 && b.friction >= 0.0 && (0.0..=1.0).contains(&b.restitution)) {
                return bad(format!("body `{}` needs density > 0, friction ≥ 0, restitution in [0, 1]", b.name));
            }
            if let Some(s) = b.sdf {
                if s.resolution < 16 || s.contact_distance.is_some_and(|d| !(d >= 0.0)) {
                    return bad(format!("body `{}` has an unusable sdf block", b.name));
                }
            }
            if let MeshSource::Obj { path } = &b.mesh {
                let full = self.base_dir.join(path);
                if !full.is_file() {
                    return Err(SceneError::MeshFile {
                        path: full,
                        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                    });
                }
            }
        }
        for [a, b] in &self.exclusions {
            self.body_index(a)?;
            self.body_index(b)?;
        }
        let mut held = Vec::new();
        for c in &self.chains {
            let body = self.body_index(&c.attach.body)?;
            if held.contains(&body) {
                return bad(format!("body `{}` is held by two chains", c.attach.body));
            }
            held.push(body);
            let chain = c.build(Vec3::from(self.gravity))?;
            c.q0(chain.dof())?;
            if let Some(ctrl) = &c.controller {
                let dim = match ctrl.kind {
                    ControllerKind::JointIk { .. } | ControllerKind::JointId { .. } => chain.dof(),
                    _ => 6,
                };
                ctrl.gains.validate().map_err(|e| SceneError::Invalid(e.to_string()))?;
                if ctrl.gains.kp.len() != dim || ctrl.gains.kd.len() != dim {
                    return bad(format!("controller gains for `{}` need {dim} entries", c.attach.body));
                }
            }
        }
        Ok(())
    }
}

/// Meshes, grids and mass properties shared by every instance.
struct Prepared {
    meshes: Vec<Arc<TriMesh>>,
    sdfs: Vec<Option<Arc<SignedDistanceGrid>>>,
    mass: Vec<MassProperties>,
}

fn prepare(cfg: &SceneConfig) -> Result<Prepared, SceneError> {
    let mut p = Prepared {
        meshes: Vec::new(),
        sdfs: Vec::new(),
        mass: Vec::new(),
    };
    let mut by_source: HashMap<String, usize> = HashMap::new();
    for b in &cfg.bodies {
        let key = serde_json::to_string(&b.mesh).expect("mesh source serializes");
        let mesh = match by_source.get(&key) {
            Some(&i) => p.meshes[i].clone(),
            None => {
                let m = Arc::new(b.mesh.build(&cfg.base_dir)?);
                by_source.insert(key, p.meshes.len());
                m
            }
        };
        let sdf = match b.sdf {
            Some(s) => Some(generate_sdf_cached(&mesh, &SdfResolutionSpec::new(s.resolution))?),
            None => None,
        };
        let mass = if b.fixed {
            MassProperties::point(0.0, Pt3::origin())
        } else {
            mass_properties(&mesh, b.density)?
        };
        p.meshes.push(mesh);
        p.sdfs.push(sdf);
        p.mass.push(mass);
    }
    Ok(p)
}

/// Drives an attached chain along a [`MotionPath`] with one of the controllers.
struct ScriptedController {
    config: ControllerConfig,
    start: Option<Pose>,
}

impl TorqueSource for ScriptedController {
    fn torque(&mut self, chain: &Chain, state: &JointState, measured: &Vector6<f64>, time: f64) -> Result<DVector<f64>, String> {
        let ee = chain.forward_kinematics(&state.q).map_err(|e| e.to_string())?;
        let start = *self.start.get_or_insert(ee);
        let target = self.config.path.pose_at(&start, time);
        let flavor = match self.config.kind {
            ControllerKind::TaskImpedance { flavor } => flavor,
            _ => JacobianFlavor::Geometric,
        };
        let delta = pose_error(&ee, &target, flavor).map_err(|e| e.to_string())?;
        let t = ControlTarget::Hybrid {
            delta: delta.into(),
            target: self.config.wrench,
            measured: (*measured).into(),
        };
        compute_torque(self.config.kind, chain, state, &t, &self.config.gains).map_err(|e| e.to_string())
    }
}

fn build_from(cfg: &SceneConfig, p: &Prepared, instance: usize) -> Result<World, SceneError> {
    let gravity = Vec3::from(cfg.gravity);
    let mut w = World::new(gravity, cfg.solver);
    let d = ReductionParams::default();
    w.reduction = ReductionParams {
        max_patches: cfg.reduction.max_patches,
        per_patch_cap: cfg.reduction.per_patch_cap,
        normal_cone_cos: cfg.reduction.normal_cone_deg.to_radians().cos(),
        ..d
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(instance as u64));
    let held: Vec<String> = cfg.chains.iter().map(|c| c.attach.body.clone()).collect();
    for (i, b) in cfg.bodies.iter().enumerate() {
        let mut frame = b.pose.to_pose();
        if !b.fixed && !held.contains(&b.name) && (cfg.jitter.position > 0.0 || cfg.jitter.rotation > 0.0) {
            let mut draw = |s: f64| Vec3::from_fn(|_, _| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 });
            let dp = draw(cfg.jitter.position);
            let dr = draw(cfg.jitter.rotation);
            frame = Pose::from_parts(
                Translation3::from(frame.translation.vector + dp),
                UnitQuaternion::from_scaled_axis(dr) * frame.rotation,
            );
        }
        let mut body = if b.fixed {
            RigidBody::fixed(frame)
        } else {
            RigidBody::new(p.mass[i], frame)
        };
        body = body.with_material(b.friction, b.restitution);
        if !b.fixed {
            body.linear_velocity = Vec3::from(b.linear_velocity);
            body.angular_velocity = Vec3::from(b.angular_velocity);
        }
        let mut collider = Collider::new(p.meshes[i].clone(), p.sdfs[i].clone());
        collider.contact_distance = b.sdf.and_then(|s| s.contact_distance);
        w.add_body(body, Some(collider));
    }
    for [a, b] in &cfg.exclusions {
        w.exclude_pair(cfg.body_index(a)?, cfg.body_index(b)?);
    }
    for c in &cfg.chains {
        let chain = c.build(gravity)?;
        let body = cfg.body_index(&c.attach.body)?;
        let q = c.q0(chain.dof())?;
        let ee_to_frame = match c.attach.ee_to_frame {
            Some(p) => p.to_pose(),
            None => chain.forward_kinematics(&q)?.inverse() * w.bodies[body].frame_pose(),
        };
        let state = JointState {
            qd: DVector::zeros(q.len()),
            q,
        };
        let controller = c.controller.clone().map(|config| {
            Box::new(ScriptedController { config, start: None }) as Box<dyn TorqueSource>
        });
        w.attach(body, &chain, state, ee_to_frame, controller)
            .map_err(|source| SceneError::Dynamics { instance, source })?;
    }
    Ok(w)
}

/// Builds the world of one instance (instances differ only through the jitter seed).
pub fn build_world(cfg: &SceneConfig, instance: usize) -> Result<World, SceneError> {
    build_from(cfg, &prepare(cfg)?, instance)
}

/// Per-frame record of one instance.
#[derive(Debug, Clone)]
pub struct InstanceRun {
    pub stats: Vec<FrameStats>,
    /// Mesh-frame pose of every body after each frame.
    pub poses: Vec<Vec<Pose>>,
    pub wall_time_s: Vec<f64>,
    pub final_bodies: Vec<RigidBody>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub instances: Vec<InstanceRun>,
    pub wall_time_s: f64,
    pub steps_per_second: f64,
}

impl RunOutput {
    pub fn contact_handling_time_s(&self) -> f64 {
        self.instances.iter().flat_map(|i| &i.stats).map(|s| s.contact_handling_time_s).sum()
    }

    pub fn solve_time_s(&self) -> f64 {
        self.instances.iter().flat_map(|i| &i.stats).map(|s| s.solve_time_s).sum()
    }
}

fn run_instance(cfg: &SceneConfig, p: &Prepared, instance: usize) -> Result<InstanceRun, SceneError> {
    let mut w = build_from(cfg, p, instance)?;
    let dump = cfg.outputs.dump_every;
    let dir = cfg.outputs.pointcloud_dir.clone().unwrap_or_else(|| PathBuf::from("contacts"));
    if dump > 0 {
        w.capture_contacts = true;
        fs::create_dir_all(&dir).map_err(|source| SceneError::Io { path: dir.clone(), source })?;
    }
    let mut run = InstanceRun {
        stats: Vec::with_capacity(cfg.frames as usize),
        poses: Vec::with_capacity(cfg.frames as usize),
        wall_time_s: Vec::with_capacity(cfg.frames as usize),
        final_bodies: Vec::new(),
    };
    for f in 0..cfg.frames {
        let t = Instant::now();
        let s = w.step().map_err(|source| SceneError::Dynamics { instance, source })?;
        run.wall_time_s.push(t.elapsed().as_secs_f64());
        if dump > 0 && f % dump == 0 {
            dump_pointcloud(&dir.join(format!("contacts_i{instance}_f{f:06}.csv")), &w)?;
        }
        run.stats.push(s);
        run.poses.push(w.bodies.iter().map(RigidBody::frame_pose).collect());
    }
    run.final_bodies = w.bodies;
    Ok(run)
}

/// Candidates and kept contacts of every pair from the world's last substep.
pub fn dump_pointcloud(path: &Path, world: &World) -> Result<(), SceneError> {
    let io = |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    };
    let candidates: Vec<_> = world.last_contacts.iter().flat_map(|p| p.candidates.iter().copied()).collect();
    let patches: Vec<_> = world.last_contacts.iter().flat_map(|p| p.patches.iter().cloned()).collect();
    let file = fs::File::create(path).map_err(io)?;
    write_pointcloud(BufWriter::new(file), &candidates, &patches).map_err(io)
}

/// Runs every instance on a pool of `threads` workers (0 = all cores) and writes the
/// configured outputs. Results do not depend on the thread count.
pub fn run(cfg: &SceneConfig, threads: usize) -> Result<RunOutput, SceneError> {
    cfg.validate()?;
    let start = Instant::now();
    let prepared = prepare(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SceneError::Invalid(format!("thread pool: {e}")))?;
    let instances = pool.install(|| {
        (0..cfg.instances)
            .into_par_iter()
            .map(|i| run_instance(cfg, &prepared, i))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let wall = start.elapsed().as_secs_f64();
    let out = RunOutput {
        steps_per_second: (cfg.frames as f64 * cfg.instances as f64) / wall.max(1e-12),
        wall_time_s: wall,
        instances,
    };
    write_outputs(cfg, &out)?;
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<(), SceneError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| SceneError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `out.csv` → `out.timing.csv`.
pub fn timing_path(stats: &Path) -> PathBuf {
    let stem = stats.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stats.with_file_name(format!("{stem}.timing.csv"))
}

pub fn write_outputs(cfg: &SceneConfig, out: &RunOutput) -> Result<(), SceneError> {
    if let Some(path) = &cfg.outputs.stats {
        write_file(path, &stats_csv(cfg, out))?;
        write_file(&timing_path(path), &timing_csv(out))?;
    }
    if let Some(path) = &cfg.outputs.trajectory {
        write_file(path, &trajectory_csv(cfg, out))?;
    }
    Ok(())
}

fn csv_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}

/// Per-frame contact statistics. Comment lines carry the per-body contact margins;
/// timings live in the sidecar so that this file is reproducible byte for byte.
pub fn stats_csv(cfg: &SceneConfig, out: &RunOutput) -> String {
    let mut s = String::new();
    let p = &cfg.solver;
    let _ = writeln!(
        s,
        "# scene={} instances={} dt={} substeps={} pos_iterations={} vel_iterations={}",
        cfg.name, cfg.instances, p.dt, p.substeps, p.pos_iterations, p.vel_iterations
    );
    for b in &cfg.bodies {
        if let Some(sdf) = b.sdf {
            let _ = writeln!(
                s,
                "# sdf body={} resolution={} contact_distance={} slop={}",
                b.name,
                sdf.resolution,
                sdf.contact_distance.map_or("2voxel".to_string(), |d| d.to_string()),
                p.penetration_slop.map_or("0.5voxel".to_string(), |d| d.to_string()),
            );
        }
    }
    s.push_str("instance,frame,contacts_before,contacts_after,patches,max_penetration,penetration_violations");
    for b in &cfg.bodies {
        let _ = write!(s, ",force_{}", csv_name(&b.name));
    }
    s.push('\n');
    for (i, run) in out.instances.iter().enumerate() {
        for f in &run.stats {
            let _ = write!(
                s,
                "{i},{},{},{},{},{},{}",
                f.frame, f.contacts_before, f.contacts_after, f.patches, f.max_penetration, f.penetration_violations
            );
            for v in &f.body_forces {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

pub fn timing_csv(out: &RunOutput) -> String {
    let mut s = String::from("instance,frame,contact_handling_time_s,solve_time_s,wall_time_s\n");
    for (i, run) in out.instances.iter().enumerate() {
        for (f, w) in run.stats.iter().zip(&run.wall_time_s) {
            let _ = writeln!(s, "{i},{},{},{},{w}", f.frame, f.contact_handling_time_s, f.solve_time_s);
        }
    }
    s
}

/// Mesh-frame pose of every body after each frame; quaternion as (w, x, y, z).
pub fn trajectory_csv(cfg: &SceneConfig, out: &RunOutput) -> String {
    let mut s = String::from("instance,frame,body,x,y,z,qw,qx,qy,qz\n");
    for (i, run) in out.instances.iter().enumerate() {
        for (f, poses) in run.poses.iter().enumerate() {
            for (b, p) in cfg.bodies.iter().zip(poses) {
                let t = p.translation.vector;
                let q = p.rotation.quaternion();
                let _ = writeln!(s, "{i},{f},{},{},{},{},{},{},{},{}", b.name, t.x, t.y, t.z, q.w, q.i, q.j, q.k);
            }
        }
    }
    s
}

const STEEL: f64 = 7800.0;

/// Nut height on the bolt: one turn engaged at the free end of the thread, lowered
/// through the axial play so the flanks start a hair apart instead of falling.
pub fn nut_start_height(nut: &ThreadSpec, bolt: &ThreadSpec) -> f64 {
    let play = (nut.profile_radius(0.0) - bolt.profile_radius(0.0)) / 3f64.sqrt();
    bolt.shank_length() + bolt.threaded_length() - bolt.pitch - play + 0.02e-3
}

fn thread_specs(segments_per_turn: u32) -> (ThreadSpec, ThreadSpec) {
    let mut nut = ThreadSpec::metric(16, ThreadKind::Nut, Fit::Tight).expect("M16 is tabulated");
    let mut bolt = ThreadSpec::metric(16, ThreadKind::Bolt, Fit::Tight).expect("M16 is tabulated");
    nut.segments_per_turn = segments_per_turn;
    bolt.segments_per_turn = segments_per_turn;
    (nut, bolt)
}

fn ground(extent: f64, thickness: f64, subdivisions: usize, resolution: u32) -> BodyConfig {
    BodyConfig {
        name: "ground".into(),
        mesh: MeshSource::Box {
            extents: [extent, extent, thickness],
            subdivisions,
        },
        pose: PoseConfig::at(0.0, 0.0, -thickness / 2.0),
        density: default_density(),
        friction: default_friction(),
        restitution: 0.0,
        fixed: true,
        sdf: Some(SdfConfig {
            resolution,
            contact_distance: Some(0.02),
        }),
        linear_velocity: [0.0; 3],
        angular_velocity: [0.0; 3],
    }
}

fn free_body(name: String, mesh: MeshSource, pose: PoseConfig, density: f64, sdf: Option<u32>) -> BodyConfig {
    BodyConfig {
        name,
        mesh,
        pose,
        density,
        friction: default_friction(),
        restitution: 0.0,
        fixed: false,
        sdf: sdf.map(|resolution| SdfConfig {
            resolution,
            contact_distance: None,
        }),
        linear_velocity: [0.0; 3],
        angular_velocity: [0.0; 3],
    }
}

/// Positions on a square grid, `spacing` apart, layered upward from `z0`.
fn pile_positions(count: usize, per_layer_side: usize, spacing: f64, z0: f64, layer_height: f64) -> Vec<PoseConfig> {
    let side = per_layer_side.max(1);
    let offset = (side as f64 - 1.0) * spacing / 2.0;
    (0..count)
        .map(|k| {
            let layer = k / (side * side);
            let r = k % (side * side);
            let (ix, iy) = (r % side, r / side);
            PoseConfig::at(
                ix as f64 * spacing - offset,
                iy as f64 * spacing - offset,
                z0 + layer as f64 * layer_height,
            )
        })
        .collect()
}

/// Prismatic x/y/z stage carrying a z-y-x wrist whose joints all pass through the
/// end-effector point.
pub fn gantry_links() -> Vec<LinkConfig> {
    let stage = |axis: [f64; 3]| LinkConfig {
        joint: JointType::Prismatic,
        axis,
        origin: PoseConfig::default(),
        mass: 1.0,
        com: [0.0; 3],
        inertia: [1e-3; 3],
    };
    let wrist = |axis: [f64; 3]| LinkConfig {
        joint: JointType::Revolute,
        axis,
        origin: PoseConfig::default(),
        mass: 0.05,
        com: [0.0; 3],
        inertia: [2e-5; 3],
    };
    vec![
        stage([1.0, 0.0, 0.0]),
        stage([0.0, 1.0, 0.0]),
        stage([0.0, 0.0, 1.0]),
        wrist([0.0, 0.0, 1.0]),
        wrist([0.0, 1.0, 0.0]),
        wrist([1.0, 0.0, 0.0]),
    ]
}

/// Speed of the screw_track helix (rad/s); negative turns a right-hand nut down.
pub const SCREW_TRACK_RATE: f64 = -std::f64::consts::TAU / 3.0;

/// Builtin scene with its default body count.
pub fn builtin_scene(name: &str) -> Result<SceneConfig, SceneError> {
    builtin_scene_with(name, None)
}

/// Builtin scene; `count` overrides the number of dropped bodies of the pile scenes.
pub fn builtin_scene_with(name: &str, count: Option<usize>) -> Result<SceneConfig, SceneError> {
    let mut cfg = SceneConfig {
        name: name.to_string(),
        ..Default::default()
    };
    match name {
        "peg_in_hole" => {
            let (d, clearance, length) = (4e-3, 0.104e-3, 8e-3);
            let mut floor = ground(0.04, 0.01, 8, 128);
            // a falling peg covers several millimetres per frame
            floor.sdf = Some(SdfConfig {
                resolution: 128,
                contact_distance: Some(0.01),
            });
            let mut hole = free_body(
                "hole".into(),
                MeshSource::Hole {
                    diameter: d,
                    clearance,
                    length,
                    segments: 64,
                },
                PoseConfig::default(),
                STEEL,
                Some(256),
            );
            hole.fixed = true;
            let peg = free_body(
                "peg".into(),
                MeshSource::Peg {
                    diameter: d,
                    clearance,
                    length,
                    segments: 64,
                },
                PoseConfig::at(0.0, 0.0, length / 2.0 + 5e-3),
                STEEL,
                None,
            );
            cfg.bodies = vec![floor, hole, peg];
            cfg.frames = 120;
        }
        "nut_and_bolt" | "screw_track" => {
            let (nut, bolt) = thread_specs(64);
            let mut b = free_body("bolt".into(), MeshSource::Thread(bolt), PoseConfig::default(), STEEL, Some(256));
            b.fixed = true;
            b.friction = 0.05;
            let mut n = free_body(
                "nut".into(),
                MeshSource::Thread(nut),
                PoseConfig::at(0.0, 0.0, nut_start_height(&nut, &bolt)),
                STEEL,
                None,
            );
            n.friction = 0.05;
            cfg.bodies = vec![b, n];
            cfg.frames = 180;
            if name == "screw_track" {
                cfg.frames = 300;
                cfg.chains.push(ChainConfig {
                    model: ChainModel::Links {
                        links: gantry_links(),
                        tool: PoseConfig::default(),
                    },
                    base: PoseConfig::at(0.0, 0.0, nut_start_height(&nut, &bolt)),
                    q0: vec![0.0; 6],
                    attach: AttachConfig {
                        body: "nut".into(),
                        ee_to_frame: Some(PoseConfig::default()),
                    },
                    controller: Some(ControllerConfig {
                        kind: ControllerKind::Osc,
                        gains: ControllerGains {
                            kp: vec![20.0; 6],
                            kd: vec![9.0; 6],
                            ..ControllerGains::uniform(6, 0.0, 0.0)
                        },
                        path: MotionPath::Helix {
                            axis: [0.0, 0.0, 1.0],
                            rate: SCREW_TRACK_RATE,
                            pitch: bolt.pitch,
                        },
                        wrench: [0.0; 6],
                    }),
                });
            }
        }
        "nut_pile" => {
            let (nut, _) = thread_specs(32);
            let count = count.unwrap_or(8);
            let mesh = MeshSource::Thread(nut);
            cfg.bodies.push(ground(0.5, 0.05, 24, 256));
            for (k, pose) in pile_positions(count, 3, 0.03, 0.02, 0.025).into_iter().enumerate() {
                cfg.bodies.push(free_body(format!("nut{k}"), mesh.clone(), pose, STEEL, Some(96)));
            }
            cfg.jitter = Jitter {
                position: 2e-3,
                rotation: 0.5,
            };
            cfg.frames = 300;
        }
        "torus_pile" => {
            let count = count.unwrap_or(8);
            let mesh = MeshSource::Torus {
                major_radius: 0.02,
                minor_radius: 0.01,
                major_segments: 32,
                minor_segments: 32,
            };
            cfg.bodies.push(ground(0.5, 0.05, 24, 256));
            for (k, pose) in pile_positions(count, 3, 0.07, 0.03, 0.03).into_iter().enumerate() {
                cfg.bodies.push(free_body(format!("torus{k}"), mesh.clone(), pose, 1000.0, Some(96)));
            }
            cfg.jitter = Jitter {
                position: 5e-3,
                rotation: 0.8,
            };
            cfg.frames = 300;
        }
        "box_stack" => {
            cfg.bodies.push(ground(0.5, 0.05, 24, 256));
            let count = count.unwrap_or(5);
            for i in 0..count {
                // each level 8 mm narrower so no two edges coincide
                let e = 0.1 - 0.008 * i as f64;
                cfg.bodies.push(free_body(
                    format!("box{i}"),
                    MeshSource::Box {
                        extents: [e, e, 0.1],
                        subdivisions: 4,
                    },
                    PoseConfig::at(0.0, 0.0, 0.05 + 0.1 * i as f64),
                    500.0,
                    Some(64),
                ));
            }
        }
        "box_drop" => {
            cfg.bodies.push(ground(0.5, 0.05, 24, 256));
            cfg.bodies.push(free_body(
                "box".into(),
                MeshSource::Box {
                    extents: [0.1, 0.1, 0.1],
                    subdivisions: 4,
                },
                PoseConfig::at(0.0, 0.0, 0.15),
                500.0,
                Some(64),
            ));
        }
        _ => return Err(SceneError::UnknownScene(name.to_string())),
    }
    Ok(cfg)
}
