//! Desk-scale peg-in-hole task: scenes, penalty contact, reward, plants and
//! the episode loop.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::{
    cic, damping_from_gains, desired_joint_velocity, gac_step, gic_regulation, joint_velocity_pd, Action,
    ControllerKind, ErrorKind, ImpedanceGains, DEFAULT_ADMITTANCE_INERTIA,
};
use crate::dynamics::{self, inverse_kinematics, JointState, ManipulatorModel};
use crate::error::{Error, Result};
use crate::liegroup::{
    cartesian_error, distance, exp_se3, exp_so3, gcev, wrench_body_to_spatial, wrench_spatial_to_body, Frame, Mat3,
    Mat6, Pose, Rotation, Twist, Vec3, Vec6, Wrench,
};
use crate::policy::GainPolicy;

pub const PEG_RADIUS: f64 = 0.0095;
pub const HOLE_RADIUS: f64 = 0.010;
pub const HOLE_DEPTH: f64 = 0.040;
pub const START_OFFSET: f64 = 0.08;
pub const SURFACE_EXTENT: f64 = 0.15;
/// Hole mouth of the default scene, in world coordinates.
pub const NOMINAL_MOUTH: [f64; 3] = [0.5, 0.0, 0.06];
/// Axial offset below which the peg counts as inserted.
pub const SUCCESS_DEPTH: f64 = 0.026;
/// Axial stations of the rim sample rings, measured from the tip.
pub const RING_STATIONS: [f64; 2] = [0.0, 0.02];
const RING_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneCase {
    Default,
    Case1,
    Case2,
    Case3,
}

impl SceneCase {
    pub const ALL: [SceneCase; 4] = [SceneCase::Default, SceneCase::Case1, SceneCase::Case2, SceneCase::Case3];

    pub fn as_str(&self) -> &'static str {
        match self {
            SceneCase::Default => "default",
            SceneCase::Case1 => "case1",
            SceneCase::Case2 => "case2",
            SceneCase::Case3 => "case3",
        }
    }

    /// Rotation of the default scene about the hole mouth.
    pub fn tilt(&self) -> Rotation {
        let d = std::f64::consts::PI / 180.0;
        match self {
            SceneCase::Default => Rotation::identity(),
            SceneCase::Case1 => Rotation::rot_x(30.0 * d),
            SceneCase::Case2 => Rotation::rot_y(-30.0 * d),
            SceneCase::Case3 => Rotation::rot_y(-90.0 * d),
        }
    }
}

impl fmt::Display for SceneCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(SceneCase::Default),
            "case1" => Ok(SceneCase::Case1),
            "case2" => Ok(SceneCase::Case2),
            "case3" => Ok(SceneCase::Case3),
            other => Err(Error::InvalidConfig(format!("unknown scene case {other:?}"))),
        }
    }
}

/// Hole geometry. `hole_pose` sits at the hole bottom with +z pointing out of the hole.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScene {
    pub hole_pose: Pose,
    pub hole_radius: f64,
    pub peg_radius: f64,
    pub hole_depth: f64,
    pub surface_extent: f64,
}

impl TaskScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.peg_radius > 0.0 && self.peg_radius < self.hole_radius) {
            return Err(Error::InvalidConfig("peg radius must be positive and below the hole radius".into()));
        }
        if !(self.hole_depth > 0.0 && self.surface_extent > self.hole_radius) {
            return Err(Error::InvalidConfig("hole depth and surface extent must be positive".into()));
        }
        Ok(())
    }

    pub fn mouth(&self) -> Pose {
        self.hole_pose.compose(&Pose::from_translation(Vec3::new(0.0, 0.0, self.hole_depth)))
    }

    /// The unperturbed start: `START_OFFSET` above the bottom along the hole axis.
    pub fn nominal_start(&self) -> Pose {
        self.hole_pose.compose(&Pose::from_translation(Vec3::new(0.0, 0.0, START_OFFSET)))
    }

    /// Axial offset `z - z_d` and radial offset `d_p` of a point, in the hole frame.
    pub fn hole_offsets(&self, p: &Vec3) -> (f64, f64) {
        let x = self.hole_pose.inverse().transform_point(p);
        (x.z, x.x.hypot(x.y))
    }
}

/// The four evaluation scenes. Tilted cases rotate the default scene about its hole mouth.
pub fn make_scene(case: SceneCase) -> TaskScene {
    let mouth = Vec3::from(NOMINAL_MOUTH);
    let default = TaskScene {
        hole_pose: Pose::from_translation(mouth - Vec3::new(0.0, 0.0, HOLE_DEPTH)),
        hole_radius: HOLE_RADIUS,
        peg_radius: PEG_RADIUS,
        hole_depth: HOLE_DEPTH,
        surface_extent: SURFACE_EXTENT,
    };
    transform_scene(&default, &rotation_about(&case.tilt(), &mouth))
}

/// `T(c) R T(-c)`: rotation `r` about the point `c`.
pub fn rotation_about(r: &Rotation, c: &Vec3) -> Pose {
    Pose::new(*r, c - *r * *c)
}

pub fn transform_scene(scene: &TaskScene, g_l: &Pose) -> TaskScene {
    TaskScene { hole_pose: g_l.compose(&scene.hole_pose), ..*scene }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Normal stiffness of the fully engaged tip face (N/m).
    pub k_n: f64,
    /// Normal damping of the fully engaged tip face (N s/m).
    pub d_n: f64,
    pub mu: f64,
    /// Tangential stiffness of the fully engaged tip face (N/m).
    pub k_t: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        let face = (1 + RING_POINTS) as f64;
        ContactParams { k_n: 2e4 * face, d_n: 50.0 * face, mu: 0.3, k_t: 5e3 * face }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        if [self.k_n, self.d_n, self.mu, self.k_t].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidConfig("contact parameters must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Peg sample points in the end-effector frame: tip centre, then the rings.
pub fn peg_samples(peg_radius: f64) -> Vec<Vec3> {
    let mut pts = vec![Vec3::zeros()];
    for s in RING_STATIONS {
        for k in 0..RING_POINTS {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / RING_POINTS as f64;
            pts.push(Vec3::new(peg_radius * phi.cos(), peg_radius * phi.sin(), s));
        }
    }
    pts
}

/// Penetration depth and outward unit normal (hole frame) of a point, if in contact.
fn penetration(scene: &TaskScene, x: &Vec3) -> Option<(f64, Vec3)> {
    let r = x.x.hypot(x.y);
    if x.z >= scene.hole_depth || r >= scene.surface_extent {
        return None;
    }
    if r < scene.hole_radius {
        return (x.z < 0.0).then(|| (-x.z, Vec3::z()));
    }
    let top = scene.hole_depth - x.z;
    let wall = r - scene.hole_radius;
    if wall < top && x.z >= 0.0 {
        Some((wall, -Vec3::new(x.x / r, x.y / r, 0.0)))
    } else {
        Some((top, Vec3::z()))
    }
}

/// Stick anchors (hole frame) of the peg samples currently in contact.
/// Slip is the tangential displacement of a sample from its anchor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContactState {
    anchors: Vec<Option<Vec3>>,
}

impl ContactState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.anchors.clear();
    }

    pub fn in_contact(&self) -> usize {
        self.anchors.iter().filter(|a| a.is_some()).count()
    }
}

/// Penalty contact wrench for a peg touching down at `g` (no accumulated slip), in the body frame.
pub fn contact_wrench(scene: &TaskScene, g: &Pose, v_b: &Twist, params: &ContactParams) -> Result<Wrench> {
    contact_wrench_with(scene, g, v_b, params, &mut ContactState::new())
}

/// Penalty contact wrench on the peg, about the end-effector origin, in the body frame.
/// Advances the stick anchors in `state`.
///
/// `k_n`, `d_n` and `k_t` are split evenly over the nine samples of the tip face, and
/// the upper ring uses the same per-sample values.
pub fn contact_wrench_with(
    scene: &TaskScene,
    g: &Pose,
    v_b: &Twist,
    params: &ContactParams,
    state: &mut ContactState,
) -> Result<Wrench> {
    v_b.expect_frame(Frame::Body)?;
    let face = (1 + RING_POINTS) as f64;
    let (k_n, d_n, k_t) = (params.k_n / face, params.d_n / face, params.k_t / face);
    let to_hole = scene.hole_pose.inverse().compose(g);
    let r_hb = *to_hole.rot.matrix();
    let samples = peg_samples(scene.peg_radius);
    state.anchors.resize(samples.len(), None);
    let mut f = Vec3::zeros();
    let mut tau = Vec3::zeros();
    for (x_e, anchor) in samples.iter().zip(state.anchors.iter_mut()) {
        let x_h = to_hole.transform_point(x_e);
        let Some((pen, n)) = penetration(scene, &x_h) else {
            *anchor = None;
            continue;
        };
        let vel = r_hb * (v_b.v + v_b.w.cross(x_e));
        let f_n = (k_n * pen - d_n * vel.dot(&n)).max(0.0);
        let a = anchor.get_or_insert(x_h);
        let d = x_h - *a;
        let mut slip = d - n * d.dot(&n);
        let limit = params.mu * f_n;
        if k_t * slip.norm() > limit {
            slip *= limit / (k_t * slip.norm());
            *a = x_h - slip;
        }
        let f_e = r_hb.transpose() * (n * f_n - slip * k_t);
        f += f_e;
        tau += x_e.cross(&f_e);
    }
    Ok(Wrench::new(f, tau, Frame::Body))
}

/// Snapshot of the simulated robot.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub joints: Option<JointState>,
    pub ee_pose: Pose,
    pub ee_twist: Twist,
    pub f_ext: Wrench,
    pub t: f64,
}

/// Reward terms `(r1, r2, r3)`.
pub fn reward_terms(state: &SimState, scene: &TaskScene) -> (f64, f64, f64) {
    let (dz, dp) = scene.hole_offsets(&state.ee_pose.pos);
    let r1 = -0.1 * distance(&state.ee_pose, &scene.hole_pose);
    let r2 = if dz < SUCCESS_DEPTH {
        120.0
    } else if dz < 0.04 {
        0.04 - dz
    } else {
        0.0
    };
    let r3 = if dp > 0.002 { -0.005 * state.f_ext.f.z.abs() } else { 0.0 };
    (r1, r2, r3)
}

pub fn reward(state: &SimState, scene: &TaskScene) -> f64 {
    let (a, b, c) = reward_terms(state, scene);
    a + b + c
}

pub fn success(state: &SimState, scene: &TaskScene) -> bool {
    let (dz, dp) = scene.hole_offsets(&state.ee_pose.pos);
    dz < SUCCESS_DEPTH && dp < scene.hole_radius
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRanges {
    /// Half-width of the per-axis uniform translation (m).
    pub translation: f64,
    /// Largest rotation angle (rad).
    pub rotation: f64,
}

impl Default for InitRanges {
    fn default() -> Self {
        InitRanges { translation: 0.02, rotation: 10f64.to_radians() }
    }
}

/// Start pose `hole_pose (R_delta, (0, 0, START_OFFSET) + t_delta)`, sampled in the hole frame.
pub fn sample_initial_pose<R: Rng + ?Sized>(rng: &mut R, scene: &TaskScene, ranges: &InitRanges) -> Pose {
    let h = ranges.translation;
    let mut t = || if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
    let t_delta = Vec3::new(t(), t(), t());
    let axis = loop {
        let a = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        if a.norm() > 1e-9 {
            break a.normalize();
        }
    };
    let angle = if ranges.rotation > 0.0 { rng.random_range(0.0..=ranges.rotation) } else { 0.0 };
    let local = Pose::new(exp_so3(&(axis * angle)), Vec3::new(0.0, 0.0, START_OFFSET) + t_delta);
    scene.hole_pose.compose(&local)
}

/// Something that can be driven by a body wrench or a body velocity command.
pub trait Plant {
    fn reset(&mut self, g0: &Pose) -> Result<()>;
    fn pose(&self) -> Pose;
    fn body_twist(&self) -> Twist;
    fn time(&self) -> f64;
    fn joints(&self) -> Option<&JointState> {
        None
    }
    /// Operational-space gravity wrench `G~` in the body frame.
    fn gravity_wrench(&self) -> Result<Wrench>;
    /// Apply the commanded body wrench plus the external contact wrench for `dt`.
    fn apply_wrench(&mut self, command: &Wrench, external: &Wrench, dt: f64) -> Result<()>;
    /// Track a body velocity with the low-level velocity loop for `dt`.
    fn track_velocity(&mut self, v_des: &Twist, external: &Wrench, dt: f64) -> Result<()>;
}

/// Default joint velocity gain of the inner velocity loop.
pub const DEFAULT_KV: f64 = 50.0;

/// The reference manipulator under joint-torque control.
#[derive(Clone, Debug)]
pub struct ArmPlant {
    model: Arc<ManipulatorModel>,
    state: JointState,
    seed: DVector<f64>,
    pose: Pose,
    jb: DMatrix<f64>,
    gravity: DVector<f64>,
    pub kv: f64,
}

/// Elbow-up configuration reaching the default scene's nominal start.
pub fn home_configuration() -> DVector<f64> {
    DVector::from_vec(vec![0.0, -0.99, 1.78, -0.79, 0.0, 0.0])
}

impl ArmPlant {
    pub fn new(model: Arc<ManipulatorModel>, q: DVector<f64>) -> Result<Self> {
        let state = JointState::at_rest(q.clone());
        let mut plant = ArmPlant {
            model,
            state,
            seed: q,
            pose: Pose::identity(),
            jb: DMatrix::zeros(6, 6),
            gravity: DVector::zeros(6),
            kv: DEFAULT_KV,
        };
        plant.refresh()?;
        Ok(plant)
    }

    /// Arm whose IK seed reaches `scene`'s nominal start, found by continuation
    /// from the home configuration.
    pub fn for_scene(model: Arc<ManipulatorModel>, scene: &TaskScene) -> Result<Self> {
        let home = home_configuration();
        let default_start = make_scene(SceneCase::Default).nominal_start();
        let q = dynamics::inverse_kinematics_continuation(&model, &default_start, &home, &scene.nominal_start(), 24)?;
        ArmPlant::new(model, q)
    }

    pub fn model(&self) -> &ManipulatorModel {
        &self.model
    }

    pub fn state(&self) -> &JointState {
        &self.state
    }

    pub fn set_state(&mut self, state: JointState) -> Result<()> {
        self.state = state;
        self.refresh()
    }

    pub fn body_jacobian(&self) -> &DMatrix<f64> {
        &self.jb
    }

    pub fn joint_gravity(&self) -> &DVector<f64> {
        &self.gravity
    }

    fn refresh(&mut self) -> Result<()> {
        let (pose, _, jb) = dynamics::kinematics(&self.model, &self.state.q)?;
        self.pose = pose;
        self.jb = jb.matrix;
        self.gravity = dynamics::gravity_vector(&self.model, &self.state.q)?;
        Ok(())
    }

    fn advance(&mut self, torque: &DVector<f64>, external: &Wrench, dt: f64) -> Result<()> {
        external.expect_frame(Frame::Body)?;
        let ext = self.jb.transpose() * external.to_vector();
        self.state = dynamics::step(&self.model, &self.state, torque, &ext, dt)?;
        self.refresh()
    }
}

impl Plant for ArmPlant {
    fn reset(&mut self, g0: &Pose) -> Result<()> {
        let q = inverse_kinematics(&self.model, g0, &self.seed)?;
        self.state = JointState::at_rest(q);
        self.refresh()
    }

    fn pose(&self) -> Pose {
        self.pose
    }

    fn body_twist(&self) -> Twist {
        let v = &self.jb * &self.state.qdot;
        Twist::from_vector(&Vec6::from_column_slice(v.as_slice()), Frame::Body)
    }

    fn time(&self) -> f64 {
        self.state.t
    }

    fn joints(&self) -> Option<&JointState> {
        Some(&self.state)
    }

    fn gravity_wrench(&self) -> Result<Wrench> {
        let svd = self.jb.clone().svd(false, false);
        let s = &svd.singular_values;
        let cond = s.max() / s.min();
        if !(cond < dynamics::CONDITION_LIMIT) {
            return Err(Error::SingularJacobian(cond));
        }
        let x = self.jb.transpose().lu().solve(&self.gravity).ok_or(Error::SingularJacobian(f64::INFINITY))?;
        Ok(Wrench::from_vector(&Vec6::from_column_slice(x.as_slice()), Frame::Body))
    }

    fn apply_wrench(&mut self, command: &Wrench, external: &Wrench, dt: f64) -> Result<()> {
        let tau = crate::control::wrench_to_torque(
            &dynamics::Jacobian { matrix: self.jb.clone(), frame: Frame::Body },
            command,
        )?;
        self.advance(&tau, external, dt)
    }

    fn track_velocity(&mut self, v_des: &Twist, external: &Wrench, dt: f64) -> Result<()> {
        v_des.expect_frame(Frame::Body)?;
        let qd = desired_joint_velocity(&self.jb, v_des);
        let tau = joint_velocity_pd(&qd, &self.state.qdot, self.kv, &self.gravity);
        self.advance(&tau, external, dt)
    }
}

/// A free rigid body with body-frame Newton-Euler dynamics and its mass centre at
/// the end-effector origin.
#[derive(Clone, Debug)]
pub struct FreeBodyPlant {
    pub mass: f64,
    pub inertia: Mat3,
    pub gravity: Vec3,
    pub kv: f64,
    pose: Pose,
    twist: Vec6,
    t: f64,
}

impl FreeBodyPlant {
    pub fn new(mass: f64, inertia: Mat3) -> Self {
        FreeBodyPlant {
            mass,
            inertia,
            gravity: Vec3::new(0.0, 0.0, -9.81),
            kv: DEFAULT_KV,
            pose: Pose::identity(),
            twist: Vec6::zeros(),
            t: 0.0,
        }
    }

    /// Inertia matched to the reference arm's tool link.
    pub fn tool_like() -> Self {
        FreeBodyPlant::new(1.0, Mat3::identity() * 0.2)
    }

    fn spatial_inertia(&self) -> Mat6 {
        let mut m = Mat6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Mat3::identity() * self.mass));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.inertia);
        m
    }

    fn gravity_force(&self) -> Vec3 {
        self.pose.rot.transpose() * (self.gravity * self.mass)
    }

    fn integrate(&mut self, total: &Vec6, dt: f64) -> Result<()> {
        let v = self.twist.fixed_rows::<3>(0).into_owned();
        let w = self.twist.fixed_rows::<3>(3).into_owned();
        let f = total.fixed_rows::<3>(0).into_owned();
        let tau = total.fixed_rows::<3>(3).into_owned();
        let vdot = f / self.mass - w.cross(&v);
        let iw = self.inertia * w;
        let wdot = self.inertia.cholesky().ok_or(Error::NotPositiveDefinite)?.solve(&(tau - w.cross(&iw)));
        self.twist += crate::liegroup::stack(&vdot, &wdot) * dt;
        let speed = self.twist.norm();
        if !(speed <= dynamics::BLOWUP_SPEED) {
            return Err(Error::NumericalBlowup(speed));
        }
        let xi = Twist::from_vector(&self.twist, Frame::Body);
        self.pose = self.pose.compose(&exp_se3(&xi, dt)).repaired();
        self.t += dt;
        Ok(())
    }
}

impl Plant for FreeBodyPlant {
    fn reset(&mut self, g0: &Pose) -> Result<()> {
        self.pose = *g0;
        self.twist = Vec6::zeros();
        self.t = 0.0;
        Ok(())
    }

    fn pose(&self) -> Pose {
        self.pose
    }

    fn body_twist(&self) -> Twist {
        Twist::from_vector(&self.twist, Frame::Body)
    }

    fn time(&self) -> f64 {
        self.t
    }

    fn gravity_wrench(&self) -> Result<Wrench> {
        Ok(Wrench::new(-self.gravity_force(), Vec3::zeros(), Frame::Body))
    }

    fn apply_wrench(&mut self, command: &Wrench, external: &Wrench, dt: f64) -> Result<()> {
        command.expect_frame(Frame::Body)?;
        external.expect_frame(Frame::Body)?;
        let g = crate::liegroup::stack(&self.gravity_force(), &Vec3::zeros());
        let total = command.to_vector() + g + external.to_vector();
        self.integrate(&total, dt)
    }

    fn track_velocity(&mut self, v_des: &Twist, external: &Wrench, dt: f64) -> Result<()> {
        v_des.expect_frame(Frame::Body)?;
        let cmd =
            self.spatial_inertia() * (v_des.to_vector() - self.twist) * self.kv + self.gravity_wrench()?.to_vector();
        self.apply_wrench(&Wrench::from_vector(&cmd, Frame::Body), external, dt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub dt: f64,
    pub horizon: f64,
    pub update_period: usize,
    pub controller: ControllerKind,
    pub error_kind: ErrorKind,
    pub contact: ContactParams,
    pub init: InitRanges,
    pub record_trace: bool,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            dt: 1e-3,
            horizon: 15.0,
            update_period: 10,
            controller: ControllerKind::Gic,
            error_kind: ErrorKind::Gcev,
            contact: ContactParams::default(),
            init: InitRanges::default(),
            record_trace: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub pose: Pose,
    pub e_g: Vec6,
    pub e_c: Vec6,
    pub action: Action,
    pub gains: Vec6,
    /// Body-frame control wrench without the gravity term.
    pub feedback: Vec6,
    pub f_ext: Vec6,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub success: bool,
    pub steps: usize,
    /// Hole-frame axial offset at the end of the episode.
    pub final_depth: f64,
    pub return_sum: f64,
    /// Solver error that ended the episode early, if any.
    pub failure: Option<String>,
    pub trace: Option<Vec<TraceRow>>,
}

/// RNG for the initial pose of episode `seed`; policies get an independent stream.
pub fn episode_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Roll out one episode: sample the start, then step until success or the horizon.
pub fn run_episode(
    plant: &mut dyn Plant,
    scene: &TaskScene,
    policy: &mut dyn GainPolicy,
    config: &EpisodeConfig,
) -> Result<EpisodeResult> {
    scene.validate()?;
    config.contact.validate()?;
    if config.update_period == 0 || !(config.horizon > 0.0) {
        return Err(Error::InvalidConfig("update period and horizon must be positive".into()));
    }
    let mut rng = episode_rng(config.seed);
    let g0 = sample_initial_pose(&mut rng, scene, &config.init);
    plant.reset(&g0)?;
    policy.reset(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let m_des = Mat6::from_diagonal(&Vec6::from(DEFAULT_ADMITTANCE_INERTIA));
    let g_d = scene.hole_pose;
    let n_steps = (config.horizon / config.dt).round() as usize;
    let mut trace = config.record_trace.then(Vec::new);
    let mut action = Action::splat(0.0);
    let mut gains = policy.gains(&action);
    let mut v_adm = Twist::zero(Frame::Body);
    let mut contact = ContactState::new();
    let mut return_sum = 0.0;
    let mut failure = None;
    let mut steps = 0;
    let mut done = false;

    for k in 0..n_steps {
        let g = plant.pose();
        let v_b = plant.body_twist();
        let f_ext = contact_wrench_with(scene, &g, &v_b, &config.contact, &mut contact)?;
        if k % config.update_period == 0 {
            let e = config.error_kind.evaluate(&g, &g_d);
            action = policy.act(&e)?;
            gains = policy.gains(&action);
        }
        let outcome = (|| -> Result<Vec6> {
            match config.controller {
                ControllerKind::Gic => {
                    let g_tilde = plant.gravity_wrench()?;
                    let w = gic_regulation(&g, &g_d, &v_b, &gains, &g_tilde)?;
                    plant.apply_wrench(&w, &f_ext, config.dt)?;
                    Ok(w.to_vector() - g_tilde.to_vector())
                }
                ControllerKind::Cic => {
                    let g_tilde = plant.gravity_wrench()?;
                    let g_tilde_c = wrench_body_to_spatial(&g, &g_tilde)?;
                    let v_s = crate::liegroup::twist_body_to_spatial(&g, &v_b)?;
                    let w_s = cic(&g, &g_d, &v_s, &gains, &g_tilde_c)?;
                    let w = wrench_spatial_to_body(&g, &w_s)?;
                    plant.apply_wrench(&w, &f_ext, config.dt)?;
                    Ok(w.to_vector() - g_tilde.to_vector())
                }
                ControllerKind::Gac => {
                    v_adm = gac_step(&v_adm, &g, &g_d, &m_des, &gains, &f_ext, config.dt)?;
                    plant.track_velocity(&v_adm, &f_ext, config.dt)?;
                    Ok(v_adm.to_vector())
                }
            }
        })();
        steps = k + 1;
        let feedback = match outcome {
            Ok(w) => w,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let state = SimState {
            joints: plant.joints().cloned(),
            ee_pose: plant.pose(),
            ee_twist: plant.body_twist(),
            f_ext: contact_wrench_with(
                scene,
                &plant.pose(),
                &plant.body_twist(),
                &config.contact,
                &mut contact.clone(),
            )?,
            t: plant.time(),
        };
        let r = reward(&state, scene);
        return_sum += r;
        if let Some(tr) = trace.as_mut() {
            tr.push(TraceRow {
                t: state.t,
                pose: state.ee_pose,
                e_g: gcev(&g, &g_d),
                e_c: cartesian_error(&g, &g_d),
                action,
                gains: gains.to_vector(),
                feedback,
                f_ext: f_ext.to_vector(),
                reward: r,
            });
        }
        if success(&state, scene) {
            done = true;
            break;
        }
    }
    let final_depth = scene.hole_offsets(&plant.pose().pos).0;
    Ok(EpisodeResult { success: done, steps, final_depth, return_sum, failure, trace })
}

/// Contact-free regulation of `plant` toward `g_d` with fixed gains.
/// Returns the first time at which `Psi < tol`, if reached within `t_max`.
pub fn regulate(
    plant: &mut dyn Plant,
    g_d: &Pose,
    gains: &ImpedanceGains,
    controller: ControllerKind,
    dt: f64,
    t_max: f64,
    tol: f64,
) -> Result<Option<f64>> {
    let m_des = Mat6::from_diagonal(&Vec6::from(DEFAULT_ADMITTANCE_INERTIA));
    let zero = Wrench::zero(Frame::Body);
    let mut v_adm = Twist::zero(Frame::Body);
    let t0 = plant.time();
    let n = (t_max / dt).round() as usize;
    for _ in 0..n {
        let g = plant.pose();
        if distance(&g, g_d) < tol {
            return Ok(Some(plant.time() - t0));
        }
        let v_b = plant.body_twist();
        match controller {
            ControllerKind::Gic => {
                let w = gic_regulation(&g, g_d, &v_b, gains, &plant.gravity_wrench()?)?;
                plant.apply_wrench(&w, &zero, dt)?;
            }
            ControllerKind::Cic => {
                let gt = wrench_body_to_spatial(&g, &plant.gravity_wrench()?)?;
                let v_s = crate::liegroup::twist_body_to_spatial(&g, &v_b)?;
                let w = wrench_spatial_to_body(&g, &cic(&g, g_d, &v_s, gains, &gt)?)?;
                plant.apply_wrench(&w, &zero, dt)?;
            }
            ControllerKind::Gac => {
                v_adm = gac_step(&v_adm, &g, g_d, &m_des, gains, &zero, dt)?;
                plant.track_velocity(&v_adm, &zero, dt)?;
            }
        }
    }
    Ok((distance(&plant.pose(), g_d) < tol).then(|| plant.time() - t0))
}

/// Pure admittance flow: integrate `gac_step` and `g <- g exp(V dt)` without a plant.
pub fn admittance_flow(g0: &Pose, g_d: &Pose, gains: &ImpedanceGains, dt: f64, t_end: f64) -> Result<(Pose, Twist)> {
    let m_des = Mat6::from_diagonal(&Vec6::from(DEFAULT_ADMITTANCE_INERTIA));
    let zero = Wrench::zero(Frame::Body);
    let mut g = *g0;
    let mut v = Twist::zero(Frame::Body);
    let n = (t_end / dt).round() as usize;
    for _ in 0..n {
        v = gac_step(&v, &g, g_d, &m_des, gains, &zero, dt)?;
        g = g.compose(&exp_se3(&v, dt));
    }
    Ok((g, v))
}

/// Damping check helper: `K_d` that a plant would see for `gains`.
pub fn damping(gains: &ImpedanceGains) -> Mat6 {
    damping_from_gains(gains)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub case: SceneCase,
    pub controller: ControllerKind,
    pub error_kind: ErrorKind,
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub final_depth: f64,
    #[serde(rename = "return")]
    pub return_sum: f64,
}

pub fn write_episode_rows<W: Write>(w: W, rows: &[EpisodeRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}
