//! Serial-chain manipulator model in product-of-exponentials form.
//!
//! Link frames coincide with the spatial frame at `q = 0`, so each link's
//! centre of mass and inertia tensor are given in world-aligned axes at the
//! zero configuration.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix6xX};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{ad, adjoint, exp_se3, hat3, log_se3, Frame, Mat3, Mat6, Pose, Rotation, Twist, Vec3, Vec6};

/// Largest admissible condition number of `J_b` in [`operational_space`].
pub const CONDITION_LIMIT: f64 = 1e6;
/// Joint speed norm above which [`step`] reports a blow-up.
pub const BLOWUP_SPEED: f64 = 1e4;
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct LinkInertia {
    pub mass: f64,
    pub com: Vec3,
    pub inertia: Mat3,
}

impl LinkInertia {
    pub fn new(mass: f64, com: Vec3, inertia: Mat3) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidModel(format!("link mass {mass} must be positive")));
        }
        if (inertia - inertia.transpose()).amax() > 1e-12 * (1.0 + inertia.amax()) {
            return Err(Error::InvalidModel("inertia tensor is not symmetric".into()));
        }
        let eig = inertia.symmetric_eigenvalues();
        if eig.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidModel(format!("inertia tensor not positive definite: {eig:?}")));
        }
        let (a, b, c) = (eig[0], eig[1], eig[2]);
        let slack = 1e-12 * (a + b + c);
        if a + b < c - slack || b + c < a - slack || a + c < b - slack {
            return Err(Error::InvalidModel(format!("principal moments violate the triangle inequality: {eig:?}")));
        }
        Ok(LinkInertia { mass, com, inertia })
    }

    /// `diag(m I, I_c)` in a frame at the centre of mass.
    pub fn spatial_inertia(&self) -> Mat6 {
        let mut m = Mat6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Mat3::identity() * self.mass));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.inertia);
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManipulatorModel {
    joint_twists: Vec<Vec6>,
    zero_pose: Pose,
    links: Vec<LinkInertia>,
    gravity: Vec3,
    joint_limits: Vec<(f64, f64)>,
    com_inertias: Vec<Mat6>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub t: f64,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        JointState { q, qdot: DVector::zeros(n), t: 0.0 }
    }
}

/// A 6xn Jacobian tagged with the frame of the twists it produces.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    pub frame: Frame,
}

/// Operational-space terms `(M~, C~, G~)` in the body frame.
#[derive(Clone, Debug, PartialEq)]
pub struct OperationalDynamics {
    pub mass: Mat6,
    pub coriolis: Mat6,
    pub gravity: Vec6,
}

#[derive(Serialize, Deserialize)]
struct JointDoc {
    twist: [f64; 6],
}

#[derive(Serialize, Deserialize)]
struct LinkDoc {
    mass: f64,
    com: [f64; 3],
    inertia: [f64; 9],
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    joints: Vec<JointDoc>,
    zero_pose: Pose,
    links: Vec<LinkDoc>,
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
    #[serde(default)]
    limits: Vec<[f64; 2]>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

/// Twist of a revolute joint with unit axis `w` through point `p`.
pub fn revolute_twist(w: Vec3, p: Vec3) -> Vec6 {
    let w = w.normalize();
    crate::liegroup::stack(&(-w.cross(&p)), &w)
}

impl ManipulatorModel {
    pub fn new(
        joint_twists: Vec<Vec6>,
        zero_pose: Pose,
        links: Vec<LinkInertia>,
        gravity: Vec3,
        joint_limits: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let n = joint_twists.len();
        if n == 0 {
            return Err(Error::InvalidModel("model needs at least one joint".into()));
        }
        if links.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: links.len() });
        }
        if !joint_limits.is_empty() && joint_limits.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: joint_limits.len() });
        }
        if joint_limits.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidModel("joint limit with min >= max".into()));
        }
        for xi in &joint_twists {
            let w = xi.fixed_rows::<3>(3);
            if (w.norm() - 1.0).abs() > 1e-9 || w.dot(&xi.fixed_rows::<3>(0)).abs() > 1e-9 {
                return Err(Error::InvalidModel(format!(
                    "joint twist {:?} is not a unit revolute twist",
                    xi.as_slice()
                )));
            }
        }
        let joint_limits =
            if joint_limits.is_empty() { vec![(-std::f64::consts::PI, std::f64::consts::PI); n] } else { joint_limits };
        let com_inertias = links.iter().map(LinkInertia::spatial_inertia).collect();
        Ok(ManipulatorModel { joint_twists, zero_pose, links, gravity, joint_limits, com_inertias })
    }

    pub fn dof(&self) -> usize {
        self.joint_twists.len()
    }

    pub fn joint_twists(&self) -> &[Vec6] {
        &self.joint_twists
    }

    pub fn zero_pose(&self) -> &Pose {
        &self.zero_pose
    }

    pub fn links(&self) -> &[LinkInertia] {
        &self.links
    }

    pub fn gravity(&self) -> Vec3 {
        self.gravity
    }

    pub fn joint_limits(&self) -> &[(f64, f64)] {
        &self.joint_limits
    }

    pub fn with_gravity(mut self, gravity: Vec3) -> Self {
        self.gravity = gravity;
        self
    }

    /// The reference 6-DOF elbow arm: yaw base, two pitch joints, spherical wrist.
    ///
    /// Shoulder 0.2 m above the base, 0.4 m upper arm and forearm, 0.15 m tool.
    /// At `q = 0` the arm is stretched along +x with the tool pointing down and
    /// the end-effector frame at the peg tip, aligned with the world axes.
    /// The tool link lumps reflected actuator inertia (0.2 kg m^2).
    pub fn reference_arm() -> Self {
        let h = 0.2;
        let (l1, l2, l3) = (0.4, 0.4, 0.15);
        let x = Vec3::x();
        let y = Vec3::y();
        let z = Vec3::z();
        let shoulder = Vec3::new(0.0, 0.0, h);
        let elbow = Vec3::new(l1, 0.0, h);
        let wrist = Vec3::new(l1 + l2, 0.0, h);
        let twists = vec![
            revolute_twist(z, Vec3::zeros()),
            revolute_twist(y, shoulder),
            revolute_twist(y, elbow),
            revolute_twist(y, wrist),
            revolute_twist(x, wrist),
            revolute_twist(z, wrist),
        ];
        let diag = |a: f64, b: f64, c: f64| Mat3::from_diagonal(&Vec3::new(a, b, c));
        let links = vec![
            LinkInertia::new(4.0, Vec3::new(0.0, 0.0, 0.1), diag(0.03, 0.03, 0.02)),
            LinkInertia::new(3.0, Vec3::new(0.2, 0.0, h), diag(0.004, 0.042, 0.042)),
            LinkInertia::new(2.0, Vec3::new(0.6, 0.0, h), diag(0.002, 0.027, 0.027)),
            LinkInertia::new(0.6, wrist, diag(0.001, 0.001, 0.001)),
            LinkInertia::new(0.6, wrist, diag(0.001, 0.001, 0.001)),
            LinkInertia::new(1.0, Vec3::new(l1 + l2, 0.0, h - 0.1), diag(0.2, 0.2, 0.2)),
        ]
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .expect("reference inertias are valid");
        let zero_pose = Pose::from_translation(Vec3::new(l1 + l2, 0.0, h - l3));
        let limits = vec![(-2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI); 6];
        ManipulatorModel::new(twists, zero_pose, links, Vec3::new(0.0, 0.0, -9.81), limits)
            .expect("reference arm is valid")
    }

    /// Point-mass pendulum of length `l` swinging about world y, hanging along -z at `q = 0`.
    pub fn pendulum(mass: f64, length: f64) -> Result<Self> {
        // A vanishing but positive inertia keeps the link tensor SPD.
        let eps = 1e-12;
        let link = LinkInertia::new(mass, Vec3::new(0.0, 0.0, -length), Mat3::identity() * eps)?;
        ManipulatorModel::new(
            vec![revolute_twist(Vec3::y(), Vec3::zeros())],
            Pose::from_translation(Vec3::new(0.0, 0.0, -length)),
            vec![link],
            Vec3::new(0.0, 0.0, -9.81),
            vec![],
        )
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        let twists = doc.joints.iter().map(|j| Vec6::from(j.twist)).collect();
        let links = doc
            .links
            .iter()
            .map(|l| LinkInertia::new(l.mass, Vec3::from(l.com), Mat3::from_row_slice(&l.inertia)))
            .collect::<Result<Vec<_>>>()?;
        let limits = doc.limits.iter().map(|l| (l[0], l[1])).collect();
        ManipulatorModel::new(twists, doc.zero_pose, links, Vec3::from(doc.gravity), limits)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            joints: self.joint_twists.iter().map(|t| JointDoc { twist: (*t).into() }).collect(),
            zero_pose: self.zero_pose,
            links: self
                .links
                .iter()
                .map(|l| {
                    let mut inertia = [0.0; 9];
                    for r in 0..3 {
                        for c in 0..3 {
                            inertia[3 * r + c] = l.inertia[(r, c)];
                        }
                    }
                    LinkDoc { mass: l.mass, com: l.com.into(), inertia }
                })
                .collect(),
            gravity: self.gravity.into(),
            limits: self.joint_limits.iter().map(|&(a, b)| [a, b]).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ManipulatorModel::from_json(&std::fs::read_to_string(path)?)
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dof() {
            return Err(Error::DimensionMismatch { expected: self.dof(), found: v.len() });
        }
        Ok(())
    }
}

/// Per-configuration kinematic quantities shared by the dynamics routines.
struct Chain {
    /// `prefix[i] = exp(xi_1 q_1) ... exp(xi_i q_i)`, `prefix[0] = I`.
    prefix: Vec<Pose>,
    /// Spatial Jacobian columns `Ad_{prefix[i]} xi_{i+1}`.
    cols: Vec<Vec6>,
}

impl Chain {
    fn new(model: &ManipulatorModel, q: &DVector<f64>) -> Self {
        let n = model.dof();
        let mut prefix = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(n);
        prefix.push(Pose::identity());
        for (i, xi) in model.joint_twists.iter().enumerate() {
            let p = prefix[i];
            cols.push(adjoint(&p) * xi);
            prefix.push(p.compose(&exp_se3(&Twist::from_vector(xi, Frame::Spatial), q[i])));
        }
        Chain { prefix, cols }
    }

    fn ee_pose(&self, model: &ManipulatorModel) -> Pose {
        self.prefix[model.dof()].compose(&model.zero_pose)
    }

    /// Pose of link `i`'s centre-of-mass frame.
    fn com_pose(&self, model: &ManipulatorModel, i: usize) -> Pose {
        self.prefix[i + 1].compose(&Pose::from_translation(model.links[i].com))
    }

    /// Link `i`'s spatial inertia expressed at the spatial origin.
    fn spatial_inertia(&self, model: &ManipulatorModel, i: usize) -> Mat6 {
        let a = adjoint(&self.com_pose(model, i).inverse());
        a.transpose() * model.com_inertias[i] * a
    }

    fn spatial_jacobian(&self) -> DMatrix<f64> {
        let m = Matrix6xX::from_columns(&self.cols);
        DMatrix::from_column_slice(6, self.cols.len(), m.as_slice())
    }
}

pub fn forward_kinematics(model: &ManipulatorModel, q: &DVector<f64>) -> Result<Pose> {
    model.check_dim(q)?;
    Ok(Chain::new(model, q).ee_pose(model))
}

pub fn spatial_jacobian(model: &ManipulatorModel, q: &DVector<f64>) -> Result<Jacobian> {
    model.check_dim(q)?;
    Ok(Jacobian { matrix: Chain::new(model, q).spatial_jacobian(), frame: Frame::Spatial })
}

pub fn body_jacobian(model: &ManipulatorModel, q: &DVector<f64>) -> Result<Jacobian> {
    model.check_dim(q)?;
    let chain = Chain::new(model, q);
    Ok(Jacobian { matrix: body_from_chain(model, &chain), frame: Frame::Body })
}

fn body_from_chain(model: &ManipulatorModel, chain: &Chain) -> DMatrix<f64> {
    let a = adjoint(&chain.ee_pose(model).inverse());
    let mut jb = DMatrix::zeros(6, model.dof());
    for (k, c) in chain.cols.iter().enumerate() {
        jb.set_column(k, &(a * c));
    }
    jb
}

/// Pose and both Jacobians from a single pass over the chain.
pub fn kinematics(model: &ManipulatorModel, q: &DVector<f64>) -> Result<(Pose, Jacobian, Jacobian)> {
    model.check_dim(q)?;
    let chain = Chain::new(model, q);
    Ok((
        chain.ee_pose(model),
        Jacobian { matrix: chain.spatial_jacobian(), frame: Frame::Spatial },
        Jacobian { matrix: body_from_chain(model, &chain), frame: Frame::Body },
    ))
}

fn mass_from_chain(model: &ManipulatorModel, chain: &Chain) -> DMatrix<f64> {
    let n = model.dof();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let inertia = chain.spatial_inertia(model, i);
        for k in 0..=i {
            let p = inertia * chain.cols[k];
            for j in 0..=k {
                let v = chain.cols[j].dot(&p);
                m[(j, k)] += v;
            }
        }
    }
    for k in 0..n {
        for j in 0..k {
            m[(k, j)] = m[(j, k)];
        }
    }
    m
}

pub fn mass_matrix(model: &ManipulatorModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_dim(q)?;
    Ok(mass_from_chain(model, &Chain::new(model, q)))
}

fn gravity_from_chain(model: &ManipulatorModel, chain: &Chain) -> DVector<f64> {
    let n = model.dof();
    let coms: Vec<Vec3> = (0..n).map(|i| chain.com_pose(model, i).pos).collect();
    let g = model.gravity;
    DVector::from_fn(n, |j, _| {
        let v = chain.cols[j].fixed_rows::<3>(0).into_owned();
        let w = chain.cols[j].fixed_rows::<3>(3).into_owned();
        -(j..n).map(|i| model.links[i].mass * g.dot(&(v + w.cross(&coms[i])))).sum::<f64>()
    })
}

/// `dV/dq` for the potential `V = -sum m_i g . c_i(q)`.
pub fn gravity_vector(model: &ManipulatorModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_dim(q)?;
    Ok(gravity_from_chain(model, &Chain::new(model, q)))
}

pub fn potential_energy(model: &ManipulatorModel, q: &DVector<f64>) -> Result<f64> {
    model.check_dim(q)?;
    let chain = Chain::new(model, q);
    Ok(-(0..model.dof()).map(|i| model.links[i].mass * model.gravity.dot(&chain.com_pose(model, i).pos)).sum::<f64>())
}

pub fn kinetic_energy(model: &ManipulatorModel, state: &JointState) -> Result<f64> {
    let m = mass_matrix(model, &state.q)?;
    Ok(0.5 * state.qdot.dot(&(m * &state.qdot)))
}

/// Christoffel-form Coriolis matrix from central differences of `M`.
pub fn coriolis_matrix(model: &ManipulatorModel, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_dim(q)?;
    model.check_dim(qdot)?;
    let n = model.dof();
    let dm: Vec<DMatrix<f64>> = (0..n)
        .map(|k| {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += FD_STEP;
            qm[k] -= FD_STEP;
            let mp = mass_from_chain(model, &Chain::new(model, &qp));
            let mm = mass_from_chain(model, &Chain::new(model, &qm));
            (mp - mm) / (2.0 * FD_STEP)
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qdot[k]).sum()
    }))
}

/// Velocity-product torques `C(q, qdot) qdot` from spatial Newton-Euler terms.
fn bias_from_chain(model: &ManipulatorModel, chain: &Chain, qdot: &DVector<f64>) -> DVector<f64> {
    let n = model.dof();
    let mut tau = DVector::zeros(n);
    let mut v = Vec6::zeros();
    let mut a = Vec6::zeros();
    for i in 0..n {
        // acceleration from joint-axis motion: d/dt S_i = ad_{V_{i-1}} S_i
        a += ad(&v) * chain.cols[i] * qdot[i];
        v += chain.cols[i] * qdot[i];
        let inertia = chain.spatial_inertia(model, i);
        let w = inertia * a - ad(&v).transpose() * (inertia * v);
        for j in 0..=i {
            tau[j] += chain.cols[j].dot(&w);
        }
    }
    tau
}

/// `C(q, qdot) qdot` without forming `C`.
pub fn coriolis_forces(model: &ManipulatorModel, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_dim(q)?;
    model.check_dim(qdot)?;
    Ok(bias_from_chain(model, &Chain::new(model, q), qdot))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = m.clone().svd(false, false).singular_values;
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn operational_space(
    model: &ManipulatorModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<OperationalDynamics> {
    model.check_dim(q)?;
    model.check_dim(qdot)?;
    if model.dof() != 6 {
        return Err(Error::DimensionMismatch { expected: 6, found: model.dof() });
    }
    let chain = Chain::new(model, q);
    let jb = body_from_chain(model, &chain);
    let cond = condition_number(&jb);
    if !(cond < CONDITION_LIMIT) {
        return Err(Error::SingularJacobian(cond));
    }
    let jb_inv = jb.clone().try_inverse().ok_or(Error::SingularJacobian(f64::INFINITY))?;
    let jb_dot = {
        let qp = q + qdot * FD_STEP;
        let qm = q - qdot * FD_STEP;
        (body_from_chain(model, &Chain::new(model, &qp)) - body_from_chain(model, &Chain::new(model, &qm)))
            / (2.0 * FD_STEP)
    };
    let m = mass_from_chain(model, &chain);
    let c = coriolis_matrix(model, q, qdot)?;
    let g = gravity_from_chain(model, &chain);
    let jt_inv = jb_inv.transpose();
    let mt = &jt_inv * &m * &jb_inv;
    let ct = &jt_inv * (c - &m * &jb_inv * jb_dot) * &jb_inv;
    let gt = &jt_inv * g;
    Ok(OperationalDynamics {
        mass: Mat6::from_iterator(mt.iter().cloned()),
        coriolis: Mat6::from_iterator(ct.iter().cloned()),
        gravity: Vec6::from_iterator(gt.iter().cloned()),
    })
}

/// One semi-implicit Euler step of `M qddot + C qdot + G = T + T_e`.
pub fn step(
    model: &ManipulatorModel,
    state: &JointState,
    torque: &DVector<f64>,
    external_torque: &DVector<f64>,
    dt: f64,
) -> Result<JointState> {
    model.check_dim(&state.q)?;
    model.check_dim(&state.qdot)?;
    model.check_dim(torque)?;
    model.check_dim(external_torque)?;
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::InvalidConfig(format!("dt {dt} outside (0, 0.01]")));
    }
    let chain = Chain::new(model, &state.q);
    let m = mass_from_chain(model, &chain);
    let rhs =
        torque + external_torque - bias_from_chain(model, &chain, &state.qdot) - gravity_from_chain(model, &chain);
    let qddot = m.cholesky().ok_or(Error::NotPositiveDefinite)?.solve(&rhs);
    let qdot = &state.qdot + qddot * dt;
    let speed = qdot.norm();
    if !(speed <= BLOWUP_SPEED) {
        return Err(Error::NumericalBlowup(speed));
    }
    let q = &state.q + &qdot * dt;
    Ok(JointState { q, qdot, t: state.t + dt })
}

/// Damped Newton iteration on the body-frame log error.
pub fn inverse_kinematics(model: &ManipulatorModel, target: &Pose, seed: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_dim(seed)?;
    let n = model.dof();
    let mut q = seed.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..200 {
        let chain = Chain::new(model, &q);
        let g = chain.ee_pose(model);
        let err = match log_se3(&g.inverse().compose(target)) {
            Ok(t) => t.to_vector(),
            // half-turn away: nudge with a fixed rotation error
            Err(_) => Vec6::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        };
        residual = err.norm();
        if residual < 1e-12 {
            return Ok(q);
        }
        let err = if residual > 0.2 { err * (0.2 / residual) } else { err };
        let jb = body_from_chain(model, &chain);
        let e = DVector::from_column_slice(err.as_slice());
        let lambda2 = 1e-8;
        let a = jb.transpose() * &jb + DMatrix::identity(n, n) * lambda2;
        let dq = a.cholesky().ok_or(Error::IkFailed(residual))?.solve(&(jb.transpose() * e));
        q += dq;
    }
    if residual < 1e-9 {
        Ok(q)
    } else {
        Err(Error::IkFailed(residual))
    }
}

/// Inverse kinematics solved along the geodesic from `start` (reached at `seed`)
/// to `target`, reusing each solution as the next seed.
pub fn inverse_kinematics_continuation(
    model: &ManipulatorModel,
    start: &Pose,
    seed: &DVector<f64>,
    target: &Pose,
    steps: usize,
) -> Result<DVector<f64>> {
    let delta = log_se3(&start.inverse().compose(target))?;
    let mut q = inverse_kinematics(model, start, seed)?;
    for k in 1..=steps.max(1) {
        let s = k as f64 / steps.max(1) as f64;
        let waypoint = start.compose(&exp_se3(&delta, s));
        q = inverse_kinematics(model, &waypoint, &q)?;
    }
    Ok(q)
}

/// Brute-force `prod exp(xi_i^ q_i) g(0)` via scaling-and-squaring of the 4x4 matrices.
pub fn forward_kinematics_matrix_oracle(model: &ManipulatorModel, q: &DVector<f64>) -> Result<Pose> {
    model.check_dim(q)?;
    let mut g = nalgebra::Matrix4::<f64>::identity();
    for (xi, qi) in model.joint_twists.iter().zip(q.iter()) {
        let mut x = nalgebra::Matrix4::<f64>::zeros();
        x.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&Vec3::new(xi[3], xi[4], xi[5])));
        x.fixed_view_mut::<3, 1>(0, 3).copy_from(&Vec3::new(xi[0], xi[1], xi[2]));
        g *= matrix_exp(&(x * *qi));
    }
    let m = g * model.zero_pose.matrix();
    Ok(Pose::new(
        Rotation::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned()),
        m.fixed_view::<3, 1>(0, 3).into_owned(),
    ))
}

fn matrix_exp(a: &nalgebra::Matrix4<f64>) -> nalgebra::Matrix4<f64> {
    let norm = a.abs().row_sum().max();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(s);
    let mut term = nalgebra::Matrix4::identity();
    let mut sum = nalgebra::Matrix4::identity();
    for k in 1..30 {
        term = term * b / k as f64;
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}
