//! Control laws: geometric impedance (full tracking and regulation), the
//! Cartesian benchmark, geometric admittance, and the action-to-gain mapping.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Jacobian, OperationalDynamics};
use crate::error::{Error, Result};
use crate::liegroup::{
    adjoint, cartesian_error, elastic_wrench, exp_se3, relative, velocity_error, Frame, Mat6, Pose, Twist, Vec3, Vec6,
    Wrench,
};

/// Desired admittance inertia `diag(1, 1, 1, 0.1, 0.1, 0.1)` (kg, kg m^2).
pub const DEFAULT_ADMITTANCE_INERTIA: [f64; 6] = [1.0, 1.0, 1.0, 0.1, 0.1, 0.1];

/// Damped least squares factor and activation threshold on the smallest singular value.
pub const DLS_LAMBDA: f64 = 0.01;
pub const DLS_THRESHOLD: f64 = 0.01;

const FD_STEP: f64 = 1e-6;

/// Diagonal stiffness pair `(K_p, K_R)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceGains {
    pub kp: Vec3,
    pub kr: Vec3,
}

impl ImpedanceGains {
    pub fn new(kp: Vec3, kr: Vec3) -> Result<Self> {
        if kp.iter().chain(kr.iter()).any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(Error::InvalidConfig(format!("stiffness entries must be positive: kp={kp:?}, kr={kr:?}")));
        }
        Ok(ImpedanceGains { kp, kr })
    }

    /// `(kp1, kp2, kp3, kr1, kr2, kr3)`.
    pub fn to_vector(&self) -> Vec6 {
        crate::liegroup::stack(&self.kp, &self.kr)
    }
}

/// A gain-scheduling action in `[-1, 1]^6`. Out-of-range input is clamped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action(Vec6);

impl Action {
    pub fn new(a: Vec6) -> Self {
        Action(a.map(|x| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) }))
    }

    pub fn splat(x: f64) -> Self {
        Action::new(Vec6::repeat(x))
    }

    pub fn as_vector(&self) -> &Vec6 {
        &self.0
    }

    pub fn to_array(&self) -> [f64; 6] {
        self.0.into()
    }
}

impl From<[f64; 6]> for Action {
    fn from(a: [f64; 6]) -> Self {
        Action::new(Vec6::from(a))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Gic,
    Cic,
    Gac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Gcev,
    Cev,
}

impl ErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorKind::Gcev => "gcev",
            ErrorKind::Cev => "cev",
        }
    }

    /// The policy input for this error kind.
    pub fn evaluate(&self, g: &Pose, g_d: &Pose) -> Vec6 {
        match self {
            ErrorKind::Gcev => crate::liegroup::gcev(g, g_d),
            ErrorKind::Cev => cartesian_error(g, g_d),
        }
    }
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Gic => "gic",
            ControllerKind::Cic => "cic",
            ControllerKind::Gac => "gac",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gic" => Ok(ControllerKind::Gic),
            "cic" => Ok(ControllerKind::Cic),
            "gac" => Ok(ControllerKind::Gac),
            other => Err(Error::InvalidConfig(format!("unknown controller {other:?}"))),
        }
    }
}

impl FromStr for ErrorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcev" => Ok(ErrorKind::Gcev),
            "cev" => Ok(ErrorKind::Cev),
            other => Err(Error::InvalidConfig(format!("unknown error vector {other:?}"))),
        }
    }
}

/// Log-scale action mapping:
/// `kp_{1,2} = 10^(a + 2.5)`, `kp_3 = 10^(1.5 a + 2)`, `kr_j = 10^(0.6 a + 2)`.
pub fn action_to_gains(a: &Action) -> ImpedanceGains {
    let a = a.as_vector();
    let p10 = |x: f64| 10f64.powf(x);
    ImpedanceGains {
        kp: Vec3::new(p10(a[0] + 2.5), p10(a[1] + 2.5), p10(1.5 * a[2] + 2.0)),
        kr: Vec3::new(p10(0.6 * a[3] + 2.0), p10(0.6 * a[4] + 2.0), p10(0.6 * a[5] + 2.0)),
    }
}

/// `K_d = 8 diag(kp, kr)^0.5`.
pub fn damping_from_gains(g: &ImpedanceGains) -> Mat6 {
    Mat6::from_diagonal(&g.to_vector().map(|k| 8.0 * k.sqrt()))
}

/// Regulation law `T = -f_G - K_d V^b + G~` (body frame).
pub fn gic_regulation(g: &Pose, g_d: &Pose, v_b: &Twist, gains: &ImpedanceGains, g_tilde: &Wrench) -> Result<Wrench> {
    v_b.expect_frame(Frame::Body)?;
    g_tilde.expect_frame(Frame::Body)?;
    let f_g = elastic_wrench(g, g_d, gains).to_vector();
    let t = -f_g - damping_from_gains(gains) * v_b.to_vector() + g_tilde.to_vector();
    Ok(Wrench::from_vector(&t, Frame::Body))
}

/// `Ad_{g_bd} V_d^b`, the desired velocity translated onto the current body frame.
pub fn translated_desired_velocity(g: &Pose, g_d: &Pose, v_d_b: &Twist) -> Vec6 {
    adjoint(&relative(g, g_d)) * v_d_b.to_vector()
}

/// Full tracking law
/// `T = M~ dV*_d + C~ V*_d + G~ - f_G - K_d e_V`.
///
/// `dV*_d` is the time derivative of the translated desired velocity, taken by
/// central differences along the flows `g exp(t V^b)` and `g_d exp(t V_d^b)`.
pub fn gic_full(
    dynamics: &OperationalDynamics,
    g: &Pose,
    g_d: &Pose,
    v_b: &Twist,
    v_d_b: &Twist,
    vdot_d_b: &Twist,
    gains: &ImpedanceGains,
) -> Result<Wrench> {
    v_b.expect_frame(Frame::Body)?;
    v_d_b.expect_frame(Frame::Body)?;
    vdot_d_b.expect_frame(Frame::Body)?;
    let v_star = translated_desired_velocity(g, g_d, v_d_b);
    let at = |h: f64| {
        let gh = g.compose(&exp_se3(v_b, h));
        let gdh = g_d.compose(&exp_se3(v_d_b, h));
        let vd = Twist::from_vector(&(v_d_b.to_vector() + vdot_d_b.to_vector() * h), Frame::Body);
        translated_desired_velocity(&gh, &gdh, &vd)
    };
    let v_star_dot = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
    let e_v = velocity_error(g, g_d, v_b, v_d_b)?.to_vector();
    let f_g = elastic_wrench(g, g_d, gains).to_vector();
    let t = dynamics.mass * v_star_dot + dynamics.coriolis * v_star + dynamics.gravity
        - f_g
        - damping_from_gains(gains) * e_v;
    Ok(Wrench::from_vector(&t, Frame::Body))
}

/// Cartesian benchmark `T_C = -K_C e_C - K_dC V^s + G~_C` (spatial frame).
pub fn cic(g: &Pose, g_d: &Pose, v_s: &Twist, gains: &ImpedanceGains, g_tilde_c: &Wrench) -> Result<Wrench> {
    v_s.expect_frame(Frame::Spatial)?;
    g_tilde_c.expect_frame(Frame::Spatial)?;
    let k_c = Mat6::from_diagonal(&gains.to_vector());
    let t = -k_c * cartesian_error(g, g_d) - damping_from_gains(gains) * v_s.to_vector() + g_tilde_c.to_vector();
    Ok(Wrench::from_vector(&t, Frame::Spatial))
}

/// Joint torque `J^T w`; the Jacobian frame must match the wrench frame.
pub fn wrench_to_torque(jacobian: &Jacobian, w: &Wrench) -> Result<DVector<f64>> {
    w.expect_frame(jacobian.frame)?;
    Ok(jacobian.matrix.transpose() * w.to_vector())
}

/// One discrete step of the admittance dynamics
/// `M dV^b + K_d V^b + f_G = T_e`:
/// `V(k+1) = V(k) + dt M^{-1} (T_e(k) - K_d V(k) - f_G(k))`.
pub fn gac_step(
    v_b: &Twist,
    g: &Pose,
    g_d: &Pose,
    m_des: &Mat6,
    gains: &ImpedanceGains,
    t_e: &Wrench,
    dt: f64,
) -> Result<Twist> {
    v_b.expect_frame(Frame::Body)?;
    t_e.expect_frame(Frame::Body)?;
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::InvalidConfig(format!("dt {dt} outside (0, 0.01]")));
    }
    let chol = m_des.cholesky().ok_or_else(|| Error::InvalidConfig("admittance inertia must be SPD".into()))?;
    let v = v_b.to_vector();
    let rhs = t_e.to_vector() - damping_from_gains(gains) * v - elastic_wrench(g, g_d, gains).to_vector();
    Ok(Twist::from_vector(&(v + chol.solve(&rhs) * dt), Frame::Body))
}

/// `qdot_d = J_b^{-1} V^b`, switching to damped least squares
/// `(J^T J + lambda^2 I)^{-1} J^T V` when the smallest singular value drops below
/// [`DLS_THRESHOLD`].
pub fn desired_joint_velocity(j_b: &DMatrix<f64>, v_b: &Twist) -> DVector<f64> {
    let v = DVector::from_column_slice(v_b.to_vector().as_slice());
    let n = j_b.ncols();
    let svd = j_b.clone().svd(false, false);
    let sigma_min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if n == 6 && sigma_min >= DLS_THRESHOLD {
        if let Some(x) = j_b.clone().lu().solve(&v) {
            return x;
        }
    }
    let jt = j_b.transpose();
    let a = &jt * j_b + DMatrix::identity(n, n) * (DLS_LAMBDA * DLS_LAMBDA);
    a.cholesky().map(|c| c.solve(&(jt * v))).unwrap_or_else(|| DVector::zeros(n))
}

/// Joint-space velocity loop `T = K_v (qd_dot - q_dot) + G(q)` with `K_v = kv I`.
pub fn joint_velocity_pd(qd_dot: &DVector<f64>, q_dot: &DVector<f64>, kv: f64, gravity: &DVector<f64>) -> DVector<f64> {
    (qd_dot - q_dot) * kv + gravity
}
