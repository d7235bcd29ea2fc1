//! SE(3) and SO(3) algebra.
//!
//! Twists are ordered `(v, w)` (linear first, angular second) everywhere, and
//! so are wrenches `(f, tau)`. The 6x6 adjoint uses the matching block form
//! `[[R, p^ R], [0, R]]`.
//!
//! Besides the group operations this module hosts the pose-error quantities
//! consumed by the controllers: the geometrically consistent error vector
//! ([`gcev`]), the distance metric ([`distance`]), the elastic wrench
//! ([`elastic_wrench`]), the translated velocity error ([`velocity_error`]) and
//! the Cartesian benchmark error ([`cartesian_error`]).

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::control::ImpedanceGains;
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;
pub type Mat6 = Matrix6<f64>;

/// Tolerance for membership checks (orthonormality, determinant).
pub const GROUP_TOL: f64 = 1e-9;
/// Tolerance for skew / se(3) shape checks in `vee3` and `vee6`.
pub const SHAPE_TOL: f64 = 1e-8;
/// Principal-branch cutoff for the logarithm.
pub const LOG_PI_MARGIN: f64 = 1e-6;
/// Re-orthonormalize a rotation once its drift exceeds this.
pub const DRIFT_TOL: f64 = 1e-8;

const TAYLOR_CUTOFF: f64 = 1e-3;

/// Coordinate frame a twist or wrench is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Body,
    Spatial,
}

/// An element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates `m` against `R R^T = I` and `det R = 1` (tolerance [`GROUP_TOL`]).
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let r = Rotation(m);
        let drift = r.orthonormality_error();
        let det = m.determinant();
        if drift > GROUP_TOL || (det - 1.0).abs() > GROUP_TOL {
            return Err(Error::InvalidModel(format!("not a rotation: |RR^T - I| = {drift:e}, det = {det}")));
        }
        Ok(r)
    }

    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Rotation by `angle` about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        exp_so3(&(axis * (angle / n)))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle)
    }

    /// Builds a rotation from a quaternion `[w, x, y, z]`; the input is normalized.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Rotation(*uq.to_rotation_matrix().matrix())
    }

    /// Unit quaternion `[w, x, y, z]` with the canonical sign `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0));
        let q = uq.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        // acos loses precision near 0; use the skew part there.
        let s = 0.5 * vee3_unchecked(&(self.0 - self.0.transpose())).norm();
        s.atan2(c)
    }

    /// Principal logarithm as a rotation vector.
    pub fn log(&self) -> Result<Vec3> {
        let theta = self.angle();
        if theta >= std::f64::consts::PI - LOG_PI_MARGIN {
            return Err(Error::NearPiRotation(theta));
        }
        let skew = vee3_unchecked(&(self.0 - self.0.transpose()));
        // skew = 2 sin(theta) * axis
        let k = if theta < TAYLOR_CUTOFF {
            let t2 = theta * theta;
            0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
        } else {
            0.5 * theta / theta.sin()
        };
        Ok(skew * k)
    }

    /// `||R R^T - I||_inf` (max absolute entry).
    pub fn orthonormality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Mat3::identity()).amax()
    }

    /// Nearest rotation in the Frobenius sense (polar projection).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let u = svd.u.expect("svd u");
        let vt = svd.v_t.expect("svd v_t");
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut d = Mat3::identity();
            d[(2, 2)] = -1.0;
            r = u * d * vt;
        }
        Rotation(r)
    }

    /// Uniformly distributed rotation (normalized Gaussian quaternion).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q: [f64; 4] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                return Self::from_quaternion(q);
            }
        }
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// An element of SE(3): `g = (R, p)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rot: Rotation,
    pub pos: Vec3,
}

impl Pose {
    pub fn new(rot: Rotation, pos: Vec3) -> Self {
        Pose { rot, pos }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(p: Vec3) -> Self {
        Pose::new(Rotation::identity(), p)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Pose::new(r, Vec3::zeros())
    }

    /// Homogeneous 4x4 representation.
    pub fn matrix(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rot.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.pos);
        m
    }

    pub fn from_matrix(m: &Mat4) -> Result<Self> {
        let bottom = (m[(3, 0)].abs()).max(m[(3, 1)].abs()).max(m[(3, 2)].abs()).max((m[(3, 3)] - 1.0).abs());
        if bottom > GROUP_TOL {
            return Err(Error::InvalidModel(format!("homogeneous matrix bottom row deviates by {bottom:e}")));
        }
        let rot = Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(Pose::new(rot, m.fixed_view::<3, 1>(0, 3).into_owned()))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }

    pub fn adjoint(&self) -> Mat6 {
        adjoint(self)
    }

    pub fn transform_point(&self, x: &Vec3) -> Vec3 {
        self.rot.matrix() * x + self.pos
    }

    /// Projects the rotation back onto SO(3) when drift exceeds [`DRIFT_TOL`].
    pub fn repaired(&self) -> Pose {
        if self.rot.orthonormality_error() > DRIFT_TOL {
            Pose::new(self.rot.orthonormalized(), self.pos)
        } else {
            *self
        }
    }

    /// Random pose: uniform rotation, translation uniform in `[-half_extent, half_extent]^3`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, half_extent: f64) -> Self {
        let rot = Rotation::random(rng);
        let pos = Vec3::new(
            rng.random_range(-half_extent..=half_extent),
            rng.random_range(-half_extent..=half_extent),
            rng.random_range(-half_extent..=half_extent),
        );
        Pose::new(rot, pos)
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        compose(&self, &rhs)
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    p: [f64; 3],
    q: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRepr { p: [self.pos.x, self.pos.y, self.pos.z], q: self.rot.to_quaternion() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        let n = r.q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 1e-12) {
            return Err(serde::de::Error::custom("quaternion has zero norm"));
        }
        Ok(Pose::new(Rotation::from_quaternion(r.q), Vec3::from(r.p)))
    }
}

/// A twist `(v, w)` tagged with the frame it is expressed in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub v: Vec3,
    pub w: Vec3,
    pub frame: Frame,
}

impl Twist {
    pub fn new(v: Vec3, w: Vec3, frame: Frame) -> Self {
        Twist { v, w, frame }
    }

    pub fn body(v: Vec3, w: Vec3) -> Self {
        Twist::new(v, w, Frame::Body)
    }

    pub fn spatial(v: Vec3, w: Vec3) -> Self {
        Twist::new(v, w, Frame::Spatial)
    }

    pub fn zero(frame: Frame) -> Self {
        Twist::new(Vec3::zeros(), Vec3::zeros(), frame)
    }

    pub fn from_vector(x: &Vec6, frame: Frame) -> Self {
        Twist::new(x.fixed_rows::<3>(0).into_owned(), x.fixed_rows::<3>(3).into_owned(), frame)
    }

    pub fn to_vector(&self) -> Vec6 {
        stack(&self.v, &self.w)
    }

    pub fn expect_frame(&self, frame: Frame) -> Result<()> {
        if self.frame == frame {
            Ok(())
        } else {
            Err(Error::FrameMismatch { expected: frame, found: self.frame })
        }
    }
}

/// A wrench `(f, tau)` tagged with the frame it is expressed in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wrench {
    pub f: Vec3,
    pub tau: Vec3,
    pub frame: Frame,
}

impl Wrench {
    pub fn new(f: Vec3, tau: Vec3, frame: Frame) -> Self {
        Wrench { f, tau, frame }
    }

    pub fn zero(frame: Frame) -> Self {
        Wrench::new(Vec3::zeros(), Vec3::zeros(), frame)
    }

    pub fn from_vector(x: &Vec6, frame: Frame) -> Self {
        Wrench::new(x.fixed_rows::<3>(0).into_owned(), x.fixed_rows::<3>(3).into_owned(), frame)
    }

    pub fn to_vector(&self) -> Vec6 {
        stack(&self.f, &self.tau)
    }

    pub fn expect_frame(&self, frame: Frame) -> Result<()> {
        if self.frame == frame {
            Ok(())
        } else {
            Err(Error::FrameMismatch { expected: frame, found: self.frame })
        }
    }
}

pub(crate) fn stack(a: &Vec3, b: &Vec3) -> Vec6 {
    Vec6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

pub fn hat3(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat3`]. Returns the vee of the skew part of `m`.
pub fn vee3(m: &Mat3) -> Result<Vec3> {
    let asym = (m + m.transpose()).amax();
    if asym > SHAPE_TOL {
        return Err(Error::NotSkew(asym));
    }
    Ok(0.5 * vee3_unchecked(&(m - m.transpose())))
}

// (m32, m13, m21) without the symmetry check.
fn vee3_unchecked(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Skew part `(m - m^T)^vee / 2`; used where the argument is skew by construction.
fn vee3_skew(m: &Mat3) -> Vec3 {
    0.5 * vee3_unchecked(&(m - m.transpose()))
}

pub fn hat6(xi: &Twist) -> Mat4 {
    let mut m = Mat4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&xi.w));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.v);
    m
}

/// Inverse of [`hat6`]; the result is tagged [`Frame::Body`].
pub fn vee6(m: &Mat4) -> Result<Twist> {
    let bottom = m.row(3).amax();
    if bottom > SHAPE_TOL {
        return Err(Error::MalformedSe3(bottom));
    }
    let w = vee3(&m.fixed_view::<3, 3>(0, 0).into_owned())?;
    Ok(Twist::body(m.fixed_view::<3, 1>(0, 3).into_owned(), w))
}

/// `exp(w^)` via Rodrigues' formula.
pub fn exp_so3(w: &Vec3) -> Rotation {
    let (a, b, _) = exp_coefficients(w.norm());
    let k = hat3(w);
    Rotation(Mat3::identity() + k * a + k * k * b)
}

// sin(t)/t, (1 - cos t)/t^2, (t - sin t)/t^3
fn exp_coefficients(t: f64) -> (f64, f64, f64) {
    if t < TAYLOR_CUTOFF {
        let t2 = t * t;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
    } else {
        let (s, c) = t.sin_cos();
        (s / t, (1.0 - c) / (t * t), (t - s) / (t * t * t))
    }
}

/// `exp(xi^ theta)` in closed form.
pub fn exp_se3(xi: &Twist, theta: f64) -> Pose {
    let w = xi.w * theta;
    let v = xi.v * theta;
    let (a, b, c) = exp_coefficients(w.norm());
    let k = hat3(&w);
    let k2 = k * k;
    let rot = Mat3::identity() + k * a + k2 * b;
    let left_jac = Mat3::identity() + k * b + k2 * c;
    Pose::new(Rotation(rot), left_jac * v)
}

/// Principal logarithm; errors within [`LOG_PI_MARGIN`] of a half-turn.
pub fn log_se3(g: &Pose) -> Result<Twist> {
    let w = g.rot.log()?;
    let t = w.norm();
    let k = hat3(&w);
    // V^{-1} = I - K/2 + c K^2, c = (1 - t sin t / (2 (1 - cos t))) / t^2
    let c = if t < TAYLOR_CUTOFF {
        let t2 = t * t;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let (s, co) = t.sin_cos();
        (1.0 - t * s / (2.0 * (1.0 - co))) / (t * t)
    };
    let v_inv = Mat3::identity() - k * 0.5 + k * k * c;
    Ok(Twist::body(v_inv * g.pos, w))
}

pub fn compose(g1: &Pose, g2: &Pose) -> Pose {
    Pose::new(Rotation(g1.rot.0 * g2.rot.0), g1.rot.0 * g2.pos + g1.pos)
}

pub fn inverse(g: &Pose) -> Pose {
    let rt = g.rot.0.transpose();
    Pose::new(Rotation(rt), -(rt * g.pos))
}

/// `Ad_g = [[R, p^ R], [0, R]]`.
pub fn adjoint(g: &Pose) -> Mat6 {
    let r = g.rot.0;
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(hat3(&g.pos) * r));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    m
}

/// Lie bracket matrix `ad_xi = [[w^, v^], [0, w^]]` for `xi = (v, w)`.
pub fn ad(xi: &Vec6) -> Mat6 {
    let v = Vec3::new(xi[0], xi[1], xi[2]);
    let w = Vec3::new(xi[3], xi[4], xi[5]);
    let wh = hat3(&w);
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&wh);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat3(&v));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&wh);
    m
}

/// Geometrically consistent error vector `(R^T (p - p_d), (R_d^T R - R^T R_d)^vee)`.
pub fn gcev(g: &Pose, g_d: &Pose) -> Vec6 {
    let r = g.rot.0;
    let rd = g_d.rot.0;
    let e_p = r.transpose() * (g.pos - g_d.pos);
    let rdt_r = rd.transpose() * r;
    let e_r = vee3_skew(&(rdt_r - rdt_r.transpose()));
    stack(&e_p, &e_r)
}

/// `tr(I - R_d^T R) + 1/2 |p - p_d|^2`.
pub fn distance(g: &Pose, g_d: &Pose) -> f64 {
    let rdt_r = g_d.rot.0.transpose() * g.rot.0;
    let dp = g.pos - g_d.pos;
    (3.0 - rdt_r.trace()) + 0.5 * dp.dot(&dp)
}

/// Elastic geometric wrench (body frame):
/// `f_p = R^T R_d K_p R_d^T (p - p_d)`, `f_R = (K_R R_d^T R - R^T R_d K_R)^vee`.
pub fn elastic_wrench(g: &Pose, g_d: &Pose, gains: &ImpedanceGains) -> Wrench {
    let r = g.rot.0;
    let rd = g_d.rot.0;
    let kp = Mat3::from_diagonal(&gains.kp);
    let kr = Mat3::from_diagonal(&gains.kr);
    let rbd = r.transpose() * rd;
    let f_p = rbd * kp * (rd.transpose() * (g.pos - g_d.pos));
    let a = kr * rbd.transpose();
    let f_r = vee3_skew(&(a - a.transpose()));
    Wrench::new(f_p, f_r, Frame::Body)
}

/// Relative pose `g_bd = g^{-1} g_d`.
pub fn relative(g: &Pose, g_d: &Pose) -> Pose {
    let rt = g.rot.0.transpose();
    Pose::new(Rotation(rt * g_d.rot.0), rt * (g_d.pos - g.pos))
}

/// `e_V = V^b - Ad_{g_bd} V_d^b`; both twists must be body-framed.
pub fn velocity_error(g: &Pose, g_d: &Pose, v_b: &Twist, v_d_b: &Twist) -> Result<Twist> {
    v_b.expect_frame(Frame::Body)?;
    v_d_b.expect_frame(Frame::Body)?;
    let translated = adjoint(&relative(g, g_d)) * v_d_b.to_vector();
    Ok(Twist::from_vector(&(v_b.to_vector() - translated), Frame::Body))
}

/// Cartesian error `(p - p_d, sum_i r_{d,i} x r_i)` with `r_i` the columns of `R`.
pub fn cartesian_error(g: &Pose, g_d: &Pose) -> Vec6 {
    let mut e_r = Vec3::zeros();
    for i in 0..3 {
        e_r += g_d.rot.column(i).cross(&g.rot.column(i));
    }
    stack(&(g.pos - g_d.pos), &e_r)
}

/// `f^s = Ad_{g^{-1}}^T f^b`.
pub fn wrench_body_to_spatial(g: &Pose, f: &Wrench) -> Result<Wrench> {
    f.expect_frame(Frame::Body)?;
    let x = adjoint(&inverse(g)).transpose() * f.to_vector();
    Ok(Wrench::from_vector(&x, Frame::Spatial))
}

/// `f^b = Ad_g^T f^s`.
pub fn wrench_spatial_to_body(g: &Pose, f: &Wrench) -> Result<Wrench> {
    f.expect_frame(Frame::Spatial)?;
    let x = adjoint(g).transpose() * f.to_vector();
    Ok(Wrench::from_vector(&x, Frame::Body))
}

/// `V^s = Ad_g V^b`.
pub fn twist_body_to_spatial(g: &Pose, v: &Twist) -> Result<Twist> {
    v.expect_frame(Frame::Body)?;
    Ok(Twist::from_vector(&(adjoint(g) * v.to_vector()), Frame::Spatial))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn gains(kp: f64, kr: f64) -> ImpedanceGains {
        ImpedanceGains::new(Vec3::repeat(kp), Vec3::repeat(kr)).unwrap()
    }

    #[test]
    fn hat3_examples() {
        assert_eq!(hat3(&Vec3::zeros()), Mat3::zeros());
        let m = hat3(&Vec3::z());
        assert_eq!(m, Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let w = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(vee3(&hat3(&w)).unwrap(), w);
        let x = Vec3::new(-0.3, 0.7, 2.0);
        assert_relative_eq!(hat3(&w) * x, w.cross(&x), epsilon = 1e-15);
    }

    #[test]
    fn vee3_rejects_non_skew() {
        assert_eq!(vee3(&Mat3::zeros()).unwrap(), Vec3::zeros());
        assert!(matches!(vee3(&Mat3::identity()), Err(Error::NotSkew(_))));
    }

    #[test]
    fn hat6_vee6_round_trip() {
        let xi = Twist::body(Vec3::new(0.1, -2.0, 3.0), Vec3::new(4.0, 0.5, -0.6));
        let m = hat6(&xi);
        assert_eq!(m.row(3).amax(), 0.0);
        assert_eq!(vee6(&m).unwrap(), xi);
        let mut bad = m;
        bad[(3, 1)] = 1e-3;
        assert!(matches!(vee6(&bad), Err(Error::MalformedSe3(_))));
    }

    #[test]
    fn exp_examples() {
        let id = exp_se3(&Twist::zero(Frame::Body), 1.3);
        assert_eq!(id, Pose::identity());
        let g = exp_se3(&Twist::body(Vec3::zeros(), Vec3::z()), FRAC_PI_2);
        assert_relative_eq!(*g.rot.matrix(), *Rotation::rot_z(FRAC_PI_2).matrix(), epsilon = 1e-12);
        assert_relative_eq!(*g.rot.matrix(), Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0), epsilon = 1e-12);
        assert_eq!(g.pos, Vec3::zeros());
    }

    #[test]
    fn exp_matches_series_oracle() {
        // Truncated power series of the 4x4 matrix exponential.
        let xi = Twist::body(Vec3::new(0.3, -0.2, 0.5), Vec3::new(0.4, 1.1, -0.7));
        let a = hat6(&xi) * 0.9;
        let mut term = Mat4::identity();
        let mut sum = Mat4::identity();
        for k in 1..40 {
            term = term * a / k as f64;
            sum += term;
        }
        assert_relative_eq!(exp_se3(&xi, 0.9).matrix(), sum, epsilon = 1e-12);
    }

    #[test]
    fn exp_log_round_trip_random() {
        let mut r = rng();
        for _ in 0..500 {
            let g = Pose::random(&mut r, 2.0);
            if g.rot.angle() >= PI - 1e-3 {
                continue;
            }
            let xi = log_se3(&g).unwrap();
            let back = exp_se3(&xi, 1.0);
            assert_relative_eq!(back.matrix(), g.matrix(), epsilon = 1e-9);
        }
        // Small angles go through the Taylor branches.
        let g = exp_se3(&Twist::body(Vec3::new(1.0, 2.0, 3.0), Vec3::new(1e-5, -2e-5, 3e-6)), 1.0);
        assert_relative_eq!(exp_se3(&log_se3(&g).unwrap(), 1.0).matrix(), g.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn log_rejects_half_turn() {
        let g = Pose::from_rotation(Rotation::rot_x(PI));
        assert!(matches!(log_se3(&g), Err(Error::NearPiRotation(_))));
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut r = rng();
        for _ in 0..200 {
            let a = Pose::random(&mut r, 2.0);
            let b = Pose::random(&mut r, 2.0);
            assert_relative_eq!((a * b).matrix(), a.matrix() * b.matrix(), epsilon = 1e-12);
            assert_relative_eq!((a * a.inverse()).matrix(), Mat4::identity(), epsilon = 1e-12);
            assert_relative_eq!((a.inverse() * a).matrix(), Mat4::identity(), epsilon = 1e-12);
        }
    }

    #[test]
    fn adjoint_examples() {
        assert_eq!(adjoint(&Pose::identity()), Mat6::identity());
        let p = Vec3::new(0.2, -1.0, 3.0);
        let ad_t = adjoint(&Pose::from_translation(p));
        assert_eq!(ad_t.fixed_view::<3, 3>(0, 3).into_owned(), hat3(&p));
        let mut r = rng();
        for _ in 0..200 {
            let a = Pose::random(&mut r, 2.0);
            let b = Pose::random(&mut r, 2.0);
            assert_relative_eq!(adjoint(&(a * b)), adjoint(&a) * adjoint(&b), epsilon = 1e-11);
        }
    }

    #[test]
    fn adjoint_conjugates_hat() {
        // g xi^ g^{-1} = (Ad_g xi)^
        let mut r = rng();
        let g = Pose::random(&mut r, 1.0);
        let xi = Twist::body(Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.4, 0.5, 0.6));
        let lhs = g.matrix() * hat6(&xi) * g.inverse().matrix();
        let rhs = hat6(&Twist::from_vector(&(adjoint(&g) * xi.to_vector()), Frame::Body));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn gcev_examples() {
        let mut r = rng();
        let g = Pose::random(&mut r, 1.0);
        assert_eq!(gcev(&g, &g), Vec6::zeros());
        let gd = Pose::identity();
        let e = gcev(&Pose::from_translation(Vec3::x()), &gd);
        assert_eq!(e, Vec6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let e = gcev(&Pose::from_rotation(Rotation::rot_z(FRAC_PI_2)), &gd);
        assert_relative_eq!(e, Vec6::new(0.0, 0.0, 0.0, 0.0, 0.0, 2.0), epsilon = 1e-12);
        let th = 0.37;
        let e = gcev(&Pose::from_rotation(Rotation::rot_z(th)), &gd);
        assert_relative_eq!(e[5], 2.0 * th.sin(), epsilon = 1e-12);
    }

    #[test]
    fn distance_examples() {
        let mut r = rng();
        let g = Pose::random(&mut r, 1.0);
        assert_relative_eq!(distance(&g, &g), 0.0, epsilon = 1e-12);
        let shifted = Pose::new(g.rot, g.pos + g.rot * Vec3::new(0.6, 0.8, 0.0));
        assert_relative_eq!(distance(&shifted, &g), 0.5, epsilon = 1e-12);
        let half = Pose::from_rotation(Rotation::rot_z(PI));
        assert_relative_eq!(distance(&half, &Pose::identity()), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_is_half_squared_frobenius() {
        // The explicit form equals 1/2 ||I - g_d^{-1} g||_F^2.
        let mut r = rng();
        for _ in 0..100 {
            let g = Pose::random(&mut r, 1.0);
            let gd = Pose::random(&mut r, 1.0);
            let m = Mat4::identity() - (gd.inverse() * g).matrix();
            assert_relative_eq!(distance(&g, &gd), 0.5 * m.norm_squared(), epsilon = 1e-10);
        }
    }

    #[test]
    fn elastic_wrench_examples() {
        let mut r = rng();
        let k = gains(250.0, 30.0);
        let g = Pose::random(&mut r, 1.0);
        assert_relative_eq!(elastic_wrench(&g, &g, &k).to_vector(), Vec6::zeros(), epsilon = 1e-12);
        let dp = Vec3::new(0.1, -0.2, 0.05);
        let w = elastic_wrench(&Pose::from_translation(dp), &Pose::identity(), &k);
        assert_relative_eq!(w.f, 250.0 * dp, epsilon = 1e-12);
        assert_eq!(w.tau, Vec3::zeros());
        assert_eq!(w.frame, Frame::Body);
    }

    #[test]
    fn elastic_wrench_left_invariant() {
        let mut r = rng();
        let k = ImpedanceGains::new(Vec3::new(10.0, 200.0, 3000.0), Vec3::new(30.0, 100.0, 250.0)).unwrap();
        for _ in 0..200 {
            let g = Pose::random(&mut r, 2.0);
            let gd = Pose::random(&mut r, 2.0);
            let gl = Pose::random(&mut r, 2.0);
            let a = elastic_wrench(&(gl * g), &(gl * gd), &k).to_vector();
            let b = elastic_wrench(&g, &gd, &k).to_vector();
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn velocity_error_examples() {
        let mut r = rng();
        let g = Pose::random(&mut r, 1.0);
        let gd = Pose::random(&mut r, 1.0);
        let vb = Twist::body(Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, -1.0, 0.5));
        let e = velocity_error(&g, &gd, &vb, &Twist::zero(Frame::Body)).unwrap();
        assert_eq!(e, vb);
        let e = velocity_error(&g, &g, &vb, &vb).unwrap();
        assert_relative_eq!(e.to_vector(), Vec6::zeros(), epsilon = 1e-12);
        let err = velocity_error(&g, &gd, &Twist::zero(Frame::Spatial), &vb);
        assert!(matches!(err, Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn cartesian_error_examples() {
        let mut r = rng();
        let g = Pose::random(&mut r, 1.0);
        assert_relative_eq!(cartesian_error(&g, &g), Vec6::zeros(), epsilon = 1e-12);
        let e = cartesian_error(&Pose::from_translation(Vec3::y()), &Pose::identity());
        assert_eq!(e, Vec6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0));
        // r_d1 x r_1 + r_d2 x r_2 = (0, 0, 2 sin th) for R = Rz(th), R_d = I.
        let th = 0.4;
        let e = cartesian_error(&Pose::from_rotation(Rotation::rot_z(th)), &Pose::identity());
        assert_relative_eq!(e, Vec6::new(0.0, 0.0, 0.0, 0.0, 0.0, 2.0 * th.sin()), epsilon = 1e-12);
    }

    #[test]
    fn body_to_spatial_wrench() {
        let w = Wrench::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.25), Frame::Body);
        let s = wrench_body_to_spatial(&Pose::identity(), &w).unwrap();
        assert_eq!(s.to_vector(), w.to_vector());
        assert_eq!(s.frame, Frame::Spatial);
        let rot = Rotation::rot_y(0.8);
        let s = wrench_body_to_spatial(&Pose::from_rotation(rot), &w).unwrap();
        assert_relative_eq!(s.f, rot * w.f, epsilon = 1e-12);
        assert_relative_eq!(s.tau, rot * w.tau, epsilon = 1e-12);
        assert!(wrench_body_to_spatial(&Pose::identity(), &s).is_err());
        let mut r = rng();
        let g = Pose::random(&mut r, 1.0);
        let back = wrench_spatial_to_body(&g, &wrench_body_to_spatial(&g, &w).unwrap()).unwrap();
        assert_relative_eq!(back.to_vector(), w.to_vector(), epsilon = 1e-9);
    }

    #[test]
    fn small_angle_agrees_with_log() {
        let mut r = rng();
        for _ in 0..100 {
            let axis = Rotation::random(&mut r).column(0);
            let th = r.random_range(1e-6..1e-3);
            let rot = Rotation::from_axis_angle(&axis, th);
            let e = gcev(&Pose::from_rotation(rot), &Pose::identity());
            let e_r = Vec3::new(e[3], e[4], e[5]);
            let l = 2.0 * rot.log().unwrap();
            assert!((e_r - l).norm() <= 1e-6 * l.norm());
        }
    }

    #[test]
    fn quaternion_is_canonical() {
        let mut r = rng();
        for _ in 0..100 {
            let rot = Rotation::random(&mut r);
            let q = rot.to_quaternion();
            assert!(q[0] >= 0.0);
            assert_relative_eq!(*Rotation::from_quaternion(q).matrix(), *rot.matrix(), epsilon = 1e-12);
        }
    }

    #[test]
    fn pose_json_shape() {
        let g = Pose::new(Rotation::rot_z(FRAC_PI_2), Vec3::new(1.0, 2.0, 3.0));
        let v: serde_json::Value = serde_json::to_value(g).unwrap();
        assert_eq!(v["p"], serde_json::json!([1.0, 2.0, 3.0]));
        let q = v["q"].as_array().unwrap();
        assert_eq!(q.len(), 4);
        assert!(q[0].as_f64().unwrap() >= 0.0);
        let back: Pose = serde_json::from_value(v).unwrap();
        assert_relative_eq!(back.matrix(), g.matrix(), epsilon = 1e-12);
        assert!(serde_json::from_str::<Pose>(r#"{"p":[0,0,0],"q":[0,0,0,0]}"#).is_err());
    }

    #[test]
    fn orthonormalization_repairs_drift() {
        let mut r = rng();
        let rot = Rotation::random(&mut r);
        let noisy = Rotation::from_matrix_unchecked(rot.matrix() + Mat3::repeat(1e-6));
        assert!(noisy.orthonormality_error() > DRIFT_TOL);
        let fixed = Pose::new(noisy, Vec3::zeros()).repaired();
        assert!(fixed.rot.orthonormality_error() < 1e-12);
        assert!((fixed.rot.matrix().determinant() - 1.0).abs() < 1e-12);
        assert_relative_eq!(*fixed.rot.matrix(), *rot.matrix(), epsilon = 1e-5);
    }

    proptest::proptest! {
        #[test]
        fn hat_vee_identity(a in -10.0..10.0f64, b in -10.0..10.0f64, c in -10.0..10.0f64,
                            d in -10.0..10.0f64, e in -10.0..10.0f64, f in -10.0..10.0f64) {
            let w = Vec3::new(a, b, c);
            proptest::prop_assert_eq!(vee3(&hat3(&w)).unwrap(), w);
            let xi = Twist::body(Vec3::new(d, e, f), w);
            proptest::prop_assert_eq!(vee6(&hat6(&xi)).unwrap(), xi);
        }

        #[test]
        fn body_spatial_wrench_round_trip(seed in 0u64..10_000) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let g = Pose::random(&mut r, 2.0);
            let w = Wrench::new(Vec3::new(1.0, -2.0, 0.5), Vec3::new(0.2, 0.1, -3.0), Frame::Body);
            let back = wrench_spatial_to_body(&g, &wrench_body_to_spatial(&g, &w).unwrap()).unwrap();
            proptest::prop_assert!((back.to_vector() - w.to_vector()).amax() < 1e-9);
        }
    }
}
