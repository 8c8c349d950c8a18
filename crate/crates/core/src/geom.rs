//! Transform algebra: SO(3), SE(3), Sim(3), SE(2) and planar projective maps.
//!
//! Rotations are stored as matrices. Local optimizers work in exponential
//! coordinates (axis-angle 3-vectors) and map back through [`so3_exp`].

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec2, Vec3};

const ORTHO_TOL: f64 = 1e-9;
const SMALL_ANGLE: f64 = 1e-8;

/// A 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation3(Mat3);

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3(Mat3::identity())
    }

    /// Validates orthonormality and a positive determinant.
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let err = (m.transpose() * m - Mat3::identity()).abs().max();
        if !err.is_finite() || err > ORTHO_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is not orthonormal (max |RᵀR − I| = {err:.3e})"
            )));
        }
        if (m.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidInput("rotation determinant is not +1".into()));
        }
        Ok(Rotation3(m))
    }

    /// Projects an approximately orthonormal matrix onto SO(3).
    pub fn from_matrix_unchecked_orthonormalize(m: Mat3) -> Self {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Mat3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation3(u * d * vt)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation3(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        so3_log(self).norm()
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues' formula.
pub fn so3_exp(w: &Vec3) -> Rotation3 {
    let theta = w.norm();
    let k = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Rotation3(Mat3::identity() + k * a + k * k * b)
}

/// Inverse of [`so3_exp`], returning the axis-angle vector with angle in `[0, π]`.
pub fn so3_log(r: &Rotation3) -> Vec3 {
    let m = r.0;
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    if theta < SMALL_ANGLE {
        return vee * 0.5;
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return vee * (theta / (2.0 * theta.sin()));
    }
    // Near π the antisymmetric part vanishes; take the axis from the
    // eigenvector of the symmetric part with the largest eigenvalue.
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let i = eig.eigenvalues.imax();
    let mut axis: Vec3 = eig.eigenvectors.column(i).into();
    axis.normalize_mut();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// `R = R_x(roll) · R_y(pitch) · R_z(yaw)`, angles in degrees.
pub fn euler_xyz_to_rotation(roll_deg: f64, pitch_deg: f64, yaw_deg: f64) -> Rotation3 {
    let rx = so3_exp(&(Vec3::x() * roll_deg.to_radians()));
    let ry = so3_exp(&(Vec3::y() * pitch_deg.to_radians()));
    let rz = so3_exp(&(Vec3::z() * yaw_deg.to_radians()));
    rx * ry * rz
}

/// Rigid-body transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform3 {
    pub rotation: Rotation3,
    pub translation: Vec3,
}

impl Default for RigidTransform3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform3 {
    pub fn new(rotation: Rotation3, translation: Vec3) -> Self {
        RigidTransform3 { rotation, translation }
    }

    pub fn identity() -> Self {
        RigidTransform3::new(Rotation3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform3::new(Rotation3::identity(), t)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform3::new(rt, -rt.rotate(&self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform3) -> Self {
        RigidTransform3::new(
            self.rotation * other.rotation,
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Applies a small update `(δω, δt)`: `R ← exp(δω) R`, `t ← t + δt`.
    pub fn perturbed(&self, delta: &Vector6<f64>) -> Self {
        let dw = Vec3::new(delta[0], delta[1], delta[2]);
        let dt = Vec3::new(delta[3], delta[4], delta[5]);
        RigidTransform3::new(so3_exp(&dw) * self.rotation, self.translation + dt)
    }

    /// SE(3) logarithm `(ω, ρ)` with `t = V(ω) ρ`.
    pub fn log(&self) -> Vector6<f64> {
        let w = so3_log(&self.rotation);
        let theta = w.norm();
        let k = hat(&w);
        let v_inv = if theta < SMALL_ANGLE {
            Mat3::identity() - k * 0.5 + k * k / 12.0
        } else {
            let half = theta * 0.5;
            let coef = (1.0 - half * half.cos() / half.sin()) / (theta * theta);
            Mat3::identity() - k * 0.5 + k * k * coef
        };
        let rho = v_inv * self.translation;
        Vector6::new(w.x, w.y, w.z, rho.x, rho.y, rho.z)
    }
}

impl Mul for RigidTransform3 {
    type Output = RigidTransform3;
    fn mul(self, rhs: RigidTransform3) -> RigidTransform3 {
        self.compose(&rhs)
    }
}

/// Similarity transform `x ↦ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: Rotation3,
    pub translation: Vec3,
}

impl Sim3Transform {
    pub fn new(scale: f64, rotation: Rotation3, translation: Vec3) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidInput(format!("Sim(3) scale must be positive, got {scale}")));
        }
        Ok(Sim3Transform { scale, rotation, translation })
    }

    pub fn identity() -> Self {
        Sim3Transform { scale: 1.0, rotation: Rotation3::identity(), translation: Vec3::zeros() }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) * self.scale + self.translation
    }

    /// Builds from 7 parameters `(ω, t, ln s)`.
    pub fn from_params(p: &[f64]) -> Self {
        Sim3Transform {
            scale: p[6].exp(),
            rotation: so3_exp(&Vec3::new(p[0], p[1], p[2])),
            translation: Vec3::new(p[3], p[4], p[5]),
        }
    }

    pub fn to_params(&self) -> [f64; 7] {
        let w = so3_log(&self.rotation);
        let t = self.translation;
        [w.x, w.y, w.z, t.x, t.y, t.z, self.scale.ln()]
    }
}

/// Planar rigid motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub angle: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Pose2 {
    pub fn identity() -> Self {
        Pose2 { angle: 0.0, tx: 0.0, ty: 0.0 }
    }

    pub fn apply(&self, p: &Vec2) -> Vec2 {
        let (s, c) = self.angle.sin_cos();
        Vec2::new(c * p.x - s * p.y + self.tx, s * p.x + c * p.y + self.ty)
    }
}

/// A unit direction `(ω, u, v)` in 𝔰𝔢(2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistSE2 {
    pub omega: f64,
    pub u: f64,
    pub v: f64,
}

impl TwistSE2 {
    pub fn new(omega: f64, u: f64, v: f64) -> Result<Self> {
        let n2 = omega * omega + u * u + v * v;
        if (n2 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("twist must have unit norm, |.|² = {n2}")));
        }
        Ok(TwistSE2 { omega, u, v })
    }

    /// Scales an arbitrary nonzero vector onto the unit sphere.
    pub fn normalized(omega: f64, u: f64, v: f64) -> Result<Self> {
        let n = (omega * omega + u * u + v * v).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput("zero twist cannot be normalized".into()));
        }
        Ok(TwistSE2 { omega: omega / n, u: u / n, v: v / n })
    }
}

/// Exponential map of `κ·(ω, u, v)` into SE(2).
pub fn se2_exp(kappa: f64, twist: &TwistSE2) -> Pose2 {
    let TwistSE2 { omega, u, v } = *twist;
    let theta = omega * kappa;
    if omega.abs() < 1e-7 {
        // second-order series in ω
        return Pose2 {
            angle: theta,
            tx: u * kappa - 0.5 * v * omega * kappa * kappa,
            ty: v * kappa + 0.5 * u * omega * kappa * kappa,
        };
    }
    let (s, c) = theta.sin_cos();
    Pose2 {
        angle: theta,
        tx: (v * c + u * s - v) / omega,
        ty: (v * s - u * c + u) / omega,
    }
}

/// Non-singular planar homography acting on homogeneous points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveMap2(Mat3);

impl ProjectiveMap2 {
    pub fn new(m: Mat3) -> Result<Self> {
        if !(m.determinant().abs() > 1e-12) {
            return Err(Error::Degenerate("projective map is singular".into()));
        }
        Ok(ProjectiveMap2(m))
    }

    pub fn identity() -> Self {
        ProjectiveMap2(Mat3::identity())
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// Homogeneous scale `p₃₁x + p₃₂y + υ` of a point.
    pub fn denominator(&self, p: &Vec2) -> f64 {
        self.0[(2, 0)] * p.x + self.0[(2, 1)] * p.y + self.0[(2, 2)]
    }

    pub fn apply_point(&self, p: &Vec2) -> Result<Vec2> {
        let h = self.0 * Vec3::new(p.x, p.y, 1.0);
        if h.z.abs() <= 1e-12 {
            return Err(Error::PointAtInfinity);
        }
        Ok(Vec2::new(h.x / h.z, h.y / h.z))
    }

    pub fn apply(&self, pts: &[Vec2]) -> Result<Vec<Vec2>> {
        pts.iter().map(|p| self.apply_point(p)).collect()
    }
}

/// `P = H_SH · H_SC · H_E` with the similarity factor fixed to identity,
/// leaving shear `k`, anisotropic scale `λ`, elation row `v` and `υ`.
pub fn projective_from_params(k: f64, lambda: f64, v: Vec2, upsilon: f64) -> Result<ProjectiveMap2> {
    if lambda.abs() < 1e-12 || upsilon.abs() < 1e-12 {
        return Err(Error::Degenerate(format!(
            "scale λ={lambda} and elation υ={upsilon} must be nonzero"
        )));
    }
    let shear = Matrix3::new(1.0, k, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    let scale = Matrix3::new(lambda, 0.0, 0.0, 0.0, 1.0 / lambda, 0.0, 0.0, 0.0, 1.0);
    let elation = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, v.x, v.y, upsilon);
    ProjectiveMap2::new(shear * scale * elation)
}
