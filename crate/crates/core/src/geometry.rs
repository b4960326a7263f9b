//! SE(3) arithmetic, tangent-space norms and information-weighted distances.
//!
//! Tangent vectors are ordered `[rho, phi]`: translational part first,
//! rotational part second. Perturbations are applied on the right,
//! `X ⊞ δ = X · exp(δ)`, and every Jacobian in the crate follows that
//! convention.

use std::fmt;

use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix6, Quaternion, SymmetricEigen, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Below this rotation angle (radians) `log`/`exp` switch to their
/// first-order expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Below this angle the Jacobian coefficients are evaluated by series.
const SERIES_ANGLE: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("vector must have unit norm (norm {0})")]
    NotUnit(f64),
}

/// Skew-symmetric (hat) matrix of a 3-vector.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

fn canonical<T: Real>(q: UnitQuaternion<T>) -> UnitQuaternion<T> {
    if q.w < T::zero() {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Exponential map of so(3) to a unit quaternion with non-negative scalar part.
pub fn so3_exp<T: Real>(phi: &Vector3<T>) -> UnitQuaternion<T> {
    let theta = phi.norm();
    let half = theta * T::lit(0.5);
    let (w, k) = if theta < T::lit(SMALL_ANGLE) {
        // sin(θ/2)/θ ≈ 1/2 − θ²/48
        (T::one() - theta * theta / T::lit(8.0), T::lit(0.5) - theta * theta / T::lit(48.0))
    } else {
        (half.cos(), half.sin() / theta)
    };
    let q = Quaternion::new(w, phi.x * k, phi.y * k, phi.z * k);
    canonical(UnitQuaternion::from_quaternion(q))
}

/// Logarithm of a unit quaternion as a rotation vector with angle in `[0, π]`.
pub fn so3_log<T: Real>(q: &UnitQuaternion<T>) -> Vector3<T> {
    let q = canonical(*q);
    let v = q.imag();
    let s = v.norm();
    let w = q.w;
    if s < T::lit(SMALL_ANGLE) {
        // θ/s ≈ 2/w (1 − s²/(3w²))
        v * (T::lit(2.0) / w * (T::one() - s * s / (T::lit(3.0) * w * w)))
    } else {
        let theta = T::lit(2.0) * s.atan2(w);
        v * (theta / s)
    }
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < T::lit(SERIES_ANGLE) {
        (
            T::lit(0.5) - theta2 / T::lit(24.0) + theta2 * theta2 / T::lit(720.0),
            T::lit(1.0 / 6.0) - theta2 / T::lit(120.0) + theta2 * theta2 / T::lit(5040.0),
        )
    } else {
        (
            (T::one() - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let k = skew(phi);
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of the SO(3) left Jacobian.
pub fn so3_left_jacobian_inv<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let c = if theta < T::lit(SERIES_ANGLE) {
        T::lit(1.0 / 12.0) + theta2 / T::lit(720.0) + theta2 * theta2 / T::lit(30240.0)
    } else {
        // 1/θ² − cot(θ/2)/(2θ); the cotangent form stays finite at θ = π.
        let half = theta * T::lit(0.5);
        T::one() / theta2 - half.cos() / (half.sin() * T::lit(2.0) * theta)
    };
    let k = skew(phi);
    Matrix3::identity() - k * T::lit(0.5) + k * k * c
}

/// Translational coupling block `Q(rho, phi)` of the SE(3) left Jacobian.
fn se3_q<T: Real>(rho: &Vector3<T>, phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (c1, c2, c3) = if theta < T::lit(SERIES_ANGLE) {
        let t4 = theta2 * theta2;
        (
            T::lit(1.0 / 6.0) - theta2 / T::lit(120.0) + t4 / T::lit(5040.0),
            T::lit(1.0 / 24.0) - theta2 / T::lit(720.0) + t4 / T::lit(40320.0),
            T::lit(1.0 / 120.0) - theta2 / T::lit(2520.0) + t4 / T::lit(120960.0),
        )
    } else {
        let (s, c) = (theta.sin(), theta.cos());
        let t3 = theta2 * theta;
        (
            (theta - s) / t3,
            (theta2 + T::lit(2.0) * c - T::lit(2.0)) / (T::lit(2.0) * theta2 * theta2),
            (T::lit(2.0) * theta - T::lit(3.0) * s + theta * c) / (T::lit(2.0) * t3 * theta2),
        )
    };
    let p = skew(phi);
    let r = skew(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * T::lit(0.5)
        + (pr + rp + prp) * c1
        + (p * pr + rp * p - prp * T::lit(3.0)) * c2
        + (prp * p + p * prp) * c3
}

/// Left Jacobian of SE(3) for tangent ordering `[rho, phi]`.
pub fn se3_left_jacobian<T: Real>(xi: &Twist<T>) -> Matrix6<T> {
    let j = so3_left_jacobian(&xi.phi);
    let q = se3_q(&xi.rho, &xi.phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out
}

/// Inverse of the SE(3) left Jacobian.
pub fn se3_left_jacobian_inv<T: Real>(xi: &Twist<T>) -> Matrix6<T> {
    let ji = so3_left_jacobian_inv(&xi.phi);
    let q = se3_q(&xi.rho, &xi.phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&ji);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-ji * q * ji));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&ji);
    out
}

/// Inverse right Jacobian, `Jr⁻¹(ξ) = Jl⁻¹(−ξ)`.
pub fn se3_right_jacobian_inv<T: Real>(xi: &Twist<T>) -> Matrix6<T> {
    se3_left_jacobian_inv(&Twist::new(-xi.rho, -xi.phi))
}

/// Element of se(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist<T: Real> {
    pub rho: Vector3<T>,
    pub phi: Vector3<T>,
}

impl<T: Real> Twist<T> {
    pub fn new(rho: Vector3<T>, phi: Vector3<T>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(v: &Vector6<T>) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z)
    }

    /// `sqrt(|rho|² + w·|phi|²)`.
    pub fn weighted_norm(&self, rotation_weight: T) -> T {
        (self.rho.norm_squared() + rotation_weight * self.phi.norm_squared()).sqrt()
    }
}

/// Rigid transform on SE(3). The quaternion is kept with `w >= 0`.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    rotation: UnitQuaternion<T>,
    translation: Vector3<T>,
}

impl<T: Real> fmt::Debug for Pose<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = &self.rotation;
        write!(
            f,
            "Pose(t: [{:.6}, {:.6}, {:.6}], q: [{:.6}, {:.6}, {:.6}, {:.6}])",
            self.translation.x, self.translation.y, self.translation.z, q.i, q.j, q.k, q.w
        )
    }
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn new(translation: Vector3<T>, rotation: UnitQuaternion<T>) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(x: T, y: T, z: T) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_rotation(rotation: UnitQuaternion<T>) -> Self {
        Self::new(Vector3::zeros(), rotation)
    }

    /// Pure rotation about the z axis.
    pub fn rot_z(angle: T) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle))
    }

    pub fn rotation(&self) -> &UnitQuaternion<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn compose(&self, other: &Self) -> Self {
        let rotation = UnitQuaternion::new_normalize((self.rotation * other.rotation).into_inner());
        Self::new(self.translation + self.rotation * other.translation, rotation)
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(-(inv * self.translation), inv)
    }

    /// `self⁻¹ · other`.
    pub fn between(&self, other: &Self) -> Self {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    pub fn exp(xi: &Twist<T>) -> Self {
        let rotation = so3_exp(&xi.phi);
        Self::new(so3_left_jacobian(&xi.phi) * xi.rho, rotation)
    }

    pub fn log(&self) -> Twist<T> {
        let phi = so3_log(&self.rotation);
        Twist::new(so3_left_jacobian_inv(&phi) * self.translation, phi)
    }

    /// Right retraction `self · exp(delta)`.
    pub fn retract(&self, delta: &Twist<T>) -> Self {
        self.compose(&Self::exp(delta))
    }

    pub fn tangent_norm(&self, rotation_weight: T) -> T {
        self.log().weighted_norm(rotation_weight)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> T {
        so3_log(&self.rotation).norm()
    }

    /// Adjoint for tangent ordering `[rho, phi]`: `[[R, t^R], [0, R]]`.
    pub fn adjoint(&self) -> Matrix6<T> {
        let r = self.rotation_matrix();
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&self.translation) * r));
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        out
    }

    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `[tx, ty, tz, qx, qy, qz, qw]`.
    pub fn to_array(&self) -> [T; 7] {
        let t = &self.translation;
        let q = &self.rotation;
        [t.x, t.y, t.z, q.i, q.j, q.k, q.w]
    }

    /// Builds a pose from `[tx, ty, tz, qx, qy, qz, qw]`; the quaternion is
    /// normalized.
    pub fn from_array(a: [T; 7]) -> Result<Self, GeometryError> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        let q = Quaternion::new(a[6], a[3], a[4], a[5]);
        let n = q.norm();
        if n < T::lit(1e-12) {
            return Err(GeometryError::NotUnit(n.as_f64()));
        }
        Ok(Self::new(Vector3::new(a[0], a[1], a[2]), UnitQuaternion::from_quaternion(q)))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        let a = self.to_array().map(|v| U::lit(v.as_f64()));
        Pose::new(
            Vector3::new(a[0], a[1], a[2]),
            UnitQuaternion::new_normalize(Quaternion::new(a[6], a[3], a[4], a[5])),
        )
    }
}

impl<T: Real> Serialize for Pose<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().map(Real::as_f64).serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for Pose<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        Pose::from_array(a.map(T::lit)).map_err(serde::de::Error::custom)
    }
}

pub fn compose<T: Real>(a: &Pose<T>, b: &Pose<T>) -> Pose<T> {
    a.compose(b)
}

pub fn between<T: Real>(a: &Pose<T>, b: &Pose<T>) -> Pose<T> {
    a.between(b)
}

pub fn tangent_norm<T: Real>(p: &Pose<T>, rotation_weight: T) -> T {
    p.tangent_norm(rotation_weight)
}

/// `sqrt(rᵀ Λ r)`.
pub fn mahalanobis<T: Real>(r: &Twist<T>, info: &InfoMatrix<T>) -> T {
    let v = r.to_vector();
    // PSD up to rounding; clamp tiny negatives from cancellation.
    (v.transpose() * info.matrix() * v)[(0, 0)].max(T::zero()).sqrt()
}

fn psd_tolerance<T: Real>(scale: T) -> T {
    let eps = T::default_epsilon() * T::lit(100.0);
    let tol = if eps > T::lit(1e-12) { eps } else { T::lit(1e-12) };
    tol * scale.max(T::one())
}

/// Checks symmetry and positive semi-definiteness of a square matrix,
/// returning the symmetrized copy.
pub fn validate_psd<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>, GeometryError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite("information matrix"));
    }
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > psd_tolerance(scale) {
        return Err(GeometryError::NotSymmetric(asym.as_f64()));
    }
    let sym = (m + m.transpose()) * T::lit(0.5);
    if sym.nrows() == 0 {
        return Ok(sym);
    }
    let min = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    if min < -psd_tolerance(scale) {
        return Err(GeometryError::NotPsd(min.as_f64()));
    }
    Ok(sym)
}

fn validate6<T: Real>(m: &Matrix6<T>) -> Result<Matrix6<T>, GeometryError> {
    let d = validate_psd(&DMatrix::from_column_slice(6, 6, m.as_slice()))?;
    Ok(Matrix6::from_column_slice(d.as_slice()))
}

/// Symmetric positive semi-definite 6×6 weight on a [`Twist`] residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoMatrix<T: Real> {
    matrix: Matrix6<T>,
}

impl<T: Real> InfoMatrix<T> {
    pub fn new(matrix: Matrix6<T>) -> Result<Self, GeometryError> {
        Ok(Self {
            matrix: validate6(&matrix)?,
        })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix6::identity(),
        }
    }

    pub fn from_diagonal(d: &Vector6<T>) -> Result<Self, GeometryError> {
        Self::new(Matrix6::from_diagonal(d))
    }

    /// Isotropic translation/rotation weights.
    pub fn isotropic(translation: T, rotation: T) -> Self {
        let d = Vector6::new(translation, translation, translation, rotation, rotation, rotation);
        Self::from_diagonal(&d).expect("isotropic information must be non-negative")
    }

    /// Inverse of a covariance matrix. Eigenvalues below `1e-12 · λmax`
    /// are lifted to that floor before inversion.
    pub fn from_covariance(sigma: &Matrix6<T>) -> Result<Self, GeometryError> {
        let sym = validate6(sigma)?;
        let eig = SymmetricEigen::new(sym);
        let max = eig.eigenvalues.max();
        if max <= T::zero() {
            return Err(GeometryError::NotPsd(max.as_f64()));
        }
        let floor = max * T::lit(1e-12);
        let inv_vals = eig.eigenvalues.map(|l| T::one() / l.max(floor));
        let m = eig.eigenvectors * Matrix6::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
        Ok(Self {
            matrix: (m + m.transpose()) * T::lit(0.5),
        })
    }

    pub fn matrix(&self) -> &Matrix6<T> {
        &self.matrix
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            matrix: self.matrix * k.max(T::zero()),
        }
    }
}
