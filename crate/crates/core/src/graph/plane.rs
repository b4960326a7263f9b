use nalgebra::{Matrix3x2, Vector3};

use crate::geometry::{GeometryError, Pose};
use crate::scalar::Real;

/// Plane `{p : nᵀp = d}` with unit normal, canonicalized so that
/// `n_z >= 0` (ties broken on `n_x`, then `n_y`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneParam<T: Real> {
    normal: Vector3<T>,
    distance: T,
}

impl<T: Real> PlaneParam<T> {
    pub fn new(normal: Vector3<T>, distance: T) -> Result<Self, GeometryError> {
        let n = normal.norm();
        if !n.is_finite() || !distance.is_finite() {
            return Err(GeometryError::NonFinite("plane"));
        }
        if n < T::lit(1e-12) {
            return Err(GeometryError::NotUnit(n.as_f64()));
        }
        Ok(Self::canonical(normal / n, distance / n))
    }

    fn canonical(normal: Vector3<T>, distance: T) -> Self {
        let flip = if normal.z != T::zero() {
            normal.z < T::zero()
        } else if normal.x != T::zero() {
            normal.x < T::zero()
        } else {
            normal.y < T::zero()
        };
        if flip {
            Self {
                normal: -normal,
                distance: -distance,
            }
        } else {
            Self { normal, distance }
        }
    }

    pub fn normal(&self) -> &Vector3<T> {
        &self.normal
    }

    pub fn distance(&self) -> T {
        self.distance
    }

    /// Expresses a map-frame plane in the frame of `pose`: `n' = Rᵀn`,
    /// `d' = d − nᵀt`.
    pub fn in_frame(&self, pose: &Pose<T>) -> Self {
        let n = pose.rotation().inverse() * self.normal;
        Self::canonical(n, self.distance - self.normal.dot(pose.translation()))
    }

    /// Inverse of [`in_frame`](Self::in_frame): lifts a plane observed in the
    /// frame of `pose` into the map frame.
    pub fn to_map(&self, pose: &Pose<T>) -> Self {
        let n = pose.rotation() * self.normal;
        Self::canonical(n, self.distance + n.dot(pose.translation()))
    }

    /// Orthonormal basis of the tangent plane of the normal.
    pub fn tangent_basis(&self) -> Matrix3x2<T> {
        let n = self.normal;
        let a = if n.x.abs() < T::lit(0.9) { Vector3::x() } else { Vector3::y() };
        let b1 = (a - n * a.dot(&n)).normalize();
        let b2 = n.cross(&b1);
        Matrix3x2::from_columns(&[b1, b2])
    }

    /// Retraction: `n ← normalize(n + B δn)`, `d ← d + δd`.
    pub fn retract(&self, delta: &[T]) -> Self {
        let b = self.tangent_basis();
        let n = (self.normal + b.column(0) * delta[0] + b.column(1) * delta[1]).normalize();
        Self::canonical(n, self.distance + delta[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn canonicalizes_sign() {
        let p = PlaneParam::<f64>::new(Vector3::new(0.0, 0.0, -2.0), 1.0).unwrap();
        assert_relative_eq!(*p.normal(), Vector3::z());
        assert_relative_eq!(p.distance(), -0.5);
        let w = PlaneParam::<f64>::new(Vector3::new(-1.0, 0.0, 0.0), 3.0).unwrap();
        assert_relative_eq!(*w.normal(), Vector3::x());
        assert_relative_eq!(w.distance(), -3.0);
    }

    #[test]
    fn frame_round_trip() {
        let pose = Pose::<f64>::new(
            Vector3::new(1.0, -2.0, 0.5),
            nalgebra::UnitQuaternion::from_euler_angles(0.1, -0.2, 0.7),
        );
        let p = PlaneParam::new(Vector3::new(0.3, 0.1, 0.9), 1.2).unwrap();
        let back = p.in_frame(&pose).to_map(&pose);
        assert_relative_eq!(*back.normal(), *p.normal(), epsilon = 1e-12);
        assert_relative_eq!(back.distance(), p.distance(), epsilon = 1e-12);
    }

    #[test]
    fn zero_normal_rejected() {
        assert!(PlaneParam::<f64>::new(Vector3::zeros(), 1.0).is_err());
    }
}
