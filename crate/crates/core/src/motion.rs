//! Expected inter-observation motion of an entity, by semantic class.

use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{mahalanobis, GeometryError, InfoMatrix, Pose};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticClass {
    Agent,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MotionPrior<T: Real> {
    #[default]
    None,
    StraightLine(Vector3<T>),
}

impl<T: Real> MotionPrior<T> {
    /// Straight-line prior along `direction`, normalized.
    pub fn straight_line(direction: Vector3<T>) -> Result<Self, GeometryError> {
        let n = direction.norm();
        if !n.is_finite() {
            return Err(GeometryError::NonFinite("motion direction"));
        }
        if n < T::lit(1e-12) {
            return Err(GeometryError::NotUnit(n.as_f64()));
        }
        Ok(Self::StraightLine(direction / n))
    }
}

/// Class-level motion model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModelConfig<T: Real> {
    /// Static-object threshold on the Mahalanobis norm of the relative pose.
    pub nu: T,
    /// Down-weighting of off-axis dims for straight-line agents.
    pub kappa: T,
    pub object_info: InfoMatrix<T>,
    pub agent_info: InfoMatrix<T>,
}

impl<T: Real> Default for MotionModelConfig<T> {
    fn default() -> Self {
        Self {
            nu: T::lit(0.05),
            kappa: T::lit(0.01),
            object_info: InfoMatrix::identity(),
            agent_info: InfoMatrix::identity(),
        }
    }
}

/// Identity while the relative pose stays below `nu` in Mahalanobis norm,
/// the relative pose itself otherwise.
pub fn object_model<T: Real>(eps_prev: &Pose<T>, eps_detected: &Pose<T>, info: &InfoMatrix<T>, nu: T) -> Pose<T> {
    let rel = eps_prev.between(eps_detected);
    if mahalanobis(&rel.log(), info) < nu {
        Pose::identity()
    } else {
        rel
    }
}

pub fn agent_model_free<T: Real>(eps_prev: &Pose<T>, eps_detected: &Pose<T>) -> Pose<T> {
    eps_prev.between(eps_detected)
}

/// Keeps only the translation along `u`; rotation is zeroed.
pub fn project_straight<T: Real>(rel: &Pose<T>, u: &Vector3<T>) -> Pose<T> {
    let along = u.dot(rel.translation());
    Pose::new(u * along, nalgebra::UnitQuaternion::identity())
}

/// Information for a straight-line model: full weight along `u`, `kappa`
/// times that weight on the orthogonal translation and all rotation dims.
pub fn straight_line_info<T: Real>(u: &Vector3<T>, base: &InfoMatrix<T>, kappa: T) -> InfoMatrix<T> {
    let tt = base.matrix().fixed_view::<3, 3>(0, 0);
    let along = (u.transpose() * tt * u)[0].max(T::zero());
    let uu = u * u.transpose();
    let trans = (uu + (Matrix3::identity() - uu) * kappa) * along;
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&trans);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * (kappa * along)));
    InfoMatrix::new(m).expect("projection of PSD information stays PSD")
}

pub fn agent_model_straight<T: Real>(
    eps_prev: &Pose<T>,
    eps_detected: &Pose<T>,
    u: &Vector3<T>,
    base: &InfoMatrix<T>,
    kappa: T,
) -> (Pose<T>, InfoMatrix<T>) {
    let rel = eps_prev.between(eps_detected);
    (project_straight(&rel, u), straight_line_info(u, base, kappa))
}

pub fn select_model<T: Real>(
    class: SemanticClass,
    prior: &MotionPrior<T>,
    eps_prev: &Pose<T>,
    eps_detected: &Pose<T>,
    config: &MotionModelConfig<T>,
) -> (Pose<T>, InfoMatrix<T>) {
    match (class, prior) {
        (SemanticClass::Object, _) => (
            object_model(eps_prev, eps_detected, &config.object_info, config.nu),
            config.object_info,
        ),
        (SemanticClass::Agent, MotionPrior::None) => (agent_model_free(eps_prev, eps_detected), config.agent_info),
        (SemanticClass::Agent, MotionPrior::StraightLine(u)) => {
            agent_model_straight(eps_prev, eps_detected, u, &config.agent_info, config.kappa)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Twist;
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector6};

    fn tx(x: f64) -> Pose<f64> {
        Pose::from_translation(x, 0.0, 0.0)
    }

    #[test]
    fn object_model_examples() {
        let id = InfoMatrix::identity();
        let p = Pose::rot_z(0.3);
        assert_eq!(object_model(&p, &p, &id, 0.05), Pose::identity());
        assert_eq!(object_model(&Pose::identity(), &tx(0.01), &id, 0.05), Pose::identity());
        let moved = object_model(&Pose::identity(), &tx(0.5), &id, 0.05);
        assert_relative_eq!(moved.translation().x, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn object_model_boundary_is_not_static() {
        // mahalanobis of Tx(0.25) under diag(4,...) is exactly 0.5
        let info = InfoMatrix::from_diagonal(&Vector6::from_element(4.0)).unwrap();
        let rel = tx(0.25);
        assert_eq!(mahalanobis(&rel.log(), &info), 0.5);
        assert_eq!(object_model(&Pose::identity(), &rel, &info, 0.5), rel);
        assert_eq!(object_model(&Pose::identity(), &rel, &info, 0.5 + 1e-12), Pose::identity());
    }

    #[test]
    fn agent_free_passes_through() {
        let p = tx(1.0).compose(&Pose::rot_z(std::f64::consts::FRAC_PI_6));
        let out = agent_model_free(&Pose::identity(), &p);
        assert!(out.between(&p).tangent_norm(1.0) < 1e-12);
    }

    #[test]
    fn straight_projection_examples() {
        let x = Vector3::x();
        let id = InfoMatrix::identity();
        let (p, _) = agent_model_straight(&Pose::identity(), &tx(2.0), &x, &id, 0.01);
        assert_eq!(p, tx(2.0));
        let (p, _) = agent_model_straight(&Pose::identity(), &Pose::from_translation(3.0, 4.0, 0.0), &x, &id, 0.01);
        assert_eq!(*p.translation(), Vector3::new(3.0, 0.0, 0.0));
        assert_eq!(*p.rotation(), UnitQuaternion::identity());
        let (p, _) = agent_model_straight(&Pose::identity(), &Pose::rot_z(std::f64::consts::FRAC_PI_4), &x, &id, 0.01);
        assert_eq!(p, Pose::identity());
    }

    #[test]
    fn straight_info_down_weights_off_axis() {
        let base = InfoMatrix::isotropic(100.0, 50.0);
        let info = straight_line_info(&Vector3::x(), &base, 0.01);
        let m = info.matrix();
        assert_relative_eq!(m[(0, 0)], 100.0);
        assert_relative_eq!(m[(1, 1)], 1.0);
        assert_relative_eq!(m[(2, 2)], 1.0);
        for i in 3..6 {
            assert_relative_eq!(m[(i, i)], 1.0);
        }
    }

    #[test]
    fn select_model_dispatch() {
        let cfg = MotionModelConfig {
            object_info: InfoMatrix::isotropic(2500.0, 2500.0),
            agent_info: InfoMatrix::isotropic(10.0, 10.0),
            ..MotionModelConfig::default()
        };
        let p = Pose::rot_z(0.2);
        let (m, i) = select_model(SemanticClass::Object, &MotionPrior::None, &p, &p, &cfg);
        assert_eq!((m, i), (Pose::identity(), cfg.object_info));

        let rel = Pose::exp(&Twist::new(Vector3::new(0.3, 0.1, 0.0), Vector3::new(0.0, 0.0, 0.4)));
        let (m, i) = select_model(SemanticClass::Agent, &MotionPrior::None, &Pose::identity(), &rel, &cfg);
        assert!(m.between(&rel).tangent_norm(1.0) < 1e-12);
        assert_eq!(i, cfg.agent_info);

        let prior = MotionPrior::straight_line(Vector3::new(2.0, 0.0, 0.0)).unwrap();
        let target = Pose::from_translation(3.0, 4.0, 0.0);
        let (m, i) = select_model(SemanticClass::Agent, &prior, &Pose::identity(), &target, &cfg);
        assert_eq!(*m.translation(), Vector3::new(3.0, 0.0, 0.0));
        assert_relative_eq!(i.matrix()[(1, 1)], 0.1, epsilon = 1e-12);
    }
}
