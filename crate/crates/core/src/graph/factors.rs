//! Residuals and analytic Jacobians for every factor kind.
//!
//! Pose-valued residuals use the measurement-inverse-first convention
//! `r = log(meas⁻¹ · predicted)`.

use nalgebra::{DMatrix, DVector, Matrix1x6, Matrix4x3, Matrix4x6, Matrix6, Vector4};

use super::{Factor, FactorKind, Measurement, Node, NodeValue, PlaneParam};
use crate::geometry::{se3_right_jacobian_inv, skew, Pose, Twist};
use crate::scalar::Real;

fn log_between<T: Real>(a: &Pose<T>, b: &Pose<T>, meas: &Pose<T>) -> Twist<T> {
    meas.inverse().compose(&a.between(b)).log()
}

/// Detection consistency of an entity pose with the keyframe that saw it.
pub fn residual_keyframe_entity<T: Real>(x_r: &Pose<T>, eps: &Pose<T>, meas: &Pose<T>) -> Twist<T> {
    log_between(x_r, eps, meas)
}

/// Consecutive entity observations against the expected motion model.
pub fn residual_intra_entity<T: Real>(eps_prev: &Pose<T>, eps_cur: &Pose<T>, model: &Pose<T>) -> Twist<T> {
    log_between(eps_prev, eps_cur, model)
}

pub fn residual_odometry<T: Real>(x_a: &Pose<T>, x_b: &Pose<T>, meas: &Pose<T>) -> Twist<T> {
    log_between(x_a, x_b, meas)
}

pub fn residual_loop_closure<T: Real>(x_old: &Pose<T>, x_new: &Pose<T>, meas: &Pose<T>) -> Twist<T> {
    log_between(x_old, x_new, meas)
}

pub fn residual_prior<T: Real>(x: &Pose<T>, meas: &Pose<T>) -> Twist<T> {
    meas.inverse().compose(x).log()
}

/// Height of the entity above the floor minus its reference height.
pub fn residual_floor_entity<T: Real>(floor_z: T, eps: &Pose<T>, z_ref: T) -> T {
    (eps.translation().z - floor_z) - z_ref
}

fn predicted_plane<T: Real>(x_r: &Pose<T>, pi: &PlaneParam<T>, meas: &PlaneParam<T>) -> (T, Vector4<T>) {
    let n = pi.normal();
    let np = x_r.rotation().inverse() * n;
    let dp = pi.distance() - n.dot(x_r.translation());
    let s = if np.dot(meas.normal()) >= T::zero() { T::one() } else { -T::one() };
    (s, Vector4::new(np.x * s, np.y * s, np.z * s, dp * s))
}

/// `meas − predicted`, with the predicted plane's sign aligned to the
/// measurement's hemisphere.
pub fn residual_keyframe_plane<T: Real>(x_r: &Pose<T>, pi: &PlaneParam<T>, meas: &PlaneParam<T>) -> Vector4<T> {
    let (_, pred) = predicted_plane(x_r, pi, meas);
    let m = meas.normal();
    Vector4::new(m.x, m.y, m.z, meas.distance()) - pred
}

/// Jacobians of a between-type residual `log(meas⁻¹ a⁻¹ b)` with respect to
/// right perturbations of `a` and `b`.
pub fn jacobian_between<T: Real>(a: &Pose<T>, b: &Pose<T>, meas: &Pose<T>) -> (Twist<T>, Matrix6<T>, Matrix6<T>) {
    let r = log_between(a, b, meas);
    let jr_inv = se3_right_jacobian_inv(&r);
    let ja = -(jr_inv * b.between(a).adjoint());
    (r, ja, jr_inv)
}

pub fn jacobian_prior<T: Real>(x: &Pose<T>, meas: &Pose<T>) -> (Twist<T>, Matrix6<T>) {
    let r = residual_prior(x, meas);
    (r, se3_right_jacobian_inv(&r))
}

/// Returns `(r, ∂r/∂floor, ∂r/∂eps)`.
pub fn jacobian_floor_entity<T: Real>(floor_z: T, eps: &Pose<T>, z_ref: T) -> (T, T, Matrix1x6<T>) {
    let r = residual_floor_entity(floor_z, eps, z_ref);
    let rot = eps.rotation_matrix();
    let mut j = Matrix1x6::zeros();
    for c in 0..3 {
        j[c] = rot[(2, c)];
    }
    (r, -T::one(), j)
}

/// Returns `(r, ∂r/∂pose, ∂r/∂plane)`; the plane tangent is `[δn (2), δd]`.
pub fn jacobian_keyframe_plane<T: Real>(
    x_r: &Pose<T>,
    pi: &PlaneParam<T>,
    meas: &PlaneParam<T>,
) -> (Vector4<T>, Matrix4x6<T>, Matrix4x3<T>) {
    let r = residual_keyframe_plane(x_r, pi, meas);
    let (s, _) = predicted_plane(x_r, pi, meas);
    let n = pi.normal();
    let rot = x_r.rotation_matrix();
    let rt = rot.transpose();
    let np = rt * n;
    let mut jx = Matrix4x6::zeros();
    jx.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&np) * s));
    let nr = n.transpose() * rot;
    for c in 0..3 {
        jx[(3, c)] = nr[c] * s;
    }
    let b = pi.tangent_basis();
    let mut jp = Matrix4x3::zeros();
    jp.fixed_view_mut::<3, 2>(0, 0).copy_from(&(-(rt * b) * s));
    let tb = x_r.translation().transpose() * b;
    jp[(3, 0)] = tb[0] * s;
    jp[(3, 1)] = tb[1] * s;
    jp[(3, 2)] = -s;
    (r, jx, jp)
}

fn pose_of<T: Real>(nodes: &[Node<T>], i: usize) -> &Pose<T> {
    match &nodes[i].value {
        NodeValue::Pose(p) => p,
        other => panic!("expected pose node, found {other:?}"),
    }
}

fn dyn6<T: Real>(m: &Matrix6<T>) -> DMatrix<T> {
    DMatrix::from_column_slice(6, 6, m.as_slice())
}

/// Residual only.
pub(crate) fn evaluate<T: Real>(f: &Factor<T>, nodes: &[Node<T>]) -> DVector<T> {
    let idx = |k: usize| f.nodes[k].index;
    match (f.kind, &f.measurement) {
        (FactorKind::Prior, Measurement::Pose(m)) => {
            DVector::from_column_slice(residual_prior(pose_of(nodes, idx(0)), m).to_vector().as_slice())
        }
        (FactorKind::Prior, Measurement::Scalar(v)) => match nodes[idx(0)].value {
            NodeValue::Floor(fl) => DVector::from_element(1, fl.z - *v),
            _ => unreachable!("scalar prior on non-floor node"),
        },
        (FactorKind::FloorEntity, Measurement::Scalar(z_ref)) => {
            let floor = match nodes[idx(0)].value {
                NodeValue::Floor(fl) => fl.z,
                _ => unreachable!("floor-entity factor without floor node"),
            };
            DVector::from_element(1, residual_floor_entity(floor, pose_of(nodes, idx(1)), *z_ref))
        }
        (FactorKind::KeyframePlane, Measurement::Plane(m)) => {
            let pi = match &nodes[idx(1)].value {
                NodeValue::Plane(p) => p,
                _ => unreachable!("plane factor without plane node"),
            };
            DVector::from_column_slice(residual_keyframe_plane(pose_of(nodes, idx(0)), pi, m).as_slice())
        }
        (_, Measurement::Pose(m)) => {
            let r = log_between(pose_of(nodes, idx(0)), pose_of(nodes, idx(1)), m);
            DVector::from_column_slice(r.to_vector().as_slice())
        }
        _ => unreachable!("factor validated at insertion"),
    }
}

/// Residual and one Jacobian block per attached node.
pub(crate) fn linearize<T: Real>(f: &Factor<T>, nodes: &[Node<T>]) -> (DVector<T>, Vec<DMatrix<T>>) {
    let idx = |k: usize| f.nodes[k].index;
    match (f.kind, &f.measurement) {
        (FactorKind::Prior, Measurement::Pose(m)) => {
            let (r, j) = jacobian_prior(pose_of(nodes, idx(0)), m);
            (DVector::from_column_slice(r.to_vector().as_slice()), vec![dyn6(&j)])
        }
        (FactorKind::Prior, Measurement::Scalar(_)) => (evaluate(f, nodes), vec![DMatrix::from_element(1, 1, T::one())]),
        (FactorKind::FloorEntity, Measurement::Scalar(z_ref)) => {
            let floor = match nodes[idx(0)].value {
                NodeValue::Floor(fl) => fl.z,
                _ => unreachable!("floor-entity factor without floor node"),
            };
            let (r, jf, je) = jacobian_floor_entity(floor, pose_of(nodes, idx(1)), *z_ref);
            (
                DVector::from_element(1, r),
                vec![DMatrix::from_element(1, 1, jf), DMatrix::from_row_slice(1, 6, je.as_slice())],
            )
        }
        (FactorKind::KeyframePlane, Measurement::Plane(m)) => {
            let pi = match &nodes[idx(1)].value {
                NodeValue::Plane(p) => p,
                _ => unreachable!("plane factor without plane node"),
            };
            let (r, jx, jp) = jacobian_keyframe_plane(pose_of(nodes, idx(0)), pi, m);
            (
                DVector::from_column_slice(r.as_slice()),
                vec![
                    DMatrix::from_column_slice(4, 6, jx.as_slice()),
                    DMatrix::from_column_slice(4, 3, jp.as_slice()),
                ],
            )
        }
        (_, Measurement::Pose(m)) => {
            let (r, ja, jb) = jacobian_between(pose_of(nodes, idx(0)), pose_of(nodes, idx(1)), m);
            (DVector::from_column_slice(r.to_vector().as_slice()), vec![dyn6(&ja), dyn6(&jb)])
        }
        _ => unreachable!("factor validated at insertion"),
    }
}

/// Squared whitened norm of a residual.
pub(crate) fn whitened_sq<T: Real>(f: &Factor<T>, r: &DVector<T>) -> T {
    (r.transpose() * &f.info * r)[(0, 0)].max(T::zero())
}

/// Huber loss on the whitened norm, and the IRLS weight at that point.
pub(crate) fn robust<T: Real>(f: &Factor<T>, sq: T) -> (T, T) {
    match f.huber {
        Some(delta) => {
            let s = sq.sqrt();
            if s <= delta {
                (sq, T::one())
            } else {
                (T::lit(2.0) * delta * s - delta * delta, delta / s)
            }
        }
        None => (sq, T::one()),
    }
}

pub(crate) fn factor_cost<T: Real>(f: &Factor<T>, nodes: &[Node<T>]) -> T {
    let r = evaluate(f, nodes);
    robust(f, whitened_sq(f, &r)).0
}
