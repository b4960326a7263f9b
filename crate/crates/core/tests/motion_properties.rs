use dynslam::geometry::{mahalanobis, InfoMatrix, Pose};
use dynslam::graph::residual_intra_entity;
use dynslam::motion::{agent_model_straight, object_model};
use nalgebra::{UnitQuaternion, Vector3, Vector6};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose<f64>> {
    (vec3(5.0), vec3(2.0)).prop_map(|(t, w)| Pose::new(t, UnitQuaternion::from_scaled_axis(w)))
}

fn unit() -> impl Strategy<Value = Vector3<f64>> {
    vec3(1.0).prop_filter("nonzero", |v| v.norm() > 1e-2).prop_map(|v| v.normalize())
}

fn info() -> impl Strategy<Value = InfoMatrix<f64>> {
    proptest::collection::vec(0.1..1e3f64, 6)
        .prop_map(|d| InfoMatrix::from_diagonal(&Vector6::from_column_slice(&d)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn straight_output_parallel_and_idempotent(a in pose(), b in pose(), u in unit(), base in info()) {
        let (p, _) = agent_model_straight(&a, &b, &u, &base, 0.01);
        let t = p.translation();
        prop_assert!((t - u * u.dot(t)).norm() < 1e-12);
        prop_assert_eq!(*p.rotation(), UnitQuaternion::identity());
        let (again, _) = agent_model_straight(&Pose::identity(), &p, &u, &base, 0.01);
        // |u|² rounds, so re-projection agrees to the last few ulps.
        prop_assert!((again.translation() - t).norm() <= 1e-12 * (1.0 + t.norm()));
        prop_assert_eq!(again.rotation(), p.rotation());
    }

    #[test]
    fn threshold_is_strict(a in pose(), b in pose(), lam in info()) {
        let rel = a.between(&b);
        let m = mahalanobis(&rel.log(), &lam);
        prop_assume!(m > 0.0);
        let at = object_model(&a, &b, &lam, m);
        prop_assert!(at != Pose::identity());
        prop_assert!(at.between(&rel).tangent_norm(1.0) < 1e-9);
        let above = object_model(&a, &b, &lam, m * (1.0 + 1e-9));
        prop_assert_eq!(above, Pose::identity());
    }

    #[test]
    fn static_branch_gives_zero_intra_residual(a in pose(), lam in info()) {
        let model = object_model(&a, &a, &lam, 0.05);
        prop_assert_eq!(model, Pose::identity());
        prop_assert!(residual_intra_entity(&a, &a, &model).to_vector().norm() < 1e-12);
    }
}
