use std::collections::BTreeMap;

use dynslam::keyframe::{EntitySnapshot, PolicyConfig, PolicyState};
use dynslam::loop_closure::Fragment;
use dynslam::motion::SemanticClass;
use dynslam::Pose;
use nalgebra::{Matrix6, UnitQuaternion, Vector3};
use proptest::prelude::*;

fn pose(r: f64) -> impl Strategy<Value = Pose> {
    (-r..r, -r..r, -r..r, -0.5..0.5f64).prop_map(|(x, y, z, a)| {
        Pose::new(Vector3::new(x, y, z), UnitQuaternion::from_euler_angles(0.0, 0.0, a))
    })
}

fn snapshot() -> impl Strategy<Value = EntitySnapshot> {
    (0u32..8, pose(3.0)).prop_map(|(id, p)| EntitySnapshot {
        entity_id: id,
        class: SemanticClass::Object,
        pose_sensor: p,
        sigma: Matrix6::identity() * 1e-4,
        fragment: Fragment::default(),
        time: 0.0,
    })
}

fn state() -> impl Strategy<Value = PolicyState> {
    (proptest::collection::btree_map(0u32..8, pose(3.0), 0..6), pose(1.0), 0.0..40.0f64).prop_map(
        |(mapped, odom, t)| {
            let mut s = PolicyState::new(PolicyConfig::default());
            let dets: Vec<EntitySnapshot> = mapped
                .keys()
                .map(|&id| EntitySnapshot {
                    entity_id: id,
                    class: SemanticClass::Object,
                    pose_sensor: Pose::identity(),
                    sigma: Matrix6::identity(),
                    fragment: Fragment::default(),
                    time: t,
                })
                .collect();
            s.commit_registration(&odom, &dets, &mapped.into_iter().collect::<BTreeMap<_, _>>(), t);
            s
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn reasons_accumulate_over_supersets(
        s in state(),
        odom in pose(1.0),
        drift in pose(0.3),
        base in proptest::collection::vec(snapshot(), 0..4),
        extra in proptest::collection::vec(snapshot(), 0..4),
        now in 0.0..80.0f64,
    ) {
        let ext = Pose::from_translation(0.0, 0.0, 0.3);
        let d1 = s.should_register(&odom, &drift, &base, &ext, now);
        let mut sup = base.clone();
        sup.extend(extra);
        let d2 = s.should_register(&odom, &drift, &sup, &ext, now);
        prop_assert!(d1.reasons.is_subset(&d2.reasons));
        prop_assert!(!d1.register || d2.register);
        // No hidden state: the same call twice agrees.
        prop_assert_eq!(s.should_register(&odom, &drift, &sup, &ext, now), d2);
    }
}
