use dynslam::evaluation::{align, ate};
use dynslam::Pose;
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

fn trajectory() -> impl Strategy<Value = Vec<(f64, Pose)>> {
    proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -1.0..1.0f64, -3.0..3.0f64), 3..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (x, y, z, a))| {
                (i as f64 * 0.1, Pose::new(Vector3::new(x, y, z), UnitQuaternion::from_euler_angles(0.0, 0.0, a)))
            })
            .collect()
    })
}

fn rigid() -> impl Strategy<Value = Pose> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64, -3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(
        |(x, y, z, a, b, c)| Pose::new(Vector3::new(x, y, z), UnitQuaternion::from_scaled_axis(Vector3::new(a, b, c))),
    )
}

fn perturb(t: &[(f64, Pose)], seed: u64) -> Vec<(f64, Pose)> {
    t.iter()
        .enumerate()
        .map(|(i, (s, p))| {
            let k = (i as u64 * 2654435761 + seed) % 1000;
            let d = Pose::from_translation(k as f64 * 1e-3, (k % 7) as f64 * 0.02, (k % 3) as f64 * 0.01);
            (*s, p.compose(&d))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ate_is_invariant_to_rigid_motion(gt in trajectory(), g in rigid(), seed in 0u64..1000) {
        let est = perturb(&gt, seed);
        let moved: Vec<_> = est.iter().map(|(t, p)| (*t, g.compose(p))).collect();
        let a = ate(&est, &gt).unwrap();
        let b = ate(&moved, &gt).unwrap();
        prop_assert!((a.rmse - b.rmse).abs() < 1e-9, "{} vs {}", a.rmse, b.rmse);
        prop_assert!((a.std - b.std).abs() < 1e-9);
    }

    #[test]
    fn ate_matches_two_pass_oracle(gt in trajectory(), seed in 0u64..1000) {
        let est = perturb(&gt, seed);
        let t = align(&est, &gt).unwrap();
        // First pass: norms and mean; second pass: spread around the mean.
        let mut norms = Vec::new();
        let mut sum = 0.0;
        for ((_, e), (_, g)) in est.iter().zip(&gt) {
            let q = t.rotation_matrix() * e.translation() + t.translation();
            let d = ((g.translation().x - q.x).powi(2) + (g.translation().y - q.y).powi(2) + (g.translation().z - q.z).powi(2)).sqrt();
            norms.push(d);
            sum += d;
        }
        let n = norms.len() as f64;
        let mean = sum / n;
        let mut sq = 0.0;
        let mut var = 0.0;
        for d in &norms {
            sq += d * d;
            var += (d - mean) * (d - mean);
        }
        let s = ate(&est, &gt).unwrap();
        prop_assert!((s.rmse - (sq / n).sqrt()).abs() < 1e-12);
        prop_assert!((s.std - (var / n).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn rotation_about_z_recovered() {
    let gt: Vec<(f64, Pose)> = (0..20)
        .map(|i| (i as f64, Pose::from_translation((i as f64).sin() * 3.0, i as f64 * 0.3, (i % 4) as f64 * 0.2)))
        .collect();
    let r = Pose::rot_z(30f64.to_radians());
    let est: Vec<_> = gt.iter().map(|(t, p)| (*t, r.inverse().compose(p))).collect();
    let t = align(&est, &gt).unwrap();
    assert!(t.between(&r).tangent_norm(1.0) < 1e-9);
}
