use std::time::Instant;

use dynslam::geometry::{InfoMatrix, Pose, Twist};
use dynslam::graph::{
    residual_keyframe_entity, residual_keyframe_plane, residual_loop_closure, residual_odometry, residual_prior,
    Factor, FactorGraph, LmConfig, NodeId, PlaneParam,
};
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn anchor() -> InfoMatrix<f64> {
    InfoMatrix::isotropic(1e6, 1e6)
}

fn random_twist(rng: &mut ChaCha8Rng, t: f64, r: f64) -> Twist<f64> {
    let mut v = Vector6::zeros();
    for i in 0..3 {
        v[i] = rng.random_range(-t..t);
        v[i + 3] = rng.random_range(-r..r);
    }
    Twist::from_vector(&v)
}

/// Independent dense Gauss–Newton with numeric Jacobians over a stacked
/// residual of odometry, loop and prior factors. Returns the optimal cost.
fn dense_oracle(
    init: &[Pose<f64>],
    between: &[(usize, usize, Pose<f64>, InfoMatrix<f64>)],
    prior: &(usize, Pose<f64>, InfoMatrix<f64>),
) -> f64 {
    let n = init.len();
    let stack = |xs: &[Pose<f64>]| -> DVector<f64> {
        let mut r = Vec::new();
        for (a, b, m, _) in between {
            r.extend_from_slice(residual_odometry(&xs[*a], &xs[*b], m).to_vector().as_slice());
        }
        r.extend_from_slice(residual_prior(&xs[prior.0], &prior.1).to_vector().as_slice());
        DVector::from_vec(r)
    };
    let m = 6 * (between.len() + 1);
    let mut w = DMatrix::zeros(m, m);
    for (k, (_, _, _, info)) in between.iter().enumerate() {
        w.view_mut((6 * k, 6 * k), (6, 6)).copy_from(info.matrix());
    }
    w.view_mut((m - 6, m - 6), (6, 6)).copy_from(prior.2.matrix());
    let cost = |xs: &[Pose<f64>]| {
        let r = stack(xs);
        (r.transpose() * &w * &r)[0]
    };

    let mut xs = init.to_vec();
    for _ in 0..100 {
        let r = stack(&xs);
        let mut j = DMatrix::zeros(m, 6 * n);
        let h = 1e-7;
        for v in 0..n {
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let mut xp = xs.clone();
                xp[v] = xs[v].retract(&Twist::from_vector(&d));
                let mut xm = xs.clone();
                xm[v] = xs[v].retract(&Twist::from_vector(&-d));
                j.set_column(6 * v + k, &((stack(&xp) - stack(&xm)) / (2.0 * h)));
            }
        }
        let hm = j.transpose() * &w * &j;
        let g = j.transpose() * &w * &r;
        let step = hm.lu().solve(&(-g)).expect("dense system solvable");
        for v in 0..n {
            let d = Vector6::from_column_slice(&step.as_slice()[6 * v..6 * v + 6]);
            xs[v] = xs[v].retract(&Twist::from_vector(&d));
        }
        if step.norm() < 1e-13 {
            break;
        }
    }
    cost(&xs)
}

#[test]
fn loop_closure_chain_matches_dense_solution() {
    let odo_info = InfoMatrix::from_diagonal(&Vector6::new(100.0, 100.0, 100.0, 400.0, 400.0, 400.0)).unwrap();
    let loop_info = InfoMatrix::isotropic(50.0, 200.0);
    let step = Pose::new(Vector3::new(1.0, 0.05, 0.0), UnitQuaternion::from_euler_angles(0.0, 0.0, 0.12));
    let init = vec![Pose::identity(), step, step.compose(&step)];
    let loop_meas = Pose::new(Vector3::new(1.8, 0.3, 0.02), UnitQuaternion::from_euler_angles(0.01, 0.0, 0.2));
    let between = vec![
        (0, 1, step, odo_info),
        (1, 2, step, odo_info),
        (0, 2, loop_meas, loop_info),
    ];
    let prior = (0, Pose::identity(), anchor());

    let mut g = FactorGraph::<f64>::new();
    let ids: Vec<NodeId> = init.iter().enumerate().map(|(i, p)| g.add_keyframe(i as f64, *p)).collect();
    g.add_factor(Factor::pose_prior(ids[0], prior.1, &prior.2)).unwrap();
    g.add_factor(Factor::odometry(ids[0], ids[1], step, &odo_info)).unwrap();
    g.add_factor(Factor::odometry(ids[1], ids[2], step, &odo_info)).unwrap();
    g.add_factor(Factor::loop_closure(ids[0], ids[2], loop_meas, &loop_info)).unwrap();
    let rep = g.optimize(&LmConfig::default());
    assert!(rep.converged, "{rep:?}");
    assert!(rep.is_monotone());

    let oracle = dense_oracle(&init, &between, &prior);
    assert!(oracle > 1e-3, "problem should be inconsistent, got {oracle}");
    assert!((rep.final_cost - oracle).abs() < 1e-6, "lm {} vs dense {}", rep.final_cost, oracle);
}

#[test]
fn odometry_chain_converges_quadratically() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = FactorGraph::<f64>::new();
    let info = InfoMatrix::isotropic(100.0, 400.0);
    let mut prev = g.add_keyframe(0.0, Pose::identity());
    g.add_factor(Factor::pose_prior(prev, Pose::identity(), &anchor())).unwrap();
    for k in 1..30 {
        let meas = Pose::exp(&random_twist(&mut rng, 1.0, 0.3));
        // Start well away from the solution.
        let cur = g.add_keyframe(k as f64, Pose::exp(&random_twist(&mut rng, 0.2, 0.1)));
        g.add_factor(Factor::odometry(prev, cur, meas, &info)).unwrap();
        prev = cur;
    }
    let rep = g.optimize(&LmConfig::default());
    assert!(rep.final_cost < 1e-12, "{rep:?}");
    assert!(rep.iterations <= 10, "{} iterations", rep.iterations);
    assert!(rep.is_monotone());
}

#[test]
fn five_hundred_nodes_under_one_second() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = FactorGraph::<f64>::new();
    let info = InfoMatrix::isotropic(100.0, 400.0);
    let mut truth = vec![Pose::identity()];
    let mut est = vec![Pose::identity()];
    let mut ids = vec![g.add_keyframe(0.0, Pose::identity())];
    g.add_factor(Factor::pose_prior(ids[0], Pose::identity(), &anchor())).unwrap();
    for k in 1..500 {
        // Square loop of 100 poses, repeated.
        let turn = if k % 25 == 0 { std::f64::consts::FRAC_PI_2 } else { 0.0 };
        let step = Pose::new(Vector3::new(0.2, 0.0, 0.0), UnitQuaternion::from_euler_angles(0.0, 0.0, turn));
        truth.push(truth[k - 1].compose(&step));
        let meas = step.compose(&Pose::exp(&random_twist(&mut rng, 0.01, 0.005)));
        est.push(est[k - 1].compose(&meas));
        let id = g.add_keyframe(k as f64, est[k]);
        g.add_factor(Factor::odometry(ids[k - 1], id, meas, &info)).unwrap();
        ids.push(id);
        if k >= 100 && k % 10 == 0 {
            let old = k - 100;
            let lc = truth[old].between(&truth[k]);
            g.add_factor(Factor::loop_closure(ids[old], id, lc, &info)).unwrap();
        }
    }
    let t0 = Instant::now();
    let rep = g.optimize(&LmConfig::default());
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(rep.converged, "{rep:?}");
    assert!(rep.is_monotone());
    assert!(rep.final_cost < rep.initial_cost);
    assert!(elapsed < 1.0, "took {elapsed:.3}s");
}

#[test]
fn zero_information_leaves_graph_untouched() {
    let mut g = FactorGraph::<f64>::new();
    let a = g.add_keyframe(0.0, Pose::identity());
    let b = g.add_keyframe(1.0, Pose::from_translation(0.5, 0.0, 0.0));
    let zero = InfoMatrix::from_diagonal(&Vector6::zeros()).unwrap();
    g.add_factor(Factor::odometry(a, b, Pose::from_translation(1.0, 0.0, 0.0), &zero)).unwrap();
    let rep = g.optimize(&LmConfig::default());
    assert_eq!(rep.final_cost, 0.0);
    assert_eq!(g.pose(b).unwrap(), Pose::from_translation(0.5, 0.0, 0.0));
}

#[test]
fn single_precision_graph_optimizes() {
    let mut g = FactorGraph::<f32>::new();
    let a = g.add_keyframe(0.0, Pose::identity());
    let b = g.add_keyframe(1.0, Pose::identity());
    g.add_factor(Factor::pose_prior(a, Pose::identity(), &InfoMatrix::isotropic(1e4, 1e4))).unwrap();
    g.add_factor(Factor::odometry(a, b, Pose::from_translation(1.0, 0.0, 0.0), &InfoMatrix::identity())).unwrap();
    let rep = g.optimize(&LmConfig::default());
    assert!(rep.is_monotone());
    assert!((g.pose(b).unwrap().translation().x - 1.0).abs() < 1e-4);
}

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose<f64>> {
    (vec3(5.0), vec3(2.0)).prop_map(|(t, w)| Pose::new(t, UnitQuaternion::from_scaled_axis(w)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Left-composing every node of a prior-free subproblem with a fixed
    /// transform leaves relative residuals unchanged.
    #[test]
    fn gauge_invariance(t in pose(), a in pose(), b in pose(), m in pose(), n in vec3(1.0), d in -3.0..3.0f64) {
        prop_assume!(n.norm() > 0.2);
        let ta = t.compose(&a);
        let tb = t.compose(&b);
        for f in [residual_odometry, residual_keyframe_entity, residual_loop_closure] {
            let r0 = f(&a, &b, &m).to_vector();
            let r1 = f(&ta, &tb, &m).to_vector();
            prop_assert!((r0 - r1).norm() < 1e-9);
        }
        let pi = PlaneParam::new(n, d).unwrap();
        let meas = pi.in_frame(&a);
        let r0 = residual_keyframe_plane(&a, &pi, &meas);
        let r1 = residual_keyframe_plane(&ta, &pi.to_map(&t), &meas);
        prop_assert!((r0 - r1).norm() < 1e-9);
    }
}
