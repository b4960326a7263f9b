//! Loop-closure candidates, inconsistent-entity detection, scan filtering
//! and point-to-point ICP.

use std::collections::BTreeSet;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{NodeId, NodeKind};
use crate::{Factor, FactorGraph, InfoMatrix, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopClosureError {
    #[error("fragment of entity {entity_id} indexes point {index} but the scan has {len} points")]
    FragmentIndex { entity_id: u32, index: usize, len: usize },
    #[error("registration found only {0} correspondences")]
    TooFewCorrespondences(usize),
    #[error("registration overlap {0:.3} below minimum")]
    InsufficientOverlap(f64),
    #[error("cannot register an empty scan")]
    EmptyScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PointLabel {
    StaticSurface,
    EntityFragment(u32),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scan {
    pub points: Vec<Vector3<f64>>,
    /// Per-point provenance; simulation only.
    pub labels: Option<Vec<PointLabel>>,
}

impl Scan {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, labels: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> Scan {
        Scan {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Points of a scan belonging to one entity detection, by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fragment {
    pub entity_id: u32,
    pub time: f64,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpcrMode {
    /// Scans are registered unfiltered.
    No,
    /// Every entity fragment is removed.
    Always,
    /// Only fragments of entities inconsistent between the two times.
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopCandidate {
    pub kf_old: NodeId,
    pub kf_new: NodeId,
    /// Pose of `kf_new` in the frame of `kf_old`.
    pub relative_pose: Pose,
    /// Mean squared inlier distance, m².
    pub fitness: f64,
    pub accepted: bool,
}

/// Earlier keyframes within `radius` of `kf_new` (optimized translations)
/// and at least `min_gap` seconds older, nearest first.
pub fn find_candidates(graph: &FactorGraph, kf_new: NodeId, radius: f64, min_gap: f64) -> Vec<NodeId> {
    let Some(new) = graph.node(kf_new) else {
        return Vec::new();
    };
    let (Some(t_new), Some(p_new)) = (new.time, new.value.as_pose()) else {
        return Vec::new();
    };
    let mut out: Vec<(f64, NodeId)> = graph
        .keyframes()
        .filter(|n| n.id != kf_new && n.time.is_some_and(|t| t_new - t >= min_gap))
        .filter_map(|n| {
            let d = (n.value.as_pose()?.translation() - p_new.translation()).norm();
            (d <= radius).then_some((d, n.id))
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.into_iter().map(|(_, id)| id).collect()
}

/// Entities whose optimized poses at (or latest before) the two times differ
/// by more than `delta_e_prime` in tangent norm.
pub fn inconsistent_entities(
    graph: &FactorGraph,
    t_old: f64,
    t_new: f64,
    delta_e_prime: f64,
    rotation_weight: f64,
) -> BTreeSet<u32> {
    graph
        .entity_ids()
        .filter(|&e| {
            let (Some(a), Some(b)) = (
                graph.entity_node_at_or_before(e, t_old),
                graph.entity_node_at_or_before(e, t_new),
            ) else {
                return false;
            };
            match (graph.pose(a), graph.pose(b)) {
                (Some(pa), Some(pb)) => pa.between(&pb).tangent_norm(rotation_weight) > delta_e_prime,
                _ => false,
            }
        })
        .collect()
}

/// Removes the union of fragments of `entities` from `scan`.
pub fn filter_scan(scan: &Scan, fragments: &[Fragment], entities: &BTreeSet<u32>) -> Result<Scan, LoopClosureError> {
    let mut drop = vec![false; scan.len()];
    for f in fragments {
        for &i in &f.indices {
            if i >= scan.len() {
                return Err(LoopClosureError::FragmentIndex {
                    entity_id: f.entity_id,
                    index: i,
                    len: scan.len(),
                });
            }
            if entities.contains(&f.entity_id) {
                drop[i] = true;
            }
        }
    }
    let keep = |i: &usize| !drop[*i];
    Ok(Scan {
        points: (0..scan.len()).filter(keep).map(|i| scan.points[i]).collect(),
        labels: scan
            .labels
            .as_ref()
            .map(|l| (0..scan.len()).filter(keep).map(|i| l[i]).collect()),
    })
}

pub fn filter_scans(
    scan_old: &Scan,
    scan_new: &Scan,
    fragments_old: &[Fragment],
    fragments_new: &[Fragment],
    inconsistent: &BTreeSet<u32>,
) -> Result<(Scan, Scan), LoopClosureError> {
    Ok((
        filter_scan(scan_old, fragments_old, inconsistent)?,
        filter_scan(scan_new, fragments_new, inconsistent)?,
    ))
}

/// Entity set removed under `mode`, given the inconsistent set.
pub fn epcr_entities(
    mode: EpcrMode,
    fragments_old: &[Fragment],
    fragments_new: &[Fragment],
    inconsistent: &BTreeSet<u32>,
) -> BTreeSet<u32> {
    match mode {
        EpcrMode::No => BTreeSet::new(),
        EpcrMode::Always => fragments_old.iter().chain(fragments_new).map(|f| f.entity_id).collect(),
        EpcrMode::Conditional => inconsistent.clone(),
    }
}

/// Indices of points inside the entity's box (axes along the entity frame).
pub fn extract_fragment(
    scan: &Scan,
    entity_id: u32,
    time: f64,
    entity_pose_sensor: &Pose,
    half_extent: &Vector3<f64>,
) -> Fragment {
    let inv = entity_pose_sensor.inverse();
    let indices = scan
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let q = inv.transform_point(p);
            (0..3).all(|k| q[k].abs() <= half_extent[k])
        })
        .map(|(i, _)| i)
        .collect();
    Fragment {
        entity_id,
        time,
        indices,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub max_correspondence_distance: f64,
    /// Minimum fraction of source points with a correspondence.
    pub min_overlap: f64,
    pub accept_fitness: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            max_correspondence_distance: 1.0,
            min_overlap: 0.3,
            accept_fitness: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps source points onto the target: `pose · b ≈ a`.
    pub pose: Pose,
    pub fitness: f64,
    pub correspondences: usize,
    pub iterations: usize,
}

/// Uniform voxel hash for fixed-radius nearest-neighbour queries.
struct Grid {
    max_dist2: f64,
    tree: ImmutableKdTree<f64, u64, 3, 32>,
}

impl Grid {
    fn new(points: &[Vector3<f64>], max_dist: f64) -> Self {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self {
            max_dist2: max_dist * max_dist,
            tree: ImmutableKdTree::new_from_slice(&coords),
        }
    }

    /// Nearest point within the correspondence distance.
    fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        let n = self.tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
        (n.distance <= self.max_dist2).then_some((n.item as usize, n.distance))
    }
}

/// Closed-form rigid transform minimizing `Σ |dst_i − T·src_i|²`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = vt.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    let rot = UnitQuaternion::from_matrix(&r);
    Pose::new(cd - rot * cs, rot)
}

/// Point-to-point ICP aligning `scan_b` onto `scan_a`.
pub fn register_scans(
    scan_a: &Scan,
    scan_b: &Scan,
    initial_guess: &Pose,
    config: &IcpConfig,
) -> Result<IcpResult, LoopClosureError> {
    if scan_a.is_empty() || scan_b.is_empty() {
        return Err(LoopClosureError::EmptyScan);
    }
    let grid = Grid::new(&scan_a.points, config.max_correspondence_distance);
    let correspond = |pose: &Pose| -> (Vec<(usize, usize)>, f64) {
        let mut pairs = Vec::new();
        let mut sq = 0.0;
        for (j, p) in scan_b.points.iter().enumerate() {
            if let Some((i, d2)) = grid.nearest(&pose.transform_point(p)) {
                pairs.push((i, j));
                sq += d2;
            }
        }
        let fit = if pairs.is_empty() { f64::INFINITY } else { sq / pairs.len() as f64 };
        (pairs, fit)
    };

    let mut pose = *initial_guess;
    let (mut pairs, mut fitness) = correspond(&pose);
    let mut iterations = 0;
    while iterations < config.max_iterations {
        if pairs.len() < 3 {
            return Err(LoopClosureError::TooFewCorrespondences(pairs.len()));
        }
        let src: Vec<_> = pairs.iter().map(|&(_, j)| scan_b.points[j]).collect();
        let dst: Vec<_> = pairs.iter().map(|&(i, _)| scan_a.points[i]).collect();
        pose = kabsch(&src, &dst);
        iterations += 1;
        let (next, fit) = correspond(&pose);
        let same = next == pairs;
        pairs = next;
        fitness = fit;
        if same {
            break;
        }
    }
    if pairs.len() < 3 {
        return Err(LoopClosureError::TooFewCorrespondences(pairs.len()));
    }
    let overlap = pairs.len() as f64 / scan_b.len() as f64;
    if overlap < config.min_overlap {
        return Err(LoopClosureError::InsufficientOverlap(overlap));
    }
    Ok(IcpResult {
        pose,
        fitness,
        correspondences: pairs.len(),
        iterations,
    })
}

/// Loop factor for an accepted candidate; `None` if fitness is too high or
/// either node is not a keyframe.
pub fn propose_loop_factor(candidate: &LoopCandidate, accept_fitness: f64, info: &InfoMatrix) -> Option<Factor> {
    if candidate.fitness >= accept_fitness
        || candidate.kf_old.kind != NodeKind::Keyframe
        || candidate.kf_new.kind != NodeKind::Keyframe
    {
        return None;
    }
    Some(Factor::loop_closure(
        candidate.kf_old,
        candidate.kf_new,
        candidate.relative_pose,
        info,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cloud() -> Vec<Vector3<f64>> {
        // Three orthogonal walls, irregularly sampled.
        let mut pts = Vec::new();
        for i in 0..15 {
            for j in 0..12 {
                let (a, b) = (i as f64 * 0.21, j as f64 * 0.17 + 0.01 * (i % 3) as f64);
                pts.push(Vector3::new(a, b, 0.0));
                pts.push(Vector3::new(a, 0.0, b));
                pts.push(Vector3::new(0.0, a * 0.9, b));
            }
        }
        pts
    }

    #[test]
    fn nearest_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut v = || Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
        let pts: Vec<_> = (0..400).map(|_| v()).collect();
        let queries: Vec<_> = (0..400).map(|_| v() * 1.3).collect();
        let grid = Grid::new(&pts, 0.7);
        for q in &queries {
            let brute = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .filter(|&(_, d2)| d2 <= 0.49)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            assert_eq!(grid.nearest(q).map(|n| n.1), brute.map(|b| b.1));
        }
    }

    #[test]
    fn find_candidates_examples() {
        let mut g = FactorGraph::new();
        let k0 = g.add_keyframe(0.0, Pose::identity());
        assert!(find_candidates(&g, k0, 1.0, 10.0).is_empty());
        g.add_keyframe(10.0, Pose::from_translation(5.0, 0.0, 0.0));
        let near_recent = g.add_keyframe(39.0, Pose::from_translation(0.3, 0.0, 0.0));
        let k3 = g.add_keyframe(40.0, Pose::from_translation(0.2, 0.0, 0.0));
        assert_eq!(find_candidates(&g, k3, 1.0, 30.0), vec![k0]);
        assert_eq!(find_candidates(&g, k3, 1.0, 0.5), vec![near_recent, k0]);
    }

    #[test]
    fn inconsistent_entities_examples() {
        let mut g = FactorGraph::new();
        g.add_entity(1, 0.0, Pose::from_translation(1.0, 1.0, 0.0)).unwrap();
        g.add_entity(1, 50.0, Pose::from_translation(1.0, 1.0, 0.0)).unwrap();
        g.add_entity(2, 0.0, Pose::from_translation(3.0, 1.0, 0.0)).unwrap();
        g.add_entity(2, 45.0, Pose::from_translation(3.0, 3.0, 0.0)).unwrap();
        g.add_entity(3, 50.0, Pose::identity()).unwrap();
        let inc = inconsistent_entities(&g, 0.0, 50.0, 0.3, 1.0);
        assert_eq!(inc.into_iter().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn filter_examples() {
        let scan = Scan::new((0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect());
        let frags = vec![
            Fragment { entity_id: 1, time: 0.0, indices: vec![1, 2, 3] },
            Fragment { entity_id: 2, time: 0.0, indices: vec![3, 4] },
        ];
        let none = filter_scan(&scan, &frags, &BTreeSet::new()).unwrap();
        assert_eq!(none, scan);
        let both: BTreeSet<u32> = [1, 2].into();
        let out = filter_scan(&scan, &frags, &both).unwrap();
        assert_eq!(out.len(), 6);
        let one: BTreeSet<u32> = [2].into();
        assert_eq!(filter_scan(&scan, &frags, &one).unwrap().len(), 8);
        let bad = vec![Fragment { entity_id: 1, time: 0.0, indices: vec![10] }];
        assert!(matches!(
            filter_scan(&scan, &bad, &BTreeSet::new()),
            Err(LoopClosureError::FragmentIndex { index: 10, .. })
        ));
    }

    #[test]
    fn extract_fragment_examples() {
        let half = Vector3::new(0.5, 0.5, 0.5);
        assert!(extract_fragment(&Scan::default(), 0, 0.0, &Pose::identity(), &half).indices.is_empty());
        let scan = Scan::new(vec![Vector3::new(0.1, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)]);
        assert_eq!(extract_fragment(&scan, 0, 0.0, &Pose::identity(), &half).indices, vec![0]);

        // Long thin box rotated 45°: (0.6, 0.6, 0) lies inside it but
        // outside the same box unrotated.
        let half = Vector3::new(1.0, 0.1, 0.1);
        let scan = Scan::new(vec![Vector3::new(0.6, 0.6, 0.0)]);
        let rot = Pose::rot_z(std::f64::consts::FRAC_PI_4);
        assert!(extract_fragment(&scan, 0, 0.0, &Pose::identity(), &half).indices.is_empty());
        assert_eq!(extract_fragment(&scan, 0, 0.0, &rot, &half).indices, vec![0]);
    }

    #[test]
    fn icp_identity_and_known_transform() {
        let a = Scan::new(cloud());
        let cfg = IcpConfig::default();
        let r = register_scans(&a, &a, &Pose::identity(), &cfg).unwrap();
        assert!(r.pose.tangent_norm(1.0) < 1e-9);
        assert!(r.fitness < 1e-18);

        let m = Pose::from_translation(0.2, 0.0, 0.0).compose(&Pose::rot_z(5f64.to_radians()));
        let b = a.transformed(&m);
        let r = register_scans(&a, &b, &Pose::identity(), &cfg).unwrap();
        assert!(r.pose.between(&m.inverse()).tangent_norm(1.0) < 1e-3, "{:?}", r.pose);
        assert!(r.fitness < 1e-6);
    }

    #[test]
    fn icp_disjoint_scans_fail() {
        let a = Scan::new(cloud());
        let b = a.transformed(&Pose::from_translation(50.0, 0.0, 0.0));
        assert!(register_scans(&a, &b, &Pose::identity(), &IcpConfig::default()).is_err());
        assert_eq!(
            register_scans(&a, &Scan::default(), &Pose::identity(), &IcpConfig::default()),
            Err(LoopClosureError::EmptyScan)
        );
    }

    #[test]
    fn kabsch_recovers_rotation() {
        let src = cloud();
        let m = Pose::new(Vector3::new(1.0, -2.0, 0.5), UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1));
        let dst: Vec<_> = src.iter().map(|p| m.transform_point(p)).collect();
        let est = kabsch(&src, &dst);
        assert_relative_eq!(est.to_homogeneous(), m.to_homogeneous(), epsilon = 1e-9);
    }

    #[test]
    fn propose_examples() {
        let mut g = FactorGraph::new();
        let a = g.add_keyframe(0.0, Pose::identity());
        let b = g.add_keyframe(40.0, Pose::identity());
        let mut c = LoopCandidate {
            kf_old: a,
            kf_new: b,
            relative_pose: Pose::identity(),
            fitness: 0.001,
            accepted: false,
        };
        let info = InfoMatrix::identity();
        assert!(propose_loop_factor(&c, 0.05, &info).is_some());
        c.fitness = 0.2;
        assert!(propose_loop_factor(&c, 0.05, &info).is_none());
    }

    #[test]
    fn epcr_modes_share_one_path() {
        let frags = vec![
            Fragment { entity_id: 1, time: 0.0, indices: vec![0] },
            Fragment { entity_id: 2, time: 0.0, indices: vec![1] },
        ];
        let inc: BTreeSet<u32> = [2].into();
        assert!(epcr_entities(EpcrMode::No, &frags, &frags, &inc).is_empty());
        assert_eq!(epcr_entities(EpcrMode::Conditional, &frags, &frags, &inc), inc);
        assert_eq!(epcr_entities(EpcrMode::Always, &frags, &frags, &inc), [1, 2].into());
        // Conditional with nothing inconsistent equals No.
        assert_eq!(
            epcr_entities(EpcrMode::Conditional, &frags, &frags, &BTreeSet::new()),
            epcr_entities(EpcrMode::No, &frags, &frags, &inc)
        );
    }
}
