//! Deterministic scene simulator: robot path, drifting odometry, boxes
//! (objects and straight-walking agents), planar surfaces, labeled scans and
//! noisy entity detections.
//!
//! All randomness derives from the scenario seed. Odometry noise is drawn
//! once at build time; every frame draws its own noise from a ChaCha stream
//! indexed by the frame number, so [`Scenario::frame_at`] is a pure
//! function of the scenario and the frame index.

mod config;
pub mod library;

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Matrix6, UnitQuaternion, Vector3, Vector6};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::*;

use crate::keyframe::EntitySnapshot;
use crate::loop_closure::{extract_fragment, PointLabel, Scan};
use crate::motion::{MotionPrior, SemanticClass};
use crate::{PlaneParam, Pose, Twist};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn bad(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

const BUILD_STREAM: u64 = u64::MAX;
const PLANE_STREAM: u64 = u64::MAX - 1;
const ODOM_STREAM: u64 = u64::MAX - 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn yaw_pose(x: f64, y: f64, yaw: f64) -> Pose {
    Pose::new(Vector3::new(x, y, 0.0), UnitQuaternion::from_euler_angles(0.0, 0.0, yaw))
}

fn wrap(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI {
        r + two_pi
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Turn { at: [f64; 2], yaw0: f64, dyaw: f64 },
    Move { from: [f64; 2], to: [f64; 2], yaw: f64 },
    Dwell { at: [f64; 2], yaw: f64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Timed {
    start: f64,
    duration: f64,
    seg: Segment,
}

impl Timed {
    fn pose_at(&self, t: f64) -> Pose {
        let s = if self.duration > 0.0 {
            ((t - self.start) / self.duration).clamp(0.0, 1.0)
        } else {
            1.0
        };
        match self.seg {
            Segment::Turn { at, yaw0, dyaw } => yaw_pose(at[0], at[1], yaw0 + s * dyaw),
            Segment::Move { from, to, yaw } => {
                yaw_pose(from[0] + s * (to[0] - from[0]), from[1] + s * (to[1] - from[1]), yaw)
            }
            Segment::Dwell { at, yaw } => yaw_pose(at[0], at[1], yaw),
        }
    }
}

fn build_timeline(cfg: &RobotPathConfig) -> Result<Vec<Timed>, SimError> {
    let wp = &cfg.waypoints;
    let n = wp.len();
    if n < 2 {
        return Err(bad("robot path needs at least two waypoints"));
    }
    if !(cfg.speed > 0.0 && cfg.turn_rate > 0.0) {
        return Err(bad("robot speed and turn rate must be positive"));
    }
    for d in &cfg.dwells {
        if d.lap >= cfg.laps || d.waypoint >= n || d.seconds.is_nan() || d.seconds < 0.0 {
            return Err(bad(format!("dwell {d:?} out of range")));
        }
    }
    let heading = |i: usize| {
        let (a, b) = (wp[i], wp[(i + 1) % n]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    };
    let mut out = Vec::new();
    let mut t = 0.0;
    let mut yaw = heading(0);
    let mut push = |seg: Segment, duration: f64, t: &mut f64| {
        out.push(Timed { start: *t, duration, seg });
        *t += duration;
    };
    for lap in 0..cfg.laps {
        for i in 0..n {
            let dwell: f64 = cfg
                .dwells
                .iter()
                .filter(|d| d.lap == lap && d.waypoint == i)
                .map(|d| d.seconds)
                .sum();
            if dwell > 0.0 {
                push(Segment::Dwell { at: wp[i], yaw }, dwell, &mut t);
            }
            let h = heading(i);
            let dyaw = wrap(h - yaw);
            if dyaw != 0.0 {
                push(Segment::Turn { at: wp[i], yaw0: yaw, dyaw }, dyaw.abs() / cfg.turn_rate, &mut t);
            }
            yaw = h;
            let next = wp[(i + 1) % n];
            let len = ((next[0] - wp[i][0]).powi(2) + (next[1] - wp[i][1]).powi(2)).sqrt();
            push(
                Segment::Move {
                    from: wp[i],
                    to: next,
                    yaw,
                },
                len / cfg.speed,
                &mut t,
            );
        }
    }
    Ok(out)
}

/// A resolved planar surface patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanePatch {
    pub id: u32,
    pub plane: PlaneParam,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    /// World-frame surface samples used for scans.
    pub samples: Vec<Vector3<f64>>,
}

impl PlanePatch {
    fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        let c = Vector3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        );
        (c - p).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub id: u32,
    pub half_extent: Vector3<f64>,
    pub initial: Pose,
    /// Sorted by time.
    pub relocations: Vec<(f64, Pose)>,
}

impl ObjectTrack {
    pub fn pose_at(&self, t: f64) -> Pose {
        self.relocations
            .iter()
            .take_while(|(rt, _)| *rt <= t)
            .last()
            .map_or(self.initial, |(_, p)| *p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub id: u32,
    pub start: Pose,
    pub direction: Vector3<f64>,
    pub speed: f64,
    pub active: [f64; 2],
    pub respawn_period: f64,
    pub half_extent: Vector3<f64>,
    pub straight_prior: bool,
}

impl AgentTrack {
    /// Ground-truth pose, `None` outside the active interval.
    pub fn pose_at(&self, t: f64) -> Option<Pose> {
        if t < self.active[0] || t > self.active[1] {
            return None;
        }
        let tau = (t - self.active[0]).rem_euclid(self.respawn_period);
        let d = self.direction * (self.speed * tau);
        Some(self.start.compose(&Pose::from_translation(d.x, d.y, d.z)))
    }
}

/// Per-entity information the mapper is allowed to know.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityMeta {
    pub class: SemanticClass,
    pub prior: MotionPrior<f64>,
    pub half_extent: Vector3<f64>,
}

/// A plane seen from a frame, expressed in the robot frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneObservation {
    pub plane_id: u32,
    pub plane: PlaneParam,
    pub info: Matrix4<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub index: usize,
    pub time: f64,
    pub odom: Pose,
    pub scan: Scan,
    pub detections: Vec<EntitySnapshot>,
    pub plane_observations: Vec<PlaneObservation>,
    pub ground_truth_robot: Pose,
    pub ground_truth_entities: BTreeMap<u32, Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub times: Vec<f64>,
    pub robot_path: Vec<Pose>,
    pub odometry: Vec<Pose>,
    pub planes: Vec<PlanePatch>,
    pub objects: Vec<ObjectTrack>,
    pub agents: Vec<AgentTrack>,
    box_samples: BTreeMap<u32, Vec<Vector3<f64>>>,
}

fn box_surface(h: &Vector3<f64>, spacing: f64) -> Vec<Vector3<f64>> {
    // Top and four sides; the bottom face rests on the floor.
    let mut out = Vec::new();
    let steps = |len: f64| ((2.0 * len / spacing).ceil() as usize).max(1);
    let coord = |i: usize, n: usize, half: f64| -half + (i as f64 + 0.5) * 2.0 * half / n as f64;
    let (nx, ny, nz) = (steps(h.x), steps(h.y), steps(h.z));
    for i in 0..nx {
        for j in 0..ny {
            out.push(Vector3::new(coord(i, nx, h.x), coord(j, ny, h.y), h.z));
        }
    }
    for k in 0..nz {
        let z = coord(k, nz, h.z);
        for i in 0..nx {
            let x = coord(i, nx, h.x);
            out.push(Vector3::new(x, -h.y, z));
            out.push(Vector3::new(x, h.y, z));
        }
        for j in 0..ny {
            let y = coord(j, ny, h.y);
            out.push(Vector3::new(-h.x, y, z));
            out.push(Vector3::new(h.x, y, z));
        }
    }
    out
}

fn sigma_vec(a: &[f64; 6], what: &str) -> Result<Vector6<f64>, SimError> {
    if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(bad(format!("{what} must be finite and non-negative")));
    }
    Ok(Vector6::from_column_slice(a))
}

fn sample_twist(rng: &mut ChaCha8Rng, sigma: &Vector6<f64>) -> Twist {
    let mut v = Vector6::zeros();
    for i in 0..6 {
        let z: f64 = StandardNormal.sample(rng);
        v[i] = z * sigma[i];
    }
    Twist::from_vector(&v)
}

fn segment_distance(p: &Vector3<f64>, a: [f64; 2], b: [f64; 2]) -> f64 {
    let (ax, ay, bx, by) = (a[0], a[1], b[0], b[1]);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 {
        (((p.x - ax) * dx + (p.y - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.x - ax - s * dx).powi(2) + (p.y - ay - s * dy).powi(2)).sqrt()
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        Self::build(ScenarioConfig::from_toml(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Validates and resolves a configuration.
    pub fn build(config: ScenarioConfig) -> Result<Self, SimError> {
        let c = &config;
        if !(c.rate_hz > 0.0 && c.rate_hz.is_finite()) {
            return Err(bad("rate_hz must be positive"));
        }
        for (v, what) in [
            (c.detection_range, "detection_range"),
            (c.fov, "fov"),
            (c.scan_range, "scan_range"),
            (c.plane_range, "plane_range"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(format!("{what} must be finite and non-negative")));
            }
        }
        let odom_sigma = sigma_vec(&c.noise.odom_sigma, "odom_sigma")?;
        sigma_vec(&c.noise.detection_sigma, "detection_sigma")?;
        for v in [c.noise.detection_range_scaling, c.noise.scan_point_sigma, c.noise.plane_sigma[0], c.noise.plane_sigma[1]] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad("noise parameters must be finite and non-negative"));
            }
        }

        let timeline = build_timeline(&c.robot)?;
        let path_end = timeline.last().map_or(0.0, |s| s.start + s.duration);
        let duration = c.duration.map_or(path_end, |d| d.min(path_end));
        let dt = 1.0 / c.rate_hz;
        let frames = (duration * c.rate_hz + 1e-9).floor() as usize + 1;
        let times: Vec<f64> = (0..frames).map(|k| k as f64 * dt).collect();
        let mut cursor = 0;
        let robot_path: Vec<Pose> = times
            .iter()
            .map(|&t| {
                while cursor + 1 < timeline.len() && timeline[cursor].start + timeline[cursor].duration < t {
                    cursor += 1;
                }
                timeline[cursor].pose_at(t)
            })
            .collect();

        let mut odom_rng = rng(c.seed, ODOM_STREAM);
        let mut odometry = Vec::with_capacity(frames);
        odometry.push(Pose::identity());
        for k in 1..frames {
            let rel = robot_path[k - 1].between(&robot_path[k]);
            let prev = odometry[k - 1];
            let next = if rel == Pose::identity() {
                prev
            } else {
                prev.compose(&rel).compose(&Pose::exp(&sample_twist(&mut odom_rng, &odom_sigma)))
            };
            odometry.push(next);
        }

        let mut ids = std::collections::BTreeSet::new();
        let mut check_id = |id: u32| {
            if ids.insert(id) {
                Ok(())
            } else {
                Err(bad(format!("duplicate entity id {id}")))
            }
        };

        let mut plane_rng = rng(c.seed, PLANE_STREAM);
        let mut planes = Vec::new();
        let mut plane_ids = std::collections::BTreeSet::new();
        for p in &c.planes {
            if !plane_ids.insert(p.id) {
                return Err(bad(format!("duplicate plane id {}", p.id)));
            }
            let (lo, hi) = (config::v3(&p.min), config::v3(&p.max));
            let flat: Vec<usize> = (0..3).filter(|&k| hi[k] == lo[k]).collect();
            if flat.len() != 1 || (0..3).any(|k| hi[k] < lo[k]) || !(p.density > 0.0) {
                return Err(bad(format!("plane {} must be a rectangle with one flat axis and positive density", p.id)));
            }
            let axis = flat[0];
            let mut n = Vector3::zeros();
            n[axis] = 1.0;
            let plane = PlaneParam::new(n, lo[axis]).map_err(|e| bad(e.to_string()))?;
            let area: f64 = (0..3).filter(|&k| k != axis).map(|k| hi[k] - lo[k]).product();
            let count = (area * p.density).round() as usize;
            let samples = (0..count)
                .map(|_| {
                    let mut s = lo;
                    for k in 0..3 {
                        if k != axis {
                            s[k] = plane_rng.random_range(lo[k]..=hi[k]);
                        }
                    }
                    s
                })
                .collect();
            planes.push(PlanePatch {
                id: p.id,
                plane,
                min: lo,
                max: hi,
                samples,
            });
        }

        let mut objects = Vec::new();
        for o in &c.objects {
            check_id(o.id)?;
            let h = config::v3(&o.half_extent);
            if h.iter().any(|v| !(*v > 0.0)) {
                return Err(bad(format!("object {} needs positive extents", o.id)));
            }
            let mut relocations: Vec<(f64, Pose)> = o.relocations.iter().map(|r| (r.time, r.pose)).collect();
            relocations.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (t, _) in &relocations {
                if !(*t >= 0.0 && *t <= duration) {
                    return Err(bad(format!("relocation of object {} at t={t} outside the run", o.id)));
                }
            }
            objects.push(ObjectTrack {
                id: o.id,
                half_extent: h,
                initial: o.pose,
                relocations,
            });
        }
        if let Some(rule) = &c.relocation {
            Self::apply_rule(rule, &mut objects, &c.robot, c.seed, duration)?;
        }

        let mut agents = Vec::new();
        for a in &c.agents {
            check_id(a.id)?;
            let u = config::v3(&a.direction);
            if (u.norm() - 1.0).abs() > 1e-9 {
                return Err(bad(format!("agent {} direction must be a unit vector, |u| = {}", a.id, u.norm())));
            }
            let h = config::v3(&a.half_extent);
            if h.iter().any(|v| !(*v > 0.0)) || !(a.respawn_period > 0.0) || a.active[1] < a.active[0] || !(a.speed >= 0.0) {
                return Err(bad(format!("agent {} has invalid extents, timing or speed", a.id)));
            }
            agents.push(AgentTrack {
                id: a.id,
                start: a.start,
                direction: u,
                speed: a.speed,
                active: a.active,
                respawn_period: a.respawn_period,
                half_extent: h,
                straight_prior: a.straight_prior,
            });
        }

        let mut box_samples = BTreeMap::new();
        for o in &objects {
            box_samples.insert(o.id, box_surface(&o.half_extent, 0.08));
        }
        for a in &agents {
            box_samples.insert(a.id, box_surface(&a.half_extent, 0.08));
        }

        Ok(Self {
            config,
            times,
            robot_path,
            odometry,
            planes,
            objects,
            agents,
            box_samples,
        })
    }

    fn apply_rule(
        rule: &RelocationRule,
        objects: &mut [ObjectTrack],
        path: &RobotPathConfig,
        seed: u64,
        duration: f64,
    ) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&rule.fraction) || !(rule.time >= 0.0 && rule.time <= duration) {
            return Err(bad("relocation rule needs fraction in [0,1] and a time inside the run"));
        }
        let [x0, y0, x1, y1] = rule.region;
        if !(x1 > x0 && y1 > y0) {
            return Err(bad("relocation region is empty"));
        }
        let mut r = rng(seed, BUILD_STREAM);
        let mut eligible: Vec<usize> = (0..objects.len()).filter(|&i| objects[i].relocations.is_empty()).collect();
        eligible.shuffle(&mut r);
        let count = (rule.fraction * objects.len() as f64).round() as usize;
        let mut chosen: Vec<usize> = eligible.into_iter().take(count).collect();
        chosen.sort();
        let wp = &path.waypoints;
        for &i in &chosen {
            let old = *objects[i].initial.translation();
            let mut placed = None;
            for _ in 0..10_000 {
                let p = Vector3::new(r.random_range(x0..x1), r.random_range(y0..y1), old.z);
                let clear_path = (0..wp.len()).all(|k| segment_distance(&p, wp[k], wp[(k + 1) % wp.len()]) >= rule.path_clearance);
                let clear_objects = objects.iter().enumerate().all(|(j, o)| {
                    let q = if j == i { old } else { *o.pose_at(f64::INFINITY).translation() };
                    let min = if j == i { rule.min_distance } else { 1.0 };
                    (q.xy() - p.xy()).norm() >= min
                });
                if clear_path && clear_objects {
                    placed = Some(p);
                    break;
                }
            }
            let p = placed.ok_or_else(|| bad(format!("could not place relocated object {}", objects[i].id)))?;
            let yaw = r.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let rot = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
            objects[i].relocations.push((rule.time, Pose::new(p, rot)));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.times.len()
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn sensor_extrinsic(&self) -> Pose {
        self.config.sensor_extrinsic
    }

    pub fn entity_meta(&self, id: u32) -> Option<EntityMeta> {
        if let Some(o) = self.objects.iter().find(|o| o.id == id) {
            return Some(EntityMeta {
                class: SemanticClass::Object,
                prior: MotionPrior::None,
                half_extent: o.half_extent,
            });
        }
        self.agents.iter().find(|a| a.id == id).map(|a| EntityMeta {
            class: SemanticClass::Agent,
            prior: if a.straight_prior {
                MotionPrior::StraightLine(a.direction)
            } else {
                MotionPrior::None
            },
            half_extent: a.half_extent,
        })
    }

    /// Ground-truth poses of all entities present at `t`.
    pub fn entities_at(&self, t: f64) -> BTreeMap<u32, Pose> {
        let mut out: BTreeMap<u32, Pose> = self.objects.iter().map(|o| (o.id, o.pose_at(t))).collect();
        for a in &self.agents {
            if let Some(p) = a.pose_at(t) {
                out.insert(a.id, p);
            }
        }
        out
    }

    fn half_extent(&self, id: u32) -> Vector3<f64> {
        self.entity_meta(id).map_or_else(Vector3::zeros, |m| m.half_extent)
    }

    /// Sensor frame `k`.
    pub fn frame_at(&self, k: usize) -> SensorFrame {
        let c = &self.config;
        let t = self.times[k];
        let robot = self.robot_path[k];
        let sensor = robot.compose(&c.sensor_extrinsic);
        let sensor_inv = sensor.inverse();
        let mut r = rng(c.seed, k as u64);
        let entities = self.entities_at(t);

        let base = Vector6::from_column_slice(&c.noise.detection_sigma);
        let mut detections = Vec::new();
        let mut det_poses = Vec::new();
        for (&id, pose) in &entities {
            let z = sensor_inv.compose(pose);
            let range = z.translation().norm();
            let bearing = z.translation().y.atan2(z.translation().x);
            if !(range < c.detection_range && bearing.abs() <= 0.5 * c.fov) {
                continue;
            }
            let sigma = base * (1.0 + range * c.noise.detection_range_scaling);
            let meas = z.compose(&Pose::exp(&sample_twist(&mut r, &sigma)));
            let meta = self.entity_meta(id).expect("entity exists");
            det_poses.push((id, meas, meta.class));
            detections.push(Matrix6::from_diagonal(&sigma.component_mul(&sigma)));
        }

        let scan_sigma = c.noise.scan_point_sigma;
        let noise = Normal::new(0.0, scan_sigma).expect("validated sigma");
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let origin = *sensor.translation();
        for patch in &self.planes {
            if patch.distance_to(&origin) >= c.scan_range {
                continue;
            }
            for p in &patch.samples {
                if (p - origin).norm() < c.scan_range {
                    let q = sensor_inv.transform_point(p);
                    points.push(q + Vector3::new(noise.sample(&mut r), noise.sample(&mut r), noise.sample(&mut r)));
                    labels.push(PointLabel::StaticSurface);
                }
            }
        }
        for (&id, pose) in &entities {
            let reach = self.half_extent(id).norm();
            if (pose.translation() - origin).norm() >= c.scan_range + reach {
                continue;
            }
            for l in &self.box_samples[&id] {
                let p = pose.transform_point(l);
                if (p - origin).norm() < c.scan_range {
                    let q = sensor_inv.transform_point(&p);
                    points.push(q + Vector3::new(noise.sample(&mut r), noise.sample(&mut r), noise.sample(&mut r)));
                    labels.push(PointLabel::EntityFragment(id));
                }
            }
        }
        let scan = Scan {
            points,
            labels: Some(labels),
        };

        let margin = Vector3::from_element(c.mapping.fragment_margin);
        let detections = det_poses
            .into_iter()
            .zip(detections)
            .map(|((id, meas, class), sigma)| EntitySnapshot {
                entity_id: id,
                class,
                pose_sensor: meas,
                sigma,
                fragment: extract_fragment(&scan, id, t, &meas, &(self.half_extent(id) + margin)),
                time: t,
            })
            .collect();

        let [sn, sd] = c.noise.plane_sigma;
        let mut plane_observations = Vec::new();
        for patch in &self.planes {
            if patch.distance_to(&origin) >= c.plane_range {
                continue;
            }
            let local = patch.plane.in_frame(&robot);
            let dn = Vector3::new(
                r.sample::<f64, _>(StandardNormal) * sn,
                r.sample::<f64, _>(StandardNormal) * sn,
                r.sample::<f64, _>(StandardNormal) * sn,
            );
            let dd = r.sample::<f64, _>(StandardNormal) * sd;
            let n = UnitQuaternion::from_scaled_axis(dn) * local.normal();
            let plane = PlaneParam::new(n, local.distance() + dd).expect("unit normal");
            let wn = 1.0 / sn.max(1e-4).powi(2);
            let wd = 1.0 / sd.max(1e-4).powi(2);
            plane_observations.push(PlaneObservation {
                plane_id: patch.id,
                plane,
                info: Matrix4::from_diagonal(&nalgebra::Vector4::new(wn, wn, wn, wd)),
            });
        }

        SensorFrame {
            index: k,
            time: t,
            odom: self.odometry[k],
            scan,
            detections,
            plane_observations,
            ground_truth_robot: robot,
            ground_truth_entities: entities,
        }
    }

    /// All frames in order.
    pub fn scripted_run(&self) -> impl Iterator<Item = SensorFrame> + '_ {
        (0..self.frame_count()).map(|k| self.frame_at(k))
    }
}

/// Line-oriented replay record of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub time: f64,
    pub odom: Pose,
    pub ground_truth_robot: Pose,
    pub ground_truth_entities: BTreeMap<u32, Pose>,
    pub detections: Vec<DetectionRecord>,
    pub planes: Vec<PlaneRecord>,
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<PointLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub entity_id: u32,
    pub class: SemanticClass,
    pub pose_sensor: Pose,
    pub sigma_diagonal: [f64; 6],
    pub fragment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub plane_id: u32,
    /// `[nx, ny, nz, d]` in the robot frame.
    pub plane: [f64; 4],
}

impl From<&SensorFrame> for FrameRecord {
    fn from(f: &SensorFrame) -> Self {
        Self {
            index: f.index,
            time: f.time,
            odom: f.odom,
            ground_truth_robot: f.ground_truth_robot,
            ground_truth_entities: f.ground_truth_entities.clone(),
            detections: f
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    entity_id: d.entity_id,
                    class: d.class,
                    pose_sensor: d.pose_sensor,
                    sigma_diagonal: std::array::from_fn(|i| d.sigma[(i, i)]),
                    fragment: d.fragment.indices.clone(),
                })
                .collect(),
            planes: f
                .plane_observations
                .iter()
                .map(|p| {
                    let n = p.plane.normal();
                    PlaneRecord {
                        plane_id: p.plane_id,
                        plane: [n.x, n.y, n.z, p.plane.distance()],
                    }
                })
                .collect(),
            points: f.scan.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            labels: f.scan.labels.clone().unwrap_or_default(),
        }
    }
}
