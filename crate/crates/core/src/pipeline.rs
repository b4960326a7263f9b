//! Full system: keyframe policy, entity mapping, factor construction, loop
//! closure and optimization driven by a simulated frame stream.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{validate_psd, GeometryError};
use crate::graph::{LmConfig, NodeId, NodeSpec, NodeValue, OptReport};
use crate::keyframe::{EntitySnapshot, PolicyConfig, PolicyState, Reason};
use crate::loop_closure::{
    epcr_entities, filter_scans, find_candidates, inconsistent_entities, propose_loop_factor, register_scans,
    EpcrMode, Fragment, LoopCandidate, Scan,
};
use crate::motion::{select_model, MotionModelConfig};
use crate::simulator::{MappingConfig, Scenario};
use crate::{Factor, FactorGraph, InfoMatrix, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("intra-entity and floor-entity factors require keyframe-entity factors")]
    Disconnected,
    #[error("unknown setup '{0}'")]
    UnknownSetup(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSetup {
    kf_entity: bool,
    intra_entity: bool,
    floor_entity: bool,
    epcr_mode: EpcrMode,
    dynamic_policy: bool,
    timer: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Preset {
    Baseline,
    OnlyKfE,
    IntraE,
    FE,
    Fcs,
    AlwaysEpcr,
    MbEpcr,
    Full,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Baseline,
        Preset::OnlyKfE,
        Preset::IntraE,
        Preset::FE,
        Preset::Fcs,
        Preset::AlwaysEpcr,
        Preset::MbEpcr,
        Preset::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::OnlyKfE => "only-kf-e",
            Preset::IntraE => "intra-e",
            Preset::FE => "f-e",
            Preset::Fcs => "fcs",
            Preset::AlwaysEpcr => "always-epcr",
            Preset::MbEpcr => "mb-epcr",
            Preset::Full => "full",
        }
    }

    pub fn setup(self) -> AblationSetup {
        let (kf, intra, floor, epcr, timer) = match self {
            Preset::Baseline => (false, false, false, EpcrMode::No, false),
            Preset::OnlyKfE => (true, false, false, EpcrMode::No, false),
            Preset::IntraE => (true, true, false, EpcrMode::No, false),
            Preset::FE => (true, false, true, EpcrMode::No, false),
            Preset::Fcs => (true, true, true, EpcrMode::No, false),
            Preset::AlwaysEpcr => (true, true, true, EpcrMode::Always, false),
            Preset::MbEpcr => (true, true, true, EpcrMode::Conditional, false),
            Preset::Full => (true, true, true, EpcrMode::Conditional, true),
        };
        AblationSetup {
            kf_entity: kf,
            intra_entity: intra,
            floor_entity: floor,
            epcr_mode: epcr,
            dynamic_policy: kf,
            timer,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| PipelineError::UnknownSetup(s.to_string()))
    }
}

impl AblationSetup {
    pub fn new(
        kf_entity: bool,
        intra_entity: bool,
        floor_entity: bool,
        epcr_mode: EpcrMode,
        dynamic_policy: bool,
        timer: bool,
    ) -> Result<Self, PipelineError> {
        if (intra_entity || floor_entity) && !kf_entity {
            return Err(PipelineError::Disconnected);
        }
        Ok(Self {
            kf_entity,
            intra_entity,
            floor_entity,
            epcr_mode,
            dynamic_policy,
            timer,
        })
    }

    pub fn kf_entity(&self) -> bool {
        self.kf_entity
    }
    pub fn intra_entity(&self) -> bool {
        self.intra_entity
    }
    pub fn floor_entity(&self) -> bool {
        self.floor_entity
    }
    pub fn epcr_mode(&self) -> EpcrMode {
        self.epcr_mode
    }
    pub fn dynamic_policy(&self) -> bool {
        self.dynamic_policy
    }
    pub fn timer(&self) -> bool {
        self.timer
    }

    pub fn with_epcr(self, mode: EpcrMode) -> Self {
        Self { epcr_mode: mode, ..self }
    }
}

/// Accepts a preset name or a comma-separated flag list such as
/// `kfe,intra,floor,epcr=conditional,dynamic,timer`.
impl FromStr for AblationSetup {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(p) = s.parse::<Preset>() {
            return Ok(p.setup());
        }
        let mut flags = [false; 5];
        let mut epcr = EpcrMode::No;
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "kfe" => flags[0] = true,
                "intra" => flags[1] = true,
                "floor" => flags[2] = true,
                "dynamic" => flags[3] = true,
                "timer" => flags[4] = true,
                "epcr=no" => epcr = EpcrMode::No,
                "epcr=always" => epcr = EpcrMode::Always,
                "epcr=conditional" => epcr = EpcrMode::Conditional,
                _ => return Err(PipelineError::UnknownSetup(s.to_string())),
            }
        }
        Self::new(flags[0], flags[1], flags[2], epcr, flags[3], flags[4])
    }
}

/// Smallest detection variance used when inverting, m² or rad².
const MIN_VARIANCE: f64 = 1e-8;

/// Map-frame pose and information of a detection taken from keyframe `kf_pose`.
pub fn map_entity(
    detection: &EntitySnapshot,
    kf_pose: &Pose,
    sensor_extrinsic: &Pose,
) -> Result<(Pose, InfoMatrix), PipelineError> {
    let sym = validate_psd(&DMatrix::from_column_slice(6, 6, detection.sigma.as_slice()))?;
    let eig = SymmetricEigen::new(Matrix6::from_column_slice(sym.as_slice()));
    let lifted = eig.eigenvalues.map(|l| l.max(MIN_VARIANCE));
    let sigma = eig.eigenvectors * Matrix6::from_diagonal(&lifted) * eig.eigenvectors.transpose();
    let info = InfoMatrix::from_covariance(&sigma)?;
    Ok((kf_pose.compose(sensor_extrinsic).compose(&detection.pose_sensor), info))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub frame: usize,
    pub time: f64,
    pub reasons: BTreeSet<Reason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub time_old: f64,
    pub time_new: f64,
    /// Entities judged inconsistent between the two keyframes.
    pub inconsistent: BTreeSet<u32>,
    /// Entities whose fragments were removed before registration.
    pub removed: BTreeSet<u32>,
    pub candidate: Option<LoopCandidate>,
    /// Fitness of the same pair registered without any filtering, when
    /// some entity was inconsistent.
    pub unfiltered_fitness: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptRecord {
    pub time: f64,
    pub nodes: usize,
    pub factors: usize,
    pub report: OptReport,
}

/// One entity estimate: the latest node of the entity at an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntitySample {
    pub entity_id: u32,
    /// Time of the optimization epoch.
    pub epoch: f64,
    /// Time of the estimated node.
    pub time: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub setup: AblationSetup,
    /// Optimized keyframe poses after the final optimization.
    pub trajectory: Vec<(f64, Pose)>,
    /// Map-frame ground truth at the keyframe times.
    pub ground_truth: Vec<(f64, Pose)>,
    pub entity_series: Vec<EntitySample>,
    /// Estimate of each entity when first inserted.
    pub entity_first: BTreeMap<u32, EntitySample>,
    /// Map-frame entity ground truth at keyframe times.
    pub entity_truth: BTreeMap<u32, Vec<(f64, Pose)>>,
    pub decisions: Vec<DecisionRecord>,
    pub loops: Vec<LoopRecord>,
    pub optimizations: Vec<OptRecord>,
    pub graph: FactorGraph,
}

impl RunReport {
    /// `timestamp tx ty tz qx qy qz qw` per keyframe.
    pub fn trajectory_text(&self) -> String {
        pose_lines(&self.trajectory)
    }

    pub fn ground_truth_text(&self) -> String {
        pose_lines(&self.ground_truth)
    }

    pub fn entity_truth_at(&self, entity_id: u32, time: f64) -> Option<Pose> {
        let track = self.entity_truth.get(&entity_id)?;
        track.iter().find(|(t, _)| *t == time).map(|(_, p)| *p)
    }
}

pub fn pose_lines(poses: &[(f64, Pose)]) -> String {
    let mut out = String::new();
    for (t, p) in poses {
        let a = p.to_array();
        out.push_str(&format!(
            "{t:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}\n",
            a[0], a[1], a[2], a[3], a[4], a[5], a[6]
        ));
    }
    out
}

struct KeyframeRecord {
    node: NodeId,
    time: f64,
    frame: usize,
    odom: Pose,
    scan: Scan,
    fragments: Vec<Fragment>,
}

fn diag_info(sigma: &[f64; 6], scale: f64) -> InfoMatrix {
    let d = Vector6::from_iterator(sigma.iter().map(|s| 1.0 / (scale * s.max(1e-4).powi(2))));
    InfoMatrix::from_diagonal(&d).expect("positive diagonal")
}

struct Mapper<'a> {
    scenario: &'a Scenario,
    setup: AblationSetup,
    m: &'a MappingConfig,
    lm: LmConfig,
    motion: MotionModelConfig<f64>,
    graph: FactorGraph,
    policy: PolicyState,
    drift: Pose,
    drift_node: Option<NodeId>,
    keyframes: Vec<KeyframeRecord>,
    planes: BTreeMap<u32, NodeId>,
    floor: Option<NodeId>,
    z_ref: BTreeMap<u32, f64>,
    last_loop: Option<f64>,
    report_series: Vec<EntitySample>,
    entity_first: BTreeMap<u32, EntitySample>,
    decisions: Vec<DecisionRecord>,
    loops: Vec<LoopRecord>,
    optimizations: Vec<OptRecord>,
}

impl<'a> Mapper<'a> {
    fn new(scenario: &'a Scenario, setup: AblationSetup) -> Self {
        let m = &scenario.config.mapping;
        let policy_cfg = PolicyConfig {
            entity_triggers: setup.dynamic_policy,
            timer: setup.dynamic_policy && setup.timer,
            ..m.policy.clone()
        };
        Self {
            scenario,
            setup,
            m,
            lm: LmConfig::default(),
            motion: MotionModelConfig {
                nu: m.nu,
                kappa: m.kappa,
                object_info: diag_info(&m.object_model_sigma, 1.0),
                agent_info: diag_info(&m.agent_model_sigma, 1.0),
            },
            graph: FactorGraph::new(),
            policy: PolicyState::new(policy_cfg),
            drift: Pose::identity(),
            drift_node: None,
            keyframes: Vec::new(),
            planes: BTreeMap::new(),
            floor: None,
            z_ref: BTreeMap::new(),
            last_loop: None,
            report_series: Vec::new(),
            entity_first: BTreeMap::new(),
            decisions: Vec::new(),
            loops: Vec::new(),
            optimizations: Vec::new(),
        }
    }

    fn optimize(&mut self, time: f64) {
        let report = self.graph.optimize(&self.lm);
        self.optimizations.push(OptRecord {
            time,
            nodes: self.graph.node_count(),
            factors: self.graph.factors().len(),
            report,
        });
    }

    fn register(&mut self, frame: crate::simulator::SensorFrame) -> Result<(), PipelineError> {
        let ext = self.scenario.sensor_extrinsic();
        let t = frame.time;
        let x_init = self.drift.compose(&frame.odom);
        let kf = self.graph.add_keyframe(t, x_init);

        match self.keyframes.last() {
            None => {
                self.graph
                    .add_factor(Factor::pose_prior(kf, Pose::identity(), &InfoMatrix::isotropic(1e6, 1e6)))
                    .expect("prior on keyframe");
                let drift = self.graph.add_node(NodeSpec::OdomDrift(self.drift)).expect("drift node");
                self.drift_node = Some(drift);
            }
            Some(prev) => {
                let steps = (frame.index - prev.frame).max(1) as f64;
                let info = diag_info(&self.scenario.config.noise.odom_sigma, steps);
                let meas = prev.odom.between(&frame.odom);
                self.graph
                    .add_factor(Factor::odometry(prev.node, kf, meas, &info))
                    .expect("odometry between keyframes");
            }
        }

        for obs in &frame.plane_observations {
            let node = match self.planes.get(&obs.plane_id) {
                Some(&n) => n,
                None => {
                    let n = self
                        .graph
                        .add_node(NodeSpec::Plane(obs.plane.to_map(&x_init)))
                        .expect("plane node");
                    self.planes.insert(obs.plane_id, n);
                    n
                }
            };
            let info = DMatrix::from_column_slice(4, 4, obs.info.as_slice());
            self.graph
                .add_factor(Factor::keyframe_plane(kf, node, obs.plane, info))
                .expect("keyframe-plane factor");
        }

        let mut new_nodes = BTreeMap::new();
        if self.setup.kf_entity {
            for det in &frame.detections {
                let id = det.entity_id;
                let (map_pose, info) = map_entity(det, &x_init, &ext)?;
                let prev = self.graph.latest_entity_node(id);
                let node = self.graph.add_entity(id, t, map_pose).expect("one node per entity and time");
                self.graph
                    .add_factor(Factor::keyframe_entity(kf, node, ext.compose(&det.pose_sensor), &info))
                    .expect("keyframe-entity factor");
                if let (true, Some(prev)) = (self.setup.intra_entity, prev) {
                    let meta = self.scenario.entity_meta(id).expect("detected entities exist");
                    let prev_pose = self.graph.pose(prev).expect("entity node");
                    let (model, model_info) = select_model(meta.class, &meta.prior, &prev_pose, &map_pose, &self.motion);
                    self.graph
                        .add_factor(Factor::intra_entity(prev, node, model, &model_info))
                        .expect("intra-entity factor");
                }
                if self.setup.floor_entity {
                    let floor = *self.floor.get_or_insert_with(|| {
                        let f = self
                            .graph
                            .add_node(NodeSpec::Floor(crate::graph::FloorLevel { z: 0.0 }))
                            .expect("floor node");
                        self.graph.add_factor(Factor::scalar_prior(f, 0.0, 1e2)).expect("floor prior");
                        f
                    });
                    let level = self.graph.floor_level(floor).expect("floor node");
                    let z_ref = *self.z_ref.entry(id).or_insert(map_pose.translation().z - level);
                    let w = 1.0 / self.m.floor_entity_sigma.max(1e-4).powi(2);
                    self.graph
                        .add_factor(Factor::floor_entity(floor, node, z_ref, w))
                        .expect("floor-entity factor");
                }
                self.entity_first.entry(id).or_insert(EntitySample {
                    entity_id: id,
                    epoch: t,
                    time: t,
                    pose: map_pose,
                });
                new_nodes.insert(id, node);
            }
        }

        self.optimize(t);
        self.keyframes.push(KeyframeRecord {
            node: kf,
            time: t,
            frame: frame.index,
            odom: frame.odom,
            scan: frame.scan,
            fragments: frame.detections.iter().map(|d| d.fragment.clone()).collect(),
        });
        if self.close_loops(t) {
            self.optimize(t);
        }

        let x = self.graph.pose(kf).expect("keyframe node");
        self.drift = x.compose(&frame.odom.inverse());
        if let Some(d) = self.drift_node {
            self.graph.set_value(d, NodeValue::Pose(self.drift)).expect("drift node is a pose");
        }
        let optimized: BTreeMap<u32, Pose> = new_nodes
            .iter()
            .filter_map(|(&id, &n)| self.graph.pose(n).map(|p| (id, p)))
            .collect();
        self.policy.commit_registration(&frame.odom, &frame.detections, &optimized, t);

        let ids: Vec<u32> = self.graph.entity_ids().collect();
        for id in ids {
            if let Some(n) = self.graph.latest_entity_node(id) {
                let node = self.graph.node(n).expect("entity node");
                self.report_series.push(EntitySample {
                    entity_id: id,
                    epoch: t,
                    time: node.time.unwrap_or(t),
                    pose: *node.value.as_pose().expect("entity pose"),
                });
            }
        }
        Ok(())
    }

    /// Returns whether any loop factor was added.
    fn close_loops(&mut self, now: f64) -> bool {
        if self.last_loop.is_some_and(|t| now - t < self.m.loop_cooldown) {
            return false;
        }
        let ext = self.scenario.sensor_extrinsic();
        let new = self.keyframes.last().expect("keyframe just stored");
        let candidates: Vec<NodeId> = find_candidates(&self.graph, new.node, self.m.loop_radius, self.m.loop_min_gap)
            .into_iter()
            .take(self.m.max_loop_candidates)
            .collect();
        let info = InfoMatrix::from_diagonal(&Vector6::from_iterator(
            self.m.loop_sigma.iter().map(|s| 1.0 / s.max(1e-4).powi(2)),
        ))
        .expect("positive diagonal");
        let mut added = false;
        for old_node in candidates {
            let old = self.keyframes.iter().find(|k| k.node == old_node).expect("candidate is a stored keyframe");
            let delta = 2.0 * self.policy.config.delta_e;
            let inconsistent =
                inconsistent_entities(&self.graph, old.time, new.time, delta, self.policy.config.rotation_weight);
            let removed = epcr_entities(self.setup.epcr_mode, &old.fragments, &new.fragments, &inconsistent);
            let mut record = LoopRecord {
                time_old: old.time,
                time_new: new.time,
                inconsistent: inconsistent.clone(),
                removed: removed.clone(),
                candidate: None,
                unfiltered_fitness: None,
                error: None,
            };
            let x_old = self.graph.pose(old.node).expect("keyframe pose");
            let x_new = self.graph.pose(new.node).expect("keyframe pose");
            let guess = x_old.compose(&ext).between(&x_new.compose(&ext));
            if !inconsistent.is_empty() {
                record.unfiltered_fitness = register_scans(&old.scan, &new.scan, &guess, &self.m.icp)
                    .ok()
                    .map(|r| r.fitness);
            }
            let result = filter_scans(&old.scan, &new.scan, &old.fragments, &new.fragments, &removed)
                .map_err(|e| e.to_string())
                .and_then(|(a, b)| register_scans(&a, &b, &guess, &self.m.icp).map_err(|e| e.to_string()));
            match result {
                Err(e) => record.error = Some(e),
                Ok(r) => {
                    let relative = ext.compose(&r.pose).compose(&ext.inverse());
                    let mut cand = LoopCandidate {
                        kf_old: old.node,
                        kf_new: new.node,
                        relative_pose: relative,
                        fitness: r.fitness,
                        accepted: false,
                    };
                    if let Some(mut f) = propose_loop_factor(&cand, self.m.icp.accept_fitness, &info) {
                        if let Some(d) = self.m.loop_huber {
                            f = f.with_huber(d);
                        }
                        self.graph.add_factor(f).expect("loop factor between keyframes");
                        cand.accepted = true;
                        added = true;
                    }
                    record.candidate = Some(cand);
                }
            }
            self.loops.push(record);
        }
        if added {
            self.last_loop = Some(now);
        }
        added
    }
}

/// Runs the whole scenario under one ablation setup.
pub fn run(scenario: &Scenario, setup: &AblationSetup) -> Result<RunReport, PipelineError> {
    let mut mapper = Mapper::new(scenario, *setup);
    let ext = scenario.sensor_extrinsic();
    let origin_inv = scenario.robot_path[0].inverse();
    let mut ground_truth = Vec::new();
    let mut entity_truth: BTreeMap<u32, Vec<(f64, Pose)>> = BTreeMap::new();

    for frame in scenario.scripted_run() {
        let decision = mapper
            .policy
            .should_register(&frame.odom, &mapper.drift, &frame.detections, &ext, frame.time);
        if !(frame.index == 0 || decision.register) {
            continue;
        }
        mapper.decisions.push(DecisionRecord {
            frame: frame.index,
            time: frame.time,
            reasons: decision.reasons,
        });
        ground_truth.push((frame.time, origin_inv.compose(&frame.ground_truth_robot)));
        for (&id, p) in &frame.ground_truth_entities {
            entity_truth.entry(id).or_default().push((frame.time, origin_inv.compose(p)));
        }
        mapper.register(frame)?;
    }

    let trajectory = mapper
        .keyframes
        .iter()
        .map(|k| (k.time, mapper.graph.pose(k.node).expect("keyframe pose")))
        .collect();
    Ok(RunReport {
        scenario: scenario.config.name.clone(),
        seed: scenario.config.seed,
        setup: *setup,
        trajectory,
        ground_truth,
        entity_series: mapper.report_series,
        entity_first: mapper.entity_first,
        entity_truth,
        decisions: mapper.decisions,
        loops: mapper.loops,
        optimizations: mapper.optimizations,
        graph: mapper.graph,
    })
}
