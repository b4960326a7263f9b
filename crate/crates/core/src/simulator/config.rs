//! Scenario configuration schema (TOML).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::keyframe::PolicyConfig;
use crate::loop_closure::IcpConfig;
use crate::Pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    /// Stops the run early; defaults to the end of the robot path.
    #[serde(default)]
    pub duration: Option<f64>,
    pub sensor_extrinsic: Pose,
    /// Entity detection range, m. Detections are emitted strictly inside it.
    pub detection_range: f64,
    /// Full horizontal field of view of the entity detector, rad.
    pub fov: f64,
    pub scan_range: f64,
    /// Planes closer than this to the sensor are observed.
    pub plane_range: f64,
    pub noise: NoiseConfig,
    pub robot: RobotPathConfig,
    #[serde(default)]
    pub planes: Vec<PlanePatchConfig>,
    #[serde(default)]
    pub objects: Vec<ObjectConfig>,
    #[serde(default)]
    pub relocation: Option<RelocationRule>,
    #[serde(default)]
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub mapping: MappingConfig,
}

fn default_rate() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-frame odometry noise σ, `[rho, phi]`; applied only while moving.
    pub odom_sigma: [f64; 6],
    pub detection_sigma: [f64; 6],
    /// σ grows as `(1 + range · scaling)`, 1/m.
    pub detection_range_scaling: f64,
    pub scan_point_sigma: f64,
    /// Plane observation σ: normal (rad), distance (m).
    pub plane_sigma: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwellConfig {
    pub lap: usize,
    pub waypoint: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotPathConfig {
    /// Closed loop of `[x, y]` waypoints on the floor.
    pub waypoints: Vec<[f64; 2]>,
    pub speed: f64,
    pub turn_rate: f64,
    pub laps: usize,
    #[serde(default)]
    pub dwells: Vec<DwellConfig>,
}

/// Axis-aligned rectangular surface patch; exactly one axis must be flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanePatchConfig {
    pub id: u32,
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Scan sampling density, points per m².
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelocationEvent {
    pub time: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub id: u32,
    pub pose: Pose,
    pub half_extent: [f64; 3],
    #[serde(default)]
    pub relocations: Vec<RelocationEvent>,
}

/// Relocates a seeded random subset of objects at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelocationRule {
    pub fraction: f64,
    pub time: f64,
    /// `[x_min, y_min, x_max, y_max]` of the placement region.
    pub region: [f64; 4],
    pub min_distance: f64,
    /// New positions keep at least this distance from the robot path.
    #[serde(default)]
    pub path_clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: u32,
    pub start: Pose,
    pub direction: [f64; 3],
    pub speed: f64,
    /// `[t_start, t_end]`.
    pub active: [f64; 2],
    /// The agent reappears at `start` every period.
    pub respawn_period: f64,
    pub half_extent: [f64; 3],
    /// Whether the mapper knows the straight-line prior.
    #[serde(default = "yes")]
    pub straight_prior: bool,
}

fn yes() -> bool {
    true
}

/// Back-end parameters carried with the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub policy: PolicyConfig,
    pub nu: f64,
    pub kappa: f64,
    /// σ of the object static model, `[rho, phi]`.
    pub object_model_sigma: [f64; 6],
    pub agent_model_sigma: [f64; 6],
    /// σ of the floor-entity height constraint, m.
    pub floor_entity_sigma: f64,
    pub loop_radius: f64,
    pub loop_min_gap: f64,
    /// Skip loop search for this long after an accepted closure, s.
    pub loop_cooldown: f64,
    pub max_loop_candidates: usize,
    pub loop_sigma: [f64; 6],
    pub loop_huber: Option<f64>,
    pub icp: IcpConfig,
    /// Margin added to entity boxes when cropping fragments, m.
    pub fragment_margin: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::default(),
            nu: 0.05,
            kappa: 0.01,
            object_model_sigma: [0.02, 0.02, 0.02, 0.02, 0.02, 0.02],
            agent_model_sigma: [0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
            floor_entity_sigma: 0.02,
            loop_radius: 1.5,
            loop_min_gap: 20.0,
            loop_cooldown: 3.0,
            max_loop_candidates: 1,
            loop_sigma: [0.05, 0.05, 0.05, 0.01, 0.01, 0.01],
            loop_huber: None,
            icp: IcpConfig::default(),
            fragment_margin: 0.05,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }
}

pub(crate) fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}
