//! Keyframe registration policy: robot motion, new entities, moved entities
//! and per-entity refresh timers.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use crate::loop_closure::Fragment;
use crate::motion::SemanticClass;
use crate::Pose;

/// One detection of an entity in a sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EntitySnapshot {
    pub entity_id: u32,
    pub class: SemanticClass,
    pub pose_sensor: Pose,
    /// Detection covariance, `[rho, phi]` order.
    pub sigma: Matrix6<f64>,
    pub fragment: Fragment,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Reason {
    RobotMoved,
    NewEntity,
    EntityMoved,
    TimerExpired,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Decision {
    pub register: bool,
    pub reasons: BTreeSet<Reason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub delta_r: f64,
    pub delta_e: f64,
    pub timer_period: f64,
    pub rotation_weight: f64,
    /// Enables the NewEntity and EntityMoved triggers.
    pub entity_triggers: bool,
    pub timer: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            delta_r: 0.5,
            delta_e: 0.1,
            timer_period: 20.0,
            rotation_weight: 1.0,
            entity_triggers: true,
            timer: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub config: PolicyConfig,
    pub last_kf_odom: Pose,
    pub mapped_ids: BTreeSet<u32>,
    /// Map-frame pose and time of the last mapping of each entity.
    pub last_mapped_pose: BTreeMap<u32, (Pose, f64)>,
    /// Refresh deadline per entity.
    pub timers: BTreeMap<u32, f64>,
}

impl PolicyState {
    pub fn new(config: PolicyConfig) -> Self {
        Self {
            config,
            last_kf_odom: Pose::identity(),
            mapped_ids: BTreeSet::new(),
            last_mapped_pose: BTreeMap::new(),
            timers: BTreeMap::new(),
        }
    }

    pub fn should_register(
        &self,
        odom_now: &Pose,
        drift: &Pose,
        detections: &[EntitySnapshot],
        sensor_extrinsic: &Pose,
        now: f64,
    ) -> Decision {
        let cfg = &self.config;
        let w = cfg.rotation_weight;
        let mut reasons = BTreeSet::new();
        if self.last_kf_odom.between(odom_now).tangent_norm(w) > cfg.delta_r {
            reasons.insert(Reason::RobotMoved);
        }
        let sensor_in_map = drift.compose(odom_now).compose(sensor_extrinsic);
        for det in detections {
            let id = det.entity_id;
            if !self.mapped_ids.contains(&id) {
                if cfg.entity_triggers {
                    reasons.insert(Reason::NewEntity);
                }
                continue;
            }
            if cfg.entity_triggers {
                if let Some((last, _)) = self.last_mapped_pose.get(&id) {
                    let now_map = sensor_in_map.compose(&det.pose_sensor);
                    if last.between(&now_map).tangent_norm(w) > cfg.delta_e {
                        reasons.insert(Reason::EntityMoved);
                    }
                }
            }
            if cfg.timer && self.timers.get(&id).is_some_and(|&deadline| deadline <= now) {
                reasons.insert(Reason::TimerExpired);
            }
        }
        Decision {
            register: !reasons.is_empty(),
            reasons,
        }
    }

    /// Records a registration: detected entities become mapped at their
    /// optimized map poses and their timers restart.
    pub fn commit_registration(
        &mut self,
        odom_now: &Pose,
        detections: &[EntitySnapshot],
        optimized_map_poses: &BTreeMap<u32, Pose>,
        now: f64,
    ) {
        self.last_kf_odom = *odom_now;
        for det in detections {
            let id = det.entity_id;
            self.mapped_ids.insert(id);
            if let Some(p) = optimized_map_poses.get(&id) {
                self.last_mapped_pose.insert(id, (*p, now));
            }
            self.timers.insert(id, now + self.config.timer_period);
        }
    }
}
