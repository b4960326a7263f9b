//! Typed factor graph over keyframes, time-indexed entity poses, planes and
//! the floor level, with a sparse Levenberg–Marquardt solver.

mod factors;
mod optimizer;
mod ordering;
mod plane;
pub mod text;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, InfoMatrix, Pose};
use crate::scalar::Real;

pub use factors::{
    jacobian_between, jacobian_floor_entity, jacobian_keyframe_plane, jacobian_prior,
    residual_floor_entity, residual_intra_entity, residual_keyframe_entity,
    residual_keyframe_plane, residual_loop_closure, residual_odometry, residual_prior,
};
pub use optimizer::{LmConfig, OptReport};
pub use plane::PlaneParam;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("entity {entity_id} already has a node at t={time}")]
    DuplicateEntityNode { entity_id: u32, time: f64 },
    #[error("unknown node {0:?}")]
    UnknownNode(NodeId),
    #[error("{kind:?} factor expects {expected} nodes, got {got}")]
    Arity {
        kind: FactorKind,
        expected: usize,
        got: usize,
    },
    #[error("{kind:?} factor cannot attach to node of kind {node:?}")]
    NodeKindMismatch { kind: FactorKind, node: NodeKind },
    #[error("{kind:?} factor has the wrong measurement type")]
    MeasurementMismatch { kind: FactorKind },
    #[error("information matrix must be {expected}x{expected}")]
    InfoShape { expected: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("graph parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Keyframe,
    EntityAtTime,
    Plane,
    Floor,
    OdomDrift,
}

/// Handle of a node; `index` is the node's slot in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorLevel<T: Real> {
    pub z: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeValue<T: Real> {
    Pose(Pose<T>),
    Plane(PlaneParam<T>),
    Floor(FloorLevel<T>),
}

impl<T: Real> NodeValue<T> {
    /// Tangent-space dimension of the value.
    pub fn dim(&self) -> usize {
        match self {
            NodeValue::Pose(_) => 6,
            NodeValue::Plane(_) => 3,
            NodeValue::Floor(_) => 1,
        }
    }

    pub fn as_pose(&self) -> Option<&Pose<T>> {
        match self {
            NodeValue::Pose(p) => Some(p),
            _ => None,
        }
    }
}

/// Initial value of a node to be inserted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeSpec<T: Real> {
    Keyframe { time: f64, pose: Pose<T> },
    EntityAtTime { entity_id: u32, time: f64, pose: Pose<T> },
    Plane(PlaneParam<T>),
    Floor(FloorLevel<T>),
    OdomDrift(Pose<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T: Real> {
    pub id: NodeId,
    pub value: NodeValue<T>,
    pub time: Option<f64>,
    pub entity_id: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorKind {
    Odometry,
    KeyframeEntity,
    IntraEntity,
    FloorEntity,
    KeyframePlane,
    LoopClosure,
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement<T: Real> {
    Pose(Pose<T>),
    Scalar(T),
    Plane(PlaneParam<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor<T: Real> {
    pub kind: FactorKind,
    pub nodes: Vec<NodeId>,
    pub measurement: Measurement<T>,
    /// Square information matrix matching the residual dimension.
    pub info: DMatrix<T>,
    /// Huber threshold in whitened units, if robustified.
    pub huber: Option<T>,
}

impl<T: Real> Factor<T> {
    pub fn between(kind: FactorKind, a: NodeId, b: NodeId, meas: Pose<T>, info: &InfoMatrix<T>) -> Self {
        Self {
            kind,
            nodes: vec![a, b],
            measurement: Measurement::Pose(meas),
            info: DMatrix::from_column_slice(6, 6, info.matrix().as_slice()),
            huber: None,
        }
    }

    pub fn odometry(a: NodeId, b: NodeId, meas: Pose<T>, info: &InfoMatrix<T>) -> Self {
        Self::between(FactorKind::Odometry, a, b, meas, info)
    }

    pub fn keyframe_entity(kf: NodeId, entity: NodeId, meas: Pose<T>, info: &InfoMatrix<T>) -> Self {
        Self::between(FactorKind::KeyframeEntity, kf, entity, meas, info)
    }

    pub fn intra_entity(prev: NodeId, cur: NodeId, model: Pose<T>, info: &InfoMatrix<T>) -> Self {
        Self::between(FactorKind::IntraEntity, prev, cur, model, info)
    }

    pub fn loop_closure(old: NodeId, new: NodeId, meas: Pose<T>, info: &InfoMatrix<T>) -> Self {
        Self::between(FactorKind::LoopClosure, old, new, meas, info)
    }

    pub fn pose_prior(node: NodeId, meas: Pose<T>, info: &InfoMatrix<T>) -> Self {
        Self {
            kind: FactorKind::Prior,
            nodes: vec![node],
            measurement: Measurement::Pose(meas),
            info: DMatrix::from_column_slice(6, 6, info.matrix().as_slice()),
            huber: None,
        }
    }

    pub fn scalar_prior(node: NodeId, value: T, info: T) -> Self {
        Self {
            kind: FactorKind::Prior,
            nodes: vec![node],
            measurement: Measurement::Scalar(value),
            info: DMatrix::from_element(1, 1, info),
            huber: None,
        }
    }

    pub fn floor_entity(floor: NodeId, entity: NodeId, z_ref: T, info: T) -> Self {
        Self {
            kind: FactorKind::FloorEntity,
            nodes: vec![floor, entity],
            measurement: Measurement::Scalar(z_ref),
            info: DMatrix::from_element(1, 1, info),
            huber: None,
        }
    }

    pub fn keyframe_plane(kf: NodeId, plane: NodeId, meas: PlaneParam<T>, info: DMatrix<T>) -> Self {
        Self {
            kind: FactorKind::KeyframePlane,
            nodes: vec![kf, plane],
            measurement: Measurement::Plane(meas),
            info,
            huber: None,
        }
    }

    pub fn with_huber(mut self, delta: T) -> Self {
        self.huber = Some(delta);
        self
    }

    pub fn residual_dim(&self) -> usize {
        match self.kind {
            FactorKind::FloorEntity => 1,
            FactorKind::KeyframePlane => 4,
            FactorKind::Prior => match self.measurement {
                Measurement::Scalar(_) => 1,
                _ => 6,
            },
            _ => 6,
        }
    }
}

fn time_key(time: f64) -> i64 {
    (time * 1e9).round() as i64
}

/// Factor graph with insertion-ordered nodes and factors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactorGraph<T: Real> {
    nodes: Vec<Node<T>>,
    factors: Vec<Factor<T>>,
    /// entity id → (time key → node)
    tracks: BTreeMap<u32, BTreeMap<i64, NodeId>>,
}

impl<T: Real> FactorGraph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            factors: Vec::new(),
            tracks: BTreeMap::new(),
        }
    }

    pub fn add_node(&mut self, spec: NodeSpec<T>) -> Result<NodeId, GraphError> {
        let index = self.nodes.len();
        let (kind, value, time, entity_id) = match spec {
            NodeSpec::Keyframe { time, pose } => (NodeKind::Keyframe, NodeValue::Pose(pose), Some(time), None),
            NodeSpec::EntityAtTime { entity_id, time, pose } => {
                let track = self.tracks.entry(entity_id).or_default();
                let key = time_key(time);
                if track.contains_key(&key) {
                    return Err(GraphError::DuplicateEntityNode { entity_id, time });
                }
                let id = NodeId {
                    kind: NodeKind::EntityAtTime,
                    index,
                };
                track.insert(key, id);
                (NodeKind::EntityAtTime, NodeValue::Pose(pose), Some(time), Some(entity_id))
            }
            NodeSpec::Plane(p) => (NodeKind::Plane, NodeValue::Plane(p), None, None),
            NodeSpec::Floor(f) => (NodeKind::Floor, NodeValue::Floor(f), None, None),
            NodeSpec::OdomDrift(p) => (NodeKind::OdomDrift, NodeValue::Pose(p), None, None),
        };
        let id = NodeId { kind, index };
        self.nodes.push(Node {
            id,
            value,
            time,
            entity_id,
        });
        Ok(id)
    }

    pub fn add_keyframe(&mut self, time: f64, pose: Pose<T>) -> NodeId {
        self.add_node(NodeSpec::Keyframe { time, pose }).expect("keyframe insertion cannot fail")
    }

    pub fn add_entity(&mut self, entity_id: u32, time: f64, pose: Pose<T>) -> Result<NodeId, GraphError> {
        self.add_node(NodeSpec::EntityAtTime { entity_id, time, pose })
    }

    pub fn add_factor(&mut self, factor: Factor<T>) -> Result<usize, GraphError> {
        self.check_factor(&factor)?;
        self.factors.push(factor);
        Ok(self.factors.len() - 1)
    }

    fn check_factor(&self, f: &Factor<T>) -> Result<(), GraphError> {
        use FactorKind::*;
        use NodeKind::*;
        let expected: &[&[NodeKind]] = match f.kind {
            Odometry | LoopClosure => &[&[Keyframe], &[Keyframe]],
            KeyframeEntity => &[&[Keyframe], &[EntityAtTime]],
            IntraEntity => &[&[EntityAtTime], &[EntityAtTime]],
            FloorEntity => &[&[Floor], &[EntityAtTime]],
            KeyframePlane => &[&[Keyframe], &[Plane]],
            Prior => match f.measurement {
                Measurement::Scalar(_) => &[&[Floor]],
                Measurement::Pose(_) => &[&[Keyframe, EntityAtTime]],
                Measurement::Plane(_) => return Err(GraphError::MeasurementMismatch { kind: f.kind }),
            },
        };
        if f.nodes.len() != expected.len() {
            return Err(GraphError::Arity {
                kind: f.kind,
                expected: expected.len(),
                got: f.nodes.len(),
            });
        }
        for (id, allowed) in f.nodes.iter().zip(expected) {
            let node = self.nodes.get(id.index).ok_or(GraphError::UnknownNode(*id))?;
            if node.id != *id {
                return Err(GraphError::UnknownNode(*id));
            }
            if !allowed.contains(&id.kind) {
                return Err(GraphError::NodeKindMismatch { kind: f.kind, node: id.kind });
            }
        }
        let meas_ok = matches!(
            (f.kind, &f.measurement),
            (Odometry | LoopClosure | KeyframeEntity | IntraEntity | Prior, Measurement::Pose(_))
                | (FloorEntity | Prior, Measurement::Scalar(_))
                | (KeyframePlane, Measurement::Plane(_))
        );
        if !meas_ok {
            return Err(GraphError::MeasurementMismatch { kind: f.kind });
        }
        let dim = f.residual_dim();
        if f.info.nrows() != dim || f.info.ncols() != dim {
            return Err(GraphError::InfoShape { expected: dim });
        }
        crate::geometry::validate_psd(&f.info)?;
        Ok(())
    }

    pub fn node(&self, id: NodeId) -> Option<&Node<T>> {
        self.nodes.get(id.index).filter(|n| n.id == id)
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn factors(&self) -> &[Factor<T>] {
        &self.factors
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn pose(&self, id: NodeId) -> Option<Pose<T>> {
        self.node(id).and_then(|n| n.value.as_pose().copied())
    }

    pub fn set_value(&mut self, id: NodeId, value: NodeValue<T>) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(id.index).filter(|n| n.id == id).ok_or(GraphError::UnknownNode(id))?;
        node.value = value;
        Ok(())
    }

    pub fn floor_level(&self, id: NodeId) -> Option<T> {
        match self.node(id)?.value {
            NodeValue::Floor(f) => Some(f.z),
            _ => None,
        }
    }

    pub fn plane(&self, id: NodeId) -> Option<PlaneParam<T>> {
        match self.node(id)?.value {
            NodeValue::Plane(p) => Some(p),
            _ => None,
        }
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &Node<T>> {
        self.nodes.iter().filter(|n| n.id.kind == NodeKind::Keyframe)
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.tracks.keys().copied()
    }

    /// Nodes of one entity ordered by time.
    pub fn entity_track(&self, entity_id: u32) -> impl Iterator<Item = NodeId> + '_ {
        self.tracks.get(&entity_id).into_iter().flat_map(|t| t.values().copied())
    }

    /// Latest node of an entity with time `<= time`.
    pub fn entity_node_at_or_before(&self, entity_id: u32, time: f64) -> Option<NodeId> {
        self.tracks
            .get(&entity_id)?
            .range(..=time_key(time))
            .next_back()
            .map(|(_, id)| *id)
    }

    pub fn latest_entity_node(&self, entity_id: u32) -> Option<NodeId> {
        self.tracks.get(&entity_id)?.values().next_back().copied()
    }

    pub fn count_factors(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind == kind).count()
    }

    /// Total weighted squared cost `Σ ρ(rᵀ Λ r)`.
    pub fn total_cost(&self) -> T {
        self.factors
            .iter()
            .map(|f| factors::factor_cost(f, &self.nodes))
            .fold(T::zero(), |a, b| a + b)
    }

    /// Runs Levenberg–Marquardt over every node touched by a factor.
    pub fn optimize(&mut self, config: &LmConfig) -> OptReport {
        optimizer::optimize(self, config)
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [Node<T>] {
        &mut self.nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_node_examples() {
        let mut g = FactorGraph::<f64>::new();
        let kf = g.add_keyframe(0.0, Pose::identity());
        assert_eq!(kf.kind, NodeKind::Keyframe);
        assert_eq!(g.node_count(), 1);

        g.add_entity(3, 5.0, Pose::identity()).unwrap();
        let err = g.add_entity(3, 5.0, Pose::identity()).unwrap_err();
        assert_eq!(err, GraphError::DuplicateEntityNode { entity_id: 3, time: 5.0 });
        assert_eq!(g.node_count(), 2);

        let fl = g.add_node(NodeSpec::Floor(FloorLevel { z: 0.0 })).unwrap();
        assert_eq!(g.floor_level(fl), Some(0.0));
    }

    #[test]
    fn entity_tracks_are_time_ordered() {
        let mut g = FactorGraph::<f64>::new();
        let b = g.add_entity(1, 2.0, Pose::identity()).unwrap();
        let a = g.add_entity(1, 1.0, Pose::identity()).unwrap();
        let c = g.add_entity(1, 3.5, Pose::identity()).unwrap();
        assert_eq!(g.entity_track(1).collect::<Vec<_>>(), vec![a, b, c]);
        assert_eq!(g.entity_node_at_or_before(1, 3.0), Some(b));
        assert_eq!(g.entity_node_at_or_before(1, 0.5), None);
        assert_eq!(g.latest_entity_node(1), Some(c));
    }

    #[test]
    fn factor_arity_and_kind_checked() {
        let mut g = FactorGraph::<f64>::new();
        let kf = g.add_keyframe(0.0, Pose::identity());
        let e = g.add_entity(0, 0.0, Pose::identity()).unwrap();
        let info = InfoMatrix::identity();
        let bad = Factor::odometry(kf, e, Pose::identity(), &info);
        assert!(matches!(g.add_factor(bad), Err(GraphError::NodeKindMismatch { .. })));
        let mut f = Factor::pose_prior(kf, Pose::identity(), &info);
        f.nodes.push(kf);
        assert!(matches!(g.add_factor(f), Err(GraphError::Arity { expected: 1, got: 2, .. })));
        let mut f = Factor::keyframe_entity(kf, e, Pose::identity(), &info);
        f.info = DMatrix::identity(6, 6) * -1.0;
        assert!(matches!(g.add_factor(f), Err(GraphError::Geometry(_))));
        assert!(g.add_factor(Factor::keyframe_entity(kf, e, Pose::identity(), &info)).is_ok());
    }
}
