//! Pose-graph SLAM backend that tracks movable entities as time-indexed graph
//! nodes, with a deterministic scene simulator for benchmarking.

pub mod evaluation;
pub mod geometry;
pub mod graph;
pub mod keyframe;
pub mod loop_closure;
pub mod motion;
pub mod pipeline;
pub mod scalar;
pub mod simulator;

pub type Pose = geometry::Pose<f64>;
pub type Twist = geometry::Twist<f64>;
pub type InfoMatrix = geometry::InfoMatrix<f64>;
pub type FactorGraph = graph::FactorGraph<f64>;
pub type Factor = graph::Factor<f64>;
pub type PlaneParam = graph::PlaneParam<f64>;
