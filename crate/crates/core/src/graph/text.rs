//! Line-oriented text dump of a factor graph.
//!
//! One record per line, whitespace separated. Numbers use the shortest
//! representation that round-trips exactly. Poses are
//! `tx ty tz qx qy qz qw`; information matrices list the upper triangle
//! row by row.
//!
//! ```text
//! NODE <idx> KEYFRAME <time> <pose>
//! NODE <idx> ENTITY <entity_id> <time> <pose>
//! NODE <idx> PLANE <nx> <ny> <nz> <d>
//! NODE <idx> FLOOR <z>
//! NODE <idx> ODOM_DRIFT <pose>
//! FACTOR ODOMETRY|KF_ENTITY|INTRA_ENTITY|LOOP_CLOSURE <a> <b> <pose> <info 21> [HUBER <delta>]
//! FACTOR PRIOR_POSE <a> <pose> <info 21>
//! FACTOR PRIOR_SCALAR <a> <value> <info 1>
//! FACTOR FLOOR_ENTITY <floor> <entity> <z_ref> <info 1>
//! FACTOR KF_PLANE <kf> <plane> <nx> <ny> <nz> <d> <info 10>
//! ```
//!
//! Lines starting with `#` are comments.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Vector3};

use super::{Factor, FactorGraph, FactorKind, FloorLevel, GraphError, Measurement, NodeId, NodeSpec, NodeValue, PlaneParam};
use crate::geometry::Pose;
use crate::scalar::Real;

fn push_pose<T: Real>(out: &mut String, p: &Pose<T>) {
    for v in p.to_array() {
        let _ = write!(out, " {}", v.as_f64());
    }
}

fn push_info<T: Real>(out: &mut String, m: &DMatrix<T>) {
    for r in 0..m.nrows() {
        for c in r..m.ncols() {
            let _ = write!(out, " {}", m[(r, c)].as_f64());
        }
    }
}

pub fn write_graph<T: Real>(graph: &FactorGraph<T>) -> String {
    let mut out = String::from("# dynslam factor graph v1\n");
    for n in graph.nodes() {
        let _ = write!(out, "NODE {}", n.id.index);
        match (&n.id.kind, &n.value) {
            (super::NodeKind::Keyframe, NodeValue::Pose(p)) => {
                let _ = write!(out, " KEYFRAME {}", n.time.unwrap_or(0.0));
                push_pose(&mut out, p);
            }
            (super::NodeKind::EntityAtTime, NodeValue::Pose(p)) => {
                let _ = write!(out, " ENTITY {} {}", n.entity_id.unwrap_or(0), n.time.unwrap_or(0.0));
                push_pose(&mut out, p);
            }
            (super::NodeKind::OdomDrift, NodeValue::Pose(p)) => {
                out.push_str(" ODOM_DRIFT");
                push_pose(&mut out, p);
            }
            (_, NodeValue::Plane(p)) => {
                let n = p.normal();
                let _ = write!(
                    out,
                    " PLANE {} {} {} {}",
                    n.x.as_f64(),
                    n.y.as_f64(),
                    n.z.as_f64(),
                    p.distance().as_f64()
                );
            }
            (_, NodeValue::Floor(f)) => {
                let _ = write!(out, " FLOOR {}", f.z.as_f64());
            }
            _ => unreachable!("node kind and value always agree"),
        }
        out.push('\n');
    }
    for f in graph.factors() {
        let ids: Vec<usize> = f.nodes.iter().map(|n| n.index).collect();
        match (f.kind, &f.measurement) {
            (FactorKind::Prior, Measurement::Pose(p)) => {
                let _ = write!(out, "FACTOR PRIOR_POSE {}", ids[0]);
                push_pose(&mut out, p);
            }
            (FactorKind::Prior, Measurement::Scalar(v)) => {
                let _ = write!(out, "FACTOR PRIOR_SCALAR {} {}", ids[0], v.as_f64());
            }
            (FactorKind::FloorEntity, Measurement::Scalar(v)) => {
                let _ = write!(out, "FACTOR FLOOR_ENTITY {} {} {}", ids[0], ids[1], v.as_f64());
            }
            (FactorKind::KeyframePlane, Measurement::Plane(p)) => {
                let n = p.normal();
                let _ = write!(
                    out,
                    "FACTOR KF_PLANE {} {} {} {} {} {}",
                    ids[0],
                    ids[1],
                    n.x.as_f64(),
                    n.y.as_f64(),
                    n.z.as_f64(),
                    p.distance().as_f64()
                );
            }
            (kind, Measurement::Pose(p)) => {
                let _ = write!(out, "FACTOR {} {} {}", between_tag(kind), ids[0], ids[1]);
                push_pose(&mut out, p);
            }
            _ => unreachable!("factor validated at insertion"),
        }
        push_info(&mut out, &f.info);
        if let Some(h) = f.huber {
            let _ = write!(out, " HUBER {}", h.as_f64());
        }
        out.push('\n');
    }
    out
}

fn between_tag(kind: FactorKind) -> &'static str {
    match kind {
        FactorKind::Odometry => "ODOMETRY",
        FactorKind::KeyframeEntity => "KF_ENTITY",
        FactorKind::IntraEntity => "INTRA_ENTITY",
        FactorKind::LoopClosure => "LOOP_CLOSURE",
        _ => unreachable!("not a between factor"),
    }
}

struct Fields<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn err(&self, msg: impl Into<String>) -> GraphError {
        GraphError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn word(&mut self) -> Result<&'a str, GraphError> {
        let line = self.line;
        self.it.next().ok_or(GraphError::Parse {
            line,
            msg: "unexpected end of line".into(),
        })
    }

    fn num(&mut self) -> Result<f64, GraphError> {
        let w = self.word()?;
        w.parse::<f64>().map_err(|e| GraphError::Parse {
            line: self.line,
            msg: format!("bad number {w:?}: {e}"),
        })
    }

    fn index(&mut self) -> Result<usize, GraphError> {
        let w = self.word()?;
        w.parse::<usize>().map_err(|e| GraphError::Parse {
            line: self.line,
            msg: format!("bad index {w:?}: {e}"),
        })
    }

    fn pose<T: Real>(&mut self) -> Result<Pose<T>, GraphError> {
        let mut a = [T::zero(); 7];
        for v in &mut a {
            *v = T::lit(self.num()?);
        }
        Ok(Pose::from_array(a)?)
    }

    fn info<T: Real>(&mut self, n: usize) -> Result<DMatrix<T>, GraphError> {
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in r..n {
                let v = T::lit(self.num()?);
                m[(r, c)] = v;
                m[(c, r)] = v;
            }
        }
        Ok(m)
    }

    fn plane<T: Real>(&mut self) -> Result<PlaneParam<T>, GraphError> {
        let n = Vector3::new(T::lit(self.num()?), T::lit(self.num()?), T::lit(self.num()?));
        let d = T::lit(self.num()?);
        Ok(PlaneParam::new(n, d)?)
    }
}

/// Parses the format produced by [`write_graph`].
pub fn read_graph<T: Real>(text: &str) -> Result<FactorGraph<T>, GraphError> {
    let mut g = FactorGraph::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = Fields {
            line: i + 1,
            it: line.split_whitespace(),
        };
        match f.word()? {
            "NODE" => {
                let idx = f.index()?;
                if idx != g.node_count() {
                    return Err(f.err(format!("node index {idx} out of sequence")));
                }
                let spec = match f.word()? {
                    "KEYFRAME" => {
                        let time = f.num()?;
                        NodeSpec::Keyframe { time, pose: f.pose()? }
                    }
                    "ENTITY" => {
                        let entity_id = f.index()? as u32;
                        let time = f.num()?;
                        NodeSpec::EntityAtTime {
                            entity_id,
                            time,
                            pose: f.pose()?,
                        }
                    }
                    "PLANE" => NodeSpec::Plane(f.plane()?),
                    "FLOOR" => NodeSpec::Floor(FloorLevel { z: T::lit(f.num()?) }),
                    "ODOM_DRIFT" => NodeSpec::OdomDrift(f.pose()?),
                    other => return Err(f.err(format!("unknown node tag {other}"))),
                };
                g.add_node(spec)?;
            }
            "FACTOR" => {
                let tag = f.word()?.to_string();
                let id = |f: &mut Fields| -> Result<NodeId, GraphError> {
                    let idx = f.index()?;
                    g.nodes().get(idx).map(|n| n.id).ok_or_else(|| f.err(format!("unknown node {idx}")))
                };
                let factor = match tag.as_str() {
                    "ODOMETRY" | "KF_ENTITY" | "INTRA_ENTITY" | "LOOP_CLOSURE" => {
                        let kind = match tag.as_str() {
                            "ODOMETRY" => FactorKind::Odometry,
                            "KF_ENTITY" => FactorKind::KeyframeEntity,
                            "INTRA_ENTITY" => FactorKind::IntraEntity,
                            _ => FactorKind::LoopClosure,
                        };
                        let a = id(&mut f)?;
                        let b = id(&mut f)?;
                        Factor {
                            kind,
                            nodes: vec![a, b],
                            measurement: Measurement::Pose(f.pose()?),
                            info: f.info(6)?,
                            huber: None,
                        }
                    }
                    "PRIOR_POSE" => {
                        let a = id(&mut f)?;
                        Factor {
                            kind: FactorKind::Prior,
                            nodes: vec![a],
                            measurement: Measurement::Pose(f.pose()?),
                            info: f.info(6)?,
                            huber: None,
                        }
                    }
                    "PRIOR_SCALAR" => {
                        let a = id(&mut f)?;
                        Factor {
                            kind: FactorKind::Prior,
                            nodes: vec![a],
                            measurement: Measurement::Scalar(T::lit(f.num()?)),
                            info: f.info(1)?,
                            huber: None,
                        }
                    }
                    "FLOOR_ENTITY" => {
                        let a = id(&mut f)?;
                        let b = id(&mut f)?;
                        Factor {
                            kind: FactorKind::FloorEntity,
                            nodes: vec![a, b],
                            measurement: Measurement::Scalar(T::lit(f.num()?)),
                            info: f.info(1)?,
                            huber: None,
                        }
                    }
                    "KF_PLANE" => {
                        let a = id(&mut f)?;
                        let b = id(&mut f)?;
                        Factor {
                            kind: FactorKind::KeyframePlane,
                            nodes: vec![a, b],
                            measurement: Measurement::Plane(f.plane()?),
                            info: f.info(4)?,
                            huber: None,
                        }
                    }
                    other => return Err(f.err(format!("unknown factor tag {other}"))),
                };
                let factor = match f.it.next() {
                    Some("HUBER") => factor.with_huber(T::lit(f.num()?)),
                    Some(other) => return Err(f.err(format!("trailing field {other}"))),
                    None => factor,
                };
                g.add_factor(factor)?;
            }
            other => return Err(f.err(format!("unknown record {other}"))),
        }
    }
    Ok(g)
}
