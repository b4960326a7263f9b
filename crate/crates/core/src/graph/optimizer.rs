//! Levenberg–Marquardt on the product manifold of graph variables.
//!
//! Normal equations are assembled block-wise, permuted by a minimum-degree
//! ordering and solved with a sparse Cholesky factorization.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use super::factors::{evaluate, linearize, robust, whitened_sq};
use super::ordering::minimum_degree;
use super::{FactorGraph, FloorLevel, Node, NodeKind, NodeValue};
use crate::geometry::Twist;
use crate::scalar::Real;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LmConfig {
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_lambda: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    pub absolute_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_lambda: 1e10,
            max_iterations: 50,
            relative_tolerance: 1e-9,
            absolute_tolerance: 1e-20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptReport {
    /// Accepted LM steps.
    pub iterations: usize,
    /// Linear solves attempted, including rejected steps.
    pub linear_solves: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub wall_time_ms: f64,
    pub converged: bool,
    pub failure: Option<String>,
}

impl OptReport {
    /// True when no accepted step increased the cost.
    pub fn is_monotone(&self) -> bool {
        self.cost_history.windows(2).all(|w| w[1] <= w[0])
    }
}

struct Variable {
    node: usize,
    dim: usize,
}

fn retract_value<T: Real>(value: &NodeValue<T>, delta: &[T]) -> NodeValue<T> {
    match value {
        NodeValue::Pose(p) => {
            let d = nalgebra::Vector6::from_column_slice(delta);
            NodeValue::Pose(p.retract(&Twist::from_vector(&d)))
        }
        NodeValue::Plane(p) => NodeValue::Plane(p.retract(delta)),
        NodeValue::Floor(f) => NodeValue::Floor(FloorLevel { z: f.z + delta[0] }),
    }
}

fn cost_of<T: Real>(graph: &FactorGraph<T>, nodes: &[Node<T>]) -> T {
    graph
        .factors()
        .iter()
        .map(|f| robust(f, whitened_sq(f, &evaluate(f, nodes))).0)
        .fold(T::zero(), |a, b| a + b)
}

struct System<T: Real> {
    /// Lower-triangular blocks keyed by permuted (row, col) variable slots.
    blocks: BTreeMap<(usize, usize), DMatrix<T>>,
    gradient: DVector<T>,
}

pub(super) fn optimize<T: Real>(graph: &mut FactorGraph<T>, config: &LmConfig) -> OptReport {
    let start = Instant::now();

    // Variables: every node referenced by a factor, in node order.
    let mut slot_of_node: BTreeMap<usize, usize> = BTreeMap::new();
    for f in graph.factors() {
        for id in &f.nodes {
            debug_assert!(id.kind != NodeKind::OdomDrift);
            slot_of_node.entry(id.index).or_insert(0);
        }
    }
    let node_order: Vec<usize> = slot_of_node.keys().copied().collect();
    for (i, n) in node_order.iter().enumerate() {
        slot_of_node.insert(*n, i);
    }
    let mut edges = Vec::new();
    for f in graph.factors() {
        for a in &f.nodes {
            for b in &f.nodes {
                if a.index < b.index {
                    edges.push((slot_of_node[&a.index], slot_of_node[&b.index]));
                }
            }
        }
    }
    let elimination = minimum_degree(node_order.len(), &edges);
    // position[var] = permuted slot
    let mut position = vec![0; node_order.len()];
    for (p, &v) in elimination.iter().enumerate() {
        position[v] = p;
    }
    let vars: Vec<Variable> = elimination
        .iter()
        .map(|&v| {
            let node = node_order[v];
            Variable {
                node,
                dim: graph.nodes()[node].value.dim(),
            }
        })
        .collect();
    let mut offsets = Vec::with_capacity(vars.len() + 1);
    let mut total = 0;
    for v in &vars {
        offsets.push(total);
        total += v.dim;
    }
    offsets.push(total);
    let pos_of_node = |node: usize| position[slot_of_node[&node]];

    let mut nodes: Vec<Node<T>> = graph.nodes().to_vec();
    let mut cost = cost_of(graph, &nodes);
    let initial_cost = cost.as_f64();
    let mut report = OptReport {
        iterations: 0,
        linear_solves: 0,
        initial_cost,
        final_cost: initial_cost,
        cost_history: vec![initial_cost],
        wall_time_ms: 0.0,
        converged: false,
        failure: None,
    };

    let abs_tol = T::lit(config.absolute_tolerance);
    let mut lambda = T::lit(config.initial_lambda);
    let lambda_max = T::lit(config.max_lambda);

    'outer: while report.iterations < config.max_iterations {
        if cost <= abs_tol {
            report.converged = true;
            break;
        }
        let sys = build_system(graph, &nodes, &vars, &offsets, &pos_of_node, total);
        if sys.gradient.amax() <= T::lit(1e-14) {
            report.converged = true;
            break;
        }
        loop {
            report.linear_solves += 1;
            let step = match solve_damped(&sys, &offsets, total, lambda) {
                Some(step) => step,
                None => {
                    lambda *= T::lit(config.lambda_up);
                    if lambda > lambda_max {
                        report.failure = Some("normal equations singular; damping schedule exhausted".into());
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut candidate = nodes.clone();
            for (v, var) in vars.iter().enumerate() {
                let d = &step.as_slice()[offsets[v]..offsets[v] + var.dim];
                candidate[var.node].value = retract_value(&nodes[var.node].value, d);
            }
            let new_cost = cost_of(graph, &candidate);
            if new_cost.is_finite() && new_cost <= cost {
                let rel = (cost - new_cost) / cost.max(T::lit(f64::MIN_POSITIVE));
                assert!(new_cost <= cost, "accepted step increased cost");
                nodes = candidate;
                cost = new_cost;
                report.iterations += 1;
                report.cost_history.push(cost.as_f64());
                lambda = (lambda / T::lit(config.lambda_down)).max(T::lit(1e-12));
                if rel < T::lit(config.relative_tolerance) {
                    report.converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= T::lit(config.lambda_up);
            if lambda > lambda_max {
                // No descent direction left at this linearization.
                report.converged = true;
                break 'outer;
            }
        }
    }

    for (dst, src) in graph.nodes_mut().iter_mut().zip(nodes) {
        dst.value = src.value;
    }
    report.final_cost = cost.as_f64();
    report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    report
}

fn build_system<T: Real>(
    graph: &FactorGraph<T>,
    nodes: &[Node<T>],
    vars: &[Variable],
    offsets: &[usize],
    pos_of_node: &dyn Fn(usize) -> usize,
    total: usize,
) -> System<T> {
    let mut blocks: BTreeMap<(usize, usize), DMatrix<T>> = BTreeMap::new();
    let mut gradient = DVector::zeros(total);
    for f in graph.factors() {
        let (r, jacs) = linearize(f, nodes);
        let (_, w) = robust(f, whitened_sq(f, &r));
        let wi = &f.info * w;
        let positions: Vec<usize> = f.nodes.iter().map(|id| pos_of_node(id.index)).collect();
        let weighted: Vec<DMatrix<T>> = jacs.iter().map(|j| j.transpose() * &wi).collect();
        for (a, pa) in positions.iter().enumerate() {
            let ga = &weighted[a] * &r;
            let off = offsets[*pa];
            let mut seg = gradient.rows_mut(off, vars[*pa].dim);
            seg += ga;
            for (b, pb) in positions.iter().enumerate() {
                if pa < pb {
                    continue;
                }
                let h = &weighted[a] * &jacs[b];
                blocks
                    .entry((*pa, *pb))
                    .and_modify(|m| *m += &h)
                    .or_insert(h);
            }
        }
    }
    System { blocks, gradient }
}

fn solve_damped<T: Real>(sys: &System<T>, offsets: &[usize], total: usize, lambda: T) -> Option<DVector<T>> {
    let mut coo = CooMatrix::new(total, total);
    let floor = T::lit(1e-6);
    for (&(pa, pb), block) in &sys.blocks {
        let (ra, cb) = (offsets[pa], offsets[pb]);
        for c in 0..block.ncols() {
            for r in 0..block.nrows() {
                let mut v = block[(r, c)];
                if pa == pb && r == c {
                    v += lambda * v.max(floor);
                }
                if pa == pb && r < c {
                    continue;
                }
                coo.push(ra + r, cb + c, v);
                if !(pa == pb && r == c) {
                    coo.push(cb + c, ra + r, v);
                }
            }
        }
    }
    let csc = CscMatrix::from(&coo);
    let chol = CscCholesky::factor(&csc).ok()?;
    let rhs = DMatrix::from_column_slice(total, 1, (-&sys.gradient).as_slice());
    let x = chol.solve(&rhs);
    let x = DVector::from_column_slice(x.as_slice());
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}
