//! Trajectory alignment, ATE, entity error series and comparison tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::FactorKind;
use crate::loop_closure::kabsch;
use crate::pipeline::{EntitySample, RunReport};
use crate::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("alignment needs at least 3 matched poses, got {0}")]
    TooFewPairs(usize),
    #[error("trajectories share no timestamps")]
    Empty,
}

fn matched(est: &[(f64, Pose)], gt: &[(f64, Pose)]) -> Vec<(Pose, Pose)> {
    let by_time: BTreeMap<u64, &Pose> = gt.iter().map(|(t, p)| (t.to_bits(), p)).collect();
    est.iter()
        .filter_map(|(t, e)| by_time.get(&t.to_bits()).map(|g| (*e, **g)))
        .collect()
}

/// Rigid transform `T` minimizing `Σ |gt_i − T·est_i|²` over translations.
pub fn align(est: &[(f64, Pose)], gt: &[(f64, Pose)]) -> Result<Pose, EvalError> {
    let pairs = matched(est, gt);
    if pairs.len() < 3 {
        return Err(EvalError::TooFewPairs(pairs.len()));
    }
    let src: Vec<_> = pairs.iter().map(|(e, _)| *e.translation()).collect();
    let dst: Vec<_> = pairs.iter().map(|(_, g)| *g.translation()).collect();
    Ok(kabsch(&src, &dst))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteStats {
    pub rmse: f64,
    /// Standard deviation of the per-pose error norms.
    pub std: f64,
    /// RMSE of the rotation angle after alignment, rad.
    pub rotation_rmse: f64,
    pub pairs: usize,
}

/// Absolute trajectory error after rigid alignment.
pub fn ate(est: &[(f64, Pose)], gt: &[(f64, Pose)]) -> Result<AteStats, EvalError> {
    let pairs = matched(est, gt);
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let t = if pairs.len() >= 3 { align(est, gt)? } else { Pose::identity() };
    let n = pairs.len() as f64;
    let errs: Vec<f64> = pairs
        .iter()
        .map(|(e, g)| (g.translation() - t.transform_point(e.translation())).norm())
        .collect();
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errs.iter().sum::<f64>() / n;
    let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let rotation_rmse = (pairs
        .iter()
        .map(|(e, g)| t.compose(e).between(g).angle().powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(AteStats {
        rmse,
        std,
        rotation_rmse,
        pairs: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityError {
    pub epoch: f64,
    pub time: f64,
    pub translation: f64,
    pub rotation: f64,
}

fn sample_error(report: &RunReport, s: &EntitySample) -> Option<EntityError> {
    let truth = report.entity_truth_at(s.entity_id, s.time)?;
    Some(EntityError {
        epoch: s.epoch,
        time: s.time,
        translation: (truth.translation() - s.pose.translation()).norm(),
        rotation: truth.between(&s.pose).angle(),
    })
}

/// Per-entity error of the latest estimate at every optimization epoch.
pub fn entity_error_series(report: &RunReport) -> BTreeMap<u32, Vec<EntityError>> {
    let mut out: BTreeMap<u32, Vec<EntityError>> = BTreeMap::new();
    for s in &report.entity_series {
        if let Some(e) = sample_error(report, s) {
            out.entry(s.entity_id).or_default().push(e);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenario: String,
    pub seed: u64,
    pub ate_rmse: f64,
    pub ate_std: f64,
    pub ate_rotation_rmse: f64,
    pub keyframes: usize,
    pub num_loop_closures: usize,
    pub mean_opt_time_ms: f64,
    /// Error of each entity estimate when first added to the map, m.
    pub entity_error_first: BTreeMap<u32, f64>,
    /// Error of each entity's latest estimate after the last optimization, m.
    pub entity_error_last: BTreeMap<u32, f64>,
    pub error_series: BTreeMap<u32, Vec<EntityError>>,
}

pub fn metrics(report: &RunReport) -> Result<MetricReport, EvalError> {
    let stats = ate(&report.trajectory, &report.ground_truth)?;
    let times: Vec<f64> = report.optimizations.iter().map(|o| o.report.wall_time_ms).collect();
    let mean_opt_time_ms = if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    };
    let error_series = entity_error_series(report);
    let entity_error_first = report
        .entity_first
        .iter()
        .filter_map(|(&id, s)| sample_error(report, s).map(|e| (id, e.translation)))
        .collect();
    let entity_error_last = error_series
        .iter()
        .filter_map(|(&id, series)| series.last().map(|e| (id, e.translation)))
        .collect();
    Ok(MetricReport {
        scenario: report.scenario.clone(),
        seed: report.seed,
        ate_rmse: stats.rmse,
        ate_std: stats.std,
        ate_rotation_rmse: stats.rotation_rmse,
        keyframes: report.trajectory.len(),
        num_loop_closures: report.graph.count_factors(FactorKind::LoopClosure),
        mean_opt_time_ms,
        entity_error_first,
        entity_error_last,
        error_series,
    })
}

/// One row of an ablation table: a setup evaluated over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scenario: String,
    pub setup: String,
    pub seeds: usize,
    pub ate_rmse_cm: f64,
    pub ate_std_cm: f64,
    pub loop_closures: f64,
    pub mean_opt_time_ms: f64,
}

impl AblationRow {
    pub fn from_metrics(scenario: &str, setup: &str, runs: &[MetricReport]) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = |f: fn(&MetricReport) -> f64| runs.iter().map(f).sum::<f64>() / n;
        Self {
            scenario: scenario.to_string(),
            setup: setup.to_string(),
            seeds: runs.len(),
            ate_rmse_cm: 100.0 * mean(|m| m.ate_rmse),
            ate_std_cm: 100.0 * mean(|m| m.ate_std),
            loop_closures: mean(|m| m.num_loop_closures as f64),
            mean_opt_time_ms: mean(|m| m.mean_opt_time_ms),
        }
    }
}

/// Comma-separated ablation table with one row per scenario and setup.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("scenario,setup,seeds,rmse_cm,std_cm,lc,time_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.3},{:.3},{:.1},{:.3}\n",
            r.scenario, r.setup, r.seeds, r.ate_rmse_cm, r.ate_std_cm, r.loop_closures, r.mean_opt_time_ms
        ));
    }
    out
}

/// Comma-separated first/last entity error table, cm.
pub fn entity_csv(m: &MetricReport) -> String {
    let mut out = String::from("entity_id,first_cm,last_cm\n");
    for (id, first) in &m.entity_error_first {
        let last = m.entity_error_last.get(id).copied().unwrap_or(f64::NAN);
        out.push_str(&format!("{id},{:.3},{:.3}\n", 100.0 * first, 100.0 * last));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    fn traj() -> Vec<(f64, Pose)> {
        (0..100)
            .map(|i| {
                let a = i as f64 * 0.1;
                let p = Pose::new(
                    Vector3::new(a.cos() * 3.0, a.sin() * 2.0, 0.1 * a),
                    UnitQuaternion::from_euler_angles(0.0, 0.0, a),
                );
                (i as f64 * 0.5, p)
            })
            .collect()
    }

    fn moved(t: &[(f64, Pose)], by: &Pose) -> Vec<(f64, Pose)> {
        t.iter().map(|(s, p)| (*s, by.compose(p))).collect()
    }

    #[test]
    fn align_examples() {
        let gt = traj();
        assert!(align(&gt, &gt).unwrap().tangent_norm(1.0) < 1e-12);
        let shift = Pose::from_translation(5.0, 0.0, 0.0);
        let est = moved(&gt, &shift.inverse());
        assert!(align(&est, &gt).unwrap().between(&shift).tangent_norm(1.0) < 1e-9);
        let rot = Pose::rot_z(30f64.to_radians());
        let est = moved(&gt, &rot.inverse());
        assert!(align(&est, &gt).unwrap().between(&rot).tangent_norm(1.0) < 1e-9);
        assert_eq!(align(&gt[..2], &gt[..2]), Err(EvalError::TooFewPairs(2)));
    }

    #[test]
    fn ate_examples() {
        let gt = traj();
        let s = ate(&gt, &gt).unwrap();
        assert!(s.rmse < 1e-12 && s.std < 1e-12);
        assert_eq!(ate(&gt[..0], &gt), Err(EvalError::Empty));
    }

    #[test]
    fn one_outlier_in_a_hundred() {
        // Alignment absorbs a little of the outlier by shifting the line.
        let gt: Vec<(f64, Pose)> = (0..100).map(|i| (i as f64, Pose::from_translation(i as f64, 0.0, 0.0))).collect();
        let mut est = gt.clone();
        est[50].1 = Pose::from_translation(50.0, 0.0, 1.0);
        let errs: Vec<f64> = est.iter().zip(&gt).map(|(e, g)| (e.1.translation() - g.1.translation()).norm()).collect();
        let raw = (errs.iter().map(|e| e * e).sum::<f64>() / 100.0).sqrt();
        assert!((raw - 0.1).abs() < 1e-15);
        let s = ate(&est, &gt).unwrap();
        assert!(s.rmse <= raw + 1e-12);
        assert!((s.rmse - 0.1).abs() < 1e-3, "{}", s.rmse);
    }
}
