//! Solver memory-bandwidth model and pose/action metrics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Pt3;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("keypoint sets differ in size ({0} vs {1})")]
    Cardinality(usize, usize),
    #[error("a keypoint set needs 2 to 4 points, got {0}")]
    KeypointCount(usize),
    #[error("keypoints are not collinear (deviation {0:e} m)")]
    NotCollinear(f64),
    #[error("vectors differ in length ({0} vs {1})")]
    Dimension(usize, usize),
    #[error("counts must be at least 1")]
    ZeroCount,
    #[error("budget entries must be positive")]
    BadBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverBudget {
    pub bytes_per_contact_constraint: f64,
    pub bytes_per_contact_raw: f64,
    pub frame_rate: f64,
    pub gpu_bandwidth_budget: f64,
}

impl Default for SolverBudget {
    fn default() -> Self {
        Self {
            bytes_per_contact_constraint: 160.0,
            bytes_per_contact_raw: 36.0,
            frame_rate: 60.0,
            gpu_bandwidth_budget: 1536e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthEstimate {
    pub bytes_per_timestep: f64,
    pub bytes_per_frame: f64,
    pub bytes_per_second: f64,
    pub max_parallel_envs: u64,
}

/// Memory traffic of a solver touching every contact constraint once per iteration.
pub fn bandwidth_model(
    contacts: u64,
    substeps: u64,
    iterations: u64,
    budget: &SolverBudget,
) -> Result<BandwidthEstimate, MetricsError> {
    if contacts == 0 || substeps == 0 || iterations == 0 {
        return Err(MetricsError::ZeroCount);
    }
    let b = budget;
    if ![b.bytes_per_contact_constraint, b.bytes_per_contact_raw, b.frame_rate, b.gpu_bandwidth_budget]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0)
    {
        return Err(MetricsError::BadBudget);
    }
    let per_step = contacts as f64 * b.bytes_per_contact_constraint;
    let per_frame = per_step * (substeps * iterations) as f64;
    let per_second = per_frame * b.frame_rate;
    Ok(BandwidthEstimate {
        bytes_per_timestep: per_step,
        bytes_per_frame: per_frame,
        bytes_per_second: per_second,
        max_parallel_envs: (b.gpu_bandwidth_budget / per_second).floor() as u64,
    })
}

/// Formats a byte count with decimal prefixes, e.g. `1.31 GB`.
pub fn human_bytes(bytes: f64) -> String {
    const UNITS: [&str; 5] = ["B", "kB", "MB", "GB", "TB"];
    let mut v = bytes;
    let mut u = 0;
    while v.abs() >= 1000.0 && u + 1 < UNITS.len() {
        v /= 1000.0;
        u += 1;
    }
    format!("{v:.3} {}", UNITS[u])
}

/// 2 to 4 ordered points along a body axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    points: Vec<Pt3>,
}

impl KeypointSet {
    pub fn new(points: Vec<Pt3>) -> Result<Self, MetricsError> {
        if !(2..=4).contains(&points.len()) {
            return Err(MetricsError::KeypointCount(points.len()));
        }
        let a = points[0];
        let dir = points.last().unwrap() - a;
        let len = dir.norm();
        let dev = points
            .iter()
            .map(|p| if len > 0.0 { (p - a).cross(&dir).norm() / len } else { (p - a).norm() })
            .fold(0.0, f64::max);
        if dev > 1e-9 {
            return Err(MetricsError::NotCollinear(dev));
        }
        Ok(Self { points })
    }

    /// `count` points spaced evenly from `start` to `end`.
    pub fn along(start: Pt3, end: Pt3, count: usize) -> Result<Self, MetricsError> {
        if !(2..=4).contains(&count) {
            return Err(MetricsError::KeypointCount(count));
        }
        let pts = (0..count)
            .map(|i| start + (end - start) * (i as f64 / (count - 1) as f64))
            .collect();
        Self::new(pts)
    }

    pub fn points(&self) -> &[Pt3] {
        &self.points
    }
}

/// Norm of the stacked pointwise differences.
pub fn keypoint_distance(a: &KeypointSet, b: &KeypointSet) -> Result<f64, MetricsError> {
    if a.points.len() != b.points.len() {
        return Err(MetricsError::Cardinality(a.points.len(), b.points.len()));
    }
    Ok(a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| (p - q).norm_squared())
        .sum::<f64>()
        .sqrt())
}

/// β‖a_t − a_prev‖.
pub fn action_gradient_penalty(a_t: &DVector<f64>, a_prev: &DVector<f64>, beta: f64) -> Result<f64, MetricsError> {
    if a_t.len() != a_prev.len() {
        return Err(MetricsError::Dimension(a_t.len(), a_prev.len()));
    }
    Ok(beta * (a_t - a_prev).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_contact_costs_one_record() {
        let e = bandwidth_model(1, 1, 1, &SolverBudget::default()).unwrap();
        assert_eq!(e.bytes_per_timestep, 160.0);
        assert_eq!(bandwidth_model(0, 1, 1, &SolverBudget::default()), Err(MetricsError::ZeroCount));
    }

    #[test]
    fn reduced_gauss_seidel_row() {
        let e = bandwidth_model(300, 1, 16, &SolverBudget::default()).unwrap();
        assert_eq!(e.bytes_per_timestep, 48_000.0);
        assert_eq!(e.bytes_per_frame, 768_000.0);
        assert!((e.bytes_per_second - 46.08e6).abs() < 1.0);
    }

    #[test]
    fn translated_pair_distance() {
        let a = KeypointSet::along(Pt3::origin(), Pt3::new(0.0, 0.0, 0.02), 2).unwrap();
        let b = KeypointSet::along(Pt3::new(0.0, 0.0, 0.003), Pt3::new(0.0, 0.0, 0.023), 2).unwrap();
        assert!((keypoint_distance(&a, &b).unwrap() - 0.003 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(keypoint_distance(&a, &a).unwrap(), 0.0);
        let c = KeypointSet::along(Pt3::origin(), Pt3::new(0.0, 0.0, 0.02), 3).unwrap();
        assert_eq!(keypoint_distance(&a, &c), Err(MetricsError::Cardinality(2, 3)));
    }

    #[test]
    fn keypoints_validated() {
        assert!(matches!(
            KeypointSet::new(vec![Pt3::origin(), Pt3::new(1.0, 0.0, 0.0), Pt3::new(2.0, 0.1, 0.0)]),
            Err(MetricsError::NotCollinear(_))
        ));
        assert_eq!(KeypointSet::new(vec![Pt3::origin()]), Err(MetricsError::KeypointCount(1)));
    }

    #[test]
    fn penalty_uses_beta() {
        let a = DVector::from_column_slice(&[1.0, 0.0]);
        let b = DVector::from_column_slice(&[0.0, 0.0]);
        assert!((action_gradient_penalty(&a, &b, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(action_gradient_penalty(&a, &a, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn human_readable() {
        assert_eq!(human_bytes(768_000.0), "768.000 kB");
        assert_eq!(human_bytes(1.31072e9), "1.311 GB");
    }
}
