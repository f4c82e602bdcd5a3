//! Pose accuracy metrics over mesh vertices.

use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::{Pose6DoF, TriangleMesh};
use crate::memory::LedgerCounters;

/// Mean distance between each vertex under the estimated and the true pose.
pub fn add_metric(mesh: &TriangleMesh, est: &Pose6DoF, gt: &Pose6DoF) -> f64 {
    let (te, tg) = (est.to_transform(), gt.to_transform());
    let sum: f64 = mesh.vertices().iter().map(|&p| (te.apply(p) - tg.apply(p)).norm()).sum();
    sum / mesh.vertices().len() as f64
}

/// Mean distance from each estimated vertex to the closest true vertex.
/// Brute-force nearest neighbor, quadratic in the vertex count.
pub fn adds_metric(mesh: &TriangleMesh, est: &Pose6DoF, gt: &Pose6DoF) -> f64 {
    let (te, tg) = (est.to_transform(), gt.to_transform());
    let truth: Vec<_> = mesh.vertices().iter().map(|&p| tg.apply(p)).collect();
    let sum: f64 = mesh
        .vertices()
        .iter()
        .map(|&p| {
            let q = te.apply(p);
            let best = truth.iter().map(|&g| (q - g).norm_squared()).fold(f64::INFINITY, f64::min);
            libm::sqrt(best)
        })
        .sum();
    sum / mesh.vertices().len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub object: String,
    pub seed: u64,
    pub symmetric: bool,
    pub add: f64,
    pub adds: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: Option<f64>,
    pub ledger: LedgerCounters,
}

impl RunRecord {
    /// ADD-S for symmetric objects, ADD otherwise.
    pub fn error(&self) -> f64 {
        if self.symmetric {
            self.adds
        } else {
            self.add
        }
    }
}

/// Fraction of runs whose error is strictly below `threshold` meters. Returns
/// `None` for an empty set.
pub fn success_rate(records: &[RunRecord], threshold: f64) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let ok = records.iter().filter(|r| r.error() < threshold).count();
    Some(ok as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<RunRecord>,
    pub threshold: f64,
    pub success_rate: f64,
}

impl EvalReport {
    pub fn new(records: Vec<RunRecord>, threshold: f64) -> Option<Self> {
        let success_rate = success_rate(&records, threshold)?;
        Some(Self { records, threshold, success_rate })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::primitives::cylinder;

    fn rec(add: f64, adds: f64, symmetric: bool) -> RunRecord {
        RunRecord {
            object: "x".into(),
            seed: 0,
            symmetric,
            add,
            adds,
            iterations: 1,
            converged: true,
            wall_time_s: None,
            ledger: LedgerCounters::default(),
        }
    }

    #[test]
    fn identical_poses_score_zero() {
        let m = cylinder(0.03, 0.1, 12);
        let p = Pose6DoF::new(0.1, 0.0, 0.8, 0.3, 0.2, 0.1).unwrap();
        assert_eq!(add_metric(&m, &p, &p), 0.0);
        assert_eq!(adds_metric(&m, &p, &p), 0.0);
    }

    #[test]
    fn pure_translation_gives_its_length() {
        let m = cylinder(0.03, 0.1, 12);
        let a = Pose6DoF::new(0.0, 0.0, 1.0, 0.4, -0.2, 1.0).unwrap();
        let b = Pose6DoF::new(0.03, -0.04, 1.0, 0.4, -0.2, 1.0).unwrap();
        assert!((add_metric(&m, &a, &b) - 0.05).abs() < 1e-12);
        assert!((add_metric(&m, &b, &a) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn ring_rotation_about_center() {
        // unit ring of 360 points, rotated by a small angle about its axis
        let n = 360;
        let v: Vec<Vec3> = (0..n)
            .map(|i| {
                let (s, c) = libm::sincos(2.0 * core::f64::consts::PI * i as f64 / n as f64);
                Vec3::new(c, s, 0.0)
            })
            .collect();
        let faces = (0..n as u32 - 2).map(|i| [0, i + 1, i + 2]).collect();
        let m = TriangleMesh::new(v, faces).unwrap();
        let theta = 0.01;
        let est = Pose6DoF::new(0.0, 0.0, 0.0, 0.0, 0.0, theta).unwrap();
        let add = add_metric(&m, &est, &Pose6DoF::IDENTITY);
        // chord length 2 sin(theta / 2) for every point
        assert!((add - 2.0 * libm::sin(theta / 2.0)).abs() < 1e-12);
        assert!((add - theta).abs() < 1e-6);
    }

    #[test]
    fn success_rate_examples() {
        assert_eq!(success_rate(&[], 0.04), None);
        assert_eq!(success_rate(&[rec(0.0, 0.0, false), rec(0.0, 0.0, true)], 0.04), Some(1.0));
        assert_eq!(success_rate(&[rec(0.1, 0.1, false), rec(0.2, 0.05, true)], 0.04), Some(0.0));
        let mixed = [rec(0.01, 0.01, false), rec(0.2, 0.01, true), rec(0.2, 0.1, true), rec(0.05, 0.0, false)];
        assert_eq!(success_rate(&mixed, 0.04), Some(0.5));
    }
}
