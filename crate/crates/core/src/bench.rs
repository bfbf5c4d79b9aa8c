//! Timing harness comparing batched and naive association.

use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geometry::{project_box_to_bbox2d, project_point, Box3D, CameraModel};
use crate::radar::{associate, associate_naive, AssociationParams, PreliminaryDetection, RadarPoint};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum BenchError {
    #[error("problem sizes and iteration count must be positive")]
    EmptyProblem,
    #[error("batched and naive association disagree on detection {detection}")]
    ResultMismatch { detection: usize },
}

#[derive(Debug, Clone)]
pub struct AssociationProblem {
    pub points: Vec<RadarPoint>,
    pub detections: Vec<PreliminaryDetection>,
    pub camera: CameraModel,
    pub params: AssociationParams,
}

/// Points scattered over the radar field of view and detections of random
/// boxes in front of a forward-facing camera.
pub fn random_association_problem(seed: u64, n_points: usize, n_dets: usize) -> AssociationProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = CameraModel::forward_facing(633.0, (400.0, 224.0), Vector3::new(0.0, 0.0, 1.5), (800, 448))
        .expect("fixed camera is valid");
    let points = (0..n_points)
        .map(|_| {
            let y: f64 = rng.gen_range(1.0..60.0);
            let p = Vector3::new(rng.gen_range(-0.7 * y..0.7 * y), y, rng.gen_range(-0.5..2.5));
            let v = Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            RadarPoint::new(p, v, rng.gen_range(-10.0..20.0))
        })
        .collect();
    let mut detections = Vec::with_capacity(n_dets);
    while detections.len() < n_dets {
        let y: f64 = rng.gen_range(3.0..55.0);
        let dims = Vector3::new(rng.gen_range(0.5..3.0), rng.gen_range(0.5..10.0), rng.gen_range(1.0..3.5));
        let center = Vector3::new(rng.gen_range(-0.6 * y..0.6 * y), y, 0.5 * dims.z);
        let b = Box3D::new(center, dims, rng.gen_range(-3.2..3.2), Vector2::zeros());
        let Ok((pixel, depth)) = project_point(&camera, &center) else {
            continue;
        };
        let Ok(bbox2d) = project_box_to_bbox2d(&camera, &b) else {
            continue;
        };
        if bbox2d.area() <= 0.0 || depth <= 1.0 {
            continue;
        }
        detections.push(PreliminaryDetection {
            class_id: rng.gen_range(0..10),
            score: rng.gen_range(0.1..1.0),
            bbox2d,
            projected_center: pixel,
            depth: depth + rng.gen_range(-1.0..1.0),
            log_sigma: 0.0,
            box3d: b,
            attribute: 0,
        });
    }
    AssociationProblem {
        points,
        detections,
        camera,
        params: AssociationParams::default(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingStats {
    pub mean_s: f64,
    pub stddev_s: f64,
    pub min_s: f64,
}

impl TimingStats {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean_s: mean,
            stddev_s: var.sqrt(),
            min_s: samples.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub n_points: usize,
    pub n_dets: usize,
    pub iters: usize,
    pub batched: TimingStats,
    pub naive: TimingStats,
    /// Naive mean over batched mean.
    pub speedup: f64,
    pub total_members: usize,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "association benchmark: {} points x {} detections, {} iterations", self.n_points, self.n_dets, self.iters)?;
        for (name, t) in [("batched", &self.batched), ("naive", &self.naive)] {
            writeln!(
                f,
                "  {name:<8} mean {:.6} ms  stddev {:.6} ms  min {:.6} ms",
                t.mean_s * 1e3,
                t.stddev_s * 1e3,
                t.min_s * 1e3
            )?;
        }
        writeln!(f, "  members  {}", self.total_members)?;
        write!(f, "  speedup  {:.2}x", self.speedup)
    }
}

/// Times both implementations on the same input after `warmup` untimed runs
/// each. Outputs are compared on every iteration.
pub fn bench_association(problem: &AssociationProblem, iters: usize, warmup: usize) -> Result<BenchReport, BenchError> {
    if problem.points.is_empty() || problem.detections.is_empty() || iters == 0 {
        return Err(BenchError::EmptyProblem);
    }
    let run_batched = || associate(&problem.points, &problem.detections, &problem.camera, &problem.params);
    let run_naive = || associate_naive(&problem.points, &problem.detections, &problem.camera, &problem.params);
    let reference = run_naive();
    let check = |got: &[crate::radar::Cluster]| -> Result<(), BenchError> {
        for (i, (a, b)) in got.iter().zip(&reference).enumerate() {
            if a != b {
                return Err(BenchError::ResultMismatch { detection: i });
            }
        }
        if got.len() != reference.len() {
            return Err(BenchError::ResultMismatch { detection: got.len().min(reference.len()) });
        }
        Ok(())
    };
    for _ in 0..warmup {
        check(&run_batched())?;
        check(&run_naive())?;
    }
    let mut tb = Vec::with_capacity(iters);
    let mut tn = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        let out = run_batched();
        tb.push(t.elapsed().as_secs_f64());
        check(&out)?;
        let t = Instant::now();
        let out = run_naive();
        tn.push(t.elapsed().as_secs_f64());
        check(&out)?;
    }
    let batched = TimingStats::from_samples(&tb);
    let naive = TimingStats::from_samples(&tn);
    Ok(BenchReport {
        n_points: problem.points.len(),
        n_dets: problem.detections.len(),
        iters,
        batched,
        naive,
        speedup: naive.mean_s / batched.mean_s,
        total_members: reference.iter().map(|c| c.len()).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_problem_reports_without_ratio_check() {
        let p = random_association_problem(1, 2, 2);
        let r = bench_association(&p, 3, 1).unwrap();
        assert_eq!((r.n_points, r.n_dets, r.iters), (2, 2, 3));
        assert!(r.speedup.is_finite() && r.speedup > 0.0);
    }

    #[test]
    fn problems_are_seeded() {
        let a = random_association_problem(7, 50, 5);
        let b = random_association_problem(7, 50, 5);
        assert_eq!(a.points, b.points);
        assert_eq!(a.detections, b.detections);
        assert!(a.detections.iter().all(|d| d.bbox2d.area() > 0.0));
    }

    #[test]
    fn rejects_empty() {
        let p = random_association_problem(1, 0, 3);
        assert_eq!(bench_association(&p, 1, 0).unwrap_err(), BenchError::EmptyProblem);
        let p = random_association_problem(1, 3, 3);
        assert_eq!(bench_association(&p, 0, 0).unwrap_err(), BenchError::EmptyProblem);
    }

    #[test]
    fn members_are_found() {
        let p = random_association_problem(2, 1000, 100);
        let r = bench_association(&p, 1, 0).unwrap();
        assert!(r.total_members > 0);
    }
}
