//! Radar preprocessing and frustum-based association of radar points with
//! image-stage detections.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{project_point, Box2D, Box3D, CameraModel, MIN_DEPTH};

pub const DEFAULT_MAX_SWEEPS: usize = 6;
pub const DEFAULT_MIN_RANGE: f64 = 1.0;
pub const DEFAULT_MAX_RANGE: f64 = 60.0;
/// Pillar size as (x, y, z) extents in meters.
pub const DEFAULT_PILLAR_DIMS: [f64; 3] = [0.2, 0.2, 1.5];
/// Lower bound on the frustum depth half-extent.
pub const DEPTH_HALF_EXTENT_FLOOR: f64 = 0.5;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum RadarError {
    #[error("invalid detection: estimated depth {depth} does not exceed {floor} m")]
    InvalidDetection { depth: f64, floor: f64 },
    #[error("frustum expansion must be >= 1, got {0}")]
    InvalidExpansion(f64),
}

/// A single radar return in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub position: Vector3<f64>,
    /// Ego-motion-compensated radial velocity projected to BEV.
    pub velocity: Vector2<f64>,
    /// Radar cross-section in dBsm.
    pub rcs: f64,
    #[serde(default)]
    pub sweep_age: f64,
}

impl RadarPoint {
    pub fn new(position: Vector3<f64>, velocity: Vector2<f64>, rcs: f64) -> Self {
        Self {
            position,
            velocity,
            rcs,
            sweep_age: 0.0,
        }
    }

    pub fn bev_range(&self) -> f64 {
        self.position.x.hypot(self.position.y)
    }
}

/// One radar sweep, already registered into the current ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub timestamp: f64,
    pub points: Vec<RadarPoint>,
}

/// Concatenates the newest `max_sweeps` sweeps, stamping each point with its
/// age relative to the newest sweep.
pub fn accumulate_sweeps(sweeps: &[Sweep], max_sweeps: usize) -> Vec<RadarPoint> {
    let mut order: Vec<&Sweep> = sweeps.iter().collect();
    // Stable: equal timestamps keep their input order.
    order.sort_by(|a, b| b.timestamp.total_cmp(&a.timestamp));
    let Some(newest) = order.first().map(|s| s.timestamp) else {
        return Vec::new();
    };
    order
        .into_iter()
        .take(max_sweeps)
        .flat_map(|s| {
            let age = newest - s.timestamp;
            s.points.iter().map(move |p| RadarPoint { sweep_age: age, ..*p })
        })
        .collect()
}

/// Keeps points whose BEV range lies in `[min_range, max_range]`.
pub fn range_filter(points: &[RadarPoint], min_range: f64, max_range: f64) -> Vec<RadarPoint> {
    points
        .iter()
        .filter(|p| {
            let r = p.bev_range();
            r >= min_range && r <= max_range
        })
        .copied()
        .collect()
}

/// Fixed-size vertical box around a radar point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pillar {
    pub source: RadarPoint,
    pub half_extents: Vector3<f64>,
}

impl Pillar {
    pub fn center(&self) -> Vector3<f64> {
        self.source.position
    }

    /// Axis-aligned corners, corner `i` taking signs from bits (x: 0, y: 1, z: 2).
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let c = self.source.position;
        let h = self.half_extents;
        std::array::from_fn(|i| {
            Vector3::new(
                if i & 1 == 0 { c.x - h.x } else { c.x + h.x },
                if i & 2 == 0 { c.y - h.y } else { c.y + h.y },
                if i & 4 == 0 { c.z - h.z } else { c.z + h.z },
            )
        })
    }

    /// Center followed by the 8 corners: the points tested against a frustum.
    pub fn samples(&self) -> [Vector3<f64>; 9] {
        let corners = self.corners();
        std::array::from_fn(|i| if i == 0 { self.center() } else { corners[i - 1] })
    }
}

pub fn pillar_expand(point: &RadarPoint, pillar_dims: &Vector3<f64>) -> Pillar {
    Pillar {
        source: *point,
        half_extents: pillar_dims * 0.5,
    }
}

/// Image-stage ("preliminary") detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreliminaryDetection {
    pub class_id: usize,
    /// Heatmap peak confidence `p_k`.
    pub score: f64,
    pub bbox2d: Box2D,
    /// Projected 3D center in input-image pixels.
    pub projected_center: Vector2<f64>,
    /// Estimated camera-frame depth of the box center.
    pub depth: f64,
    /// Log standard deviation of the depth estimate.
    pub log_sigma: f64,
    pub box3d: Box3D,
    #[serde(default)]
    pub attribute: u32,
}

/// Region of the camera frustum assigned to one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumRoi<'a> {
    pub bbox2d: Box2D,
    pub depth_min: f64,
    pub depth_max: f64,
    pub camera: &'a CameraModel,
}

impl FrustumRoi<'_> {
    #[inline]
    pub fn contains_depth(&self, depth: f64) -> bool {
        depth >= self.depth_min && depth <= self.depth_max
    }

    /// Membership predicate for a pillar: camera depth of the pillar center
    /// within the depth range, and the center or any corner projecting inside
    /// the (expanded) 2D box.
    pub fn contains(&self, pillar: &Pillar) -> bool {
        let depth = self.camera.to_camera(&pillar.center()).z;
        if !self.contains_depth(depth) {
            return false;
        }
        pillar.samples().iter().any(|s| match project_point(self.camera, s) {
            Ok((px, _)) => self.bbox2d.contains(&px),
            Err(_) => false,
        })
    }
}

/// Half-extent of a box along the camera depth axis, before flooring.
pub fn depth_half_extent(det: &PreliminaryDetection, camera: &CameraModel, expansion: f64) -> f64 {
    let rel_yaw = det.box3d.yaw - camera.optical_axis_heading();
    let (s, c) = rel_yaw.sin_cos();
    let raw = 0.5 * (det.box3d.length() * c.abs() + det.box3d.width() * s.abs());
    (expansion * raw).max(DEPTH_HALF_EXTENT_FLOOR)
}

pub fn build_frustum<'a>(
    det: &PreliminaryDetection,
    camera: &'a CameraModel,
    expansion: f64,
) -> Result<FrustumRoi<'a>, RadarError> {
    if !(expansion >= 1.0) {
        return Err(RadarError::InvalidExpansion(expansion));
    }
    if !(det.depth > DEPTH_HALF_EXTENT_FLOOR) {
        return Err(RadarError::InvalidDetection {
            depth: det.depth,
            floor: DEPTH_HALF_EXTENT_FLOOR,
        });
    }
    let delta = depth_half_extent(det, camera, expansion);
    Ok(FrustumRoi {
        bbox2d: det.bbox2d.scaled(expansion),
        depth_min: (det.depth - delta).max(MIN_DEPTH),
        depth_max: det.depth + delta,
        camera,
    })
}

/// A detection together with the radar points inside its frustum.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub detection: PreliminaryDetection,
    /// Indices into the associated point list, ascending.
    pub member_indices: Vec<usize>,
    pub members: Vec<RadarPoint>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationParams {
    pub pillar_dims: Vector3<f64>,
    pub expansion: f64,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            pillar_dims: Vector3::from(DEFAULT_PILLAR_DIMS),
            expansion: 1.0,
        }
    }
}

fn frustums<'a>(
    dets: &[PreliminaryDetection],
    camera: &'a CameraModel,
    expansion: f64,
) -> Vec<Option<FrustumRoi<'a>>> {
    dets.iter()
        .map(|d| build_frustum(d, camera, expansion).ok())
        .collect()
}

fn make_cluster(det: &PreliminaryDetection, points: &[RadarPoint], idx: Vec<usize>) -> Cluster {
    Cluster {
        detection: det.clone(),
        members: idx.iter().map(|&i| points[i]).collect(),
        member_indices: idx,
    }
}

/// Pillar projections computed once per point and shared by all frustums.
struct ProjectedPillars {
    depth: Vec<f64>,
    /// 9 samples per point; NaN marks a sample behind the camera.
    samples: Vec<[Vector2<f64>; 9]>,
    /// Bounds of the valid samples; inverted (empty) when none is valid.
    lo: Vec<Vector2<f64>>,
    hi: Vec<Vector2<f64>>,
    /// Point indices sorted by depth, and the matching depths.
    by_depth: Vec<usize>,
    sorted_depth: Vec<f64>,
}

impl ProjectedPillars {
    fn new(points: &[RadarPoint], camera: &CameraModel, pillar_dims: &Vector3<f64>) -> Self {
        let n = points.len();
        let mut depth = Vec::with_capacity(n);
        let mut samples = Vec::with_capacity(n);
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        for p in points {
            let pillar = pillar_expand(p, pillar_dims);
            depth.push(camera.to_camera(&pillar.center()).z);
            let mut s = [Vector2::repeat(f64::NAN); 9];
            let mut l = Vector2::repeat(f64::INFINITY);
            let mut h = Vector2::repeat(f64::NEG_INFINITY);
            for (slot, q) in s.iter_mut().zip(pillar.samples().iter()) {
                if let Ok((px, _)) = project_point(camera, q) {
                    *slot = px;
                    l = l.inf(&px);
                    h = h.sup(&px);
                }
            }
            samples.push(s);
            lo.push(l);
            hi.push(h);
        }
        let mut by_depth: Vec<usize> = (0..n).collect();
        by_depth.sort_by(|&a, &b| depth[a].total_cmp(&depth[b]).then(a.cmp(&b)));
        let sorted_depth = by_depth.iter().map(|&i| depth[i]).collect();
        Self {
            depth,
            samples,
            lo,
            hi,
            by_depth,
            sorted_depth,
        }
    }

    fn members(&self, roi: &FrustumRoi<'_>) -> Vec<usize> {
        let start = self.sorted_depth.partition_point(|&d| d < roi.depth_min);
        let end = self.sorted_depth.partition_point(|&d| d <= roi.depth_max);
        let bb = &roi.bbox2d;
        let mut out: Vec<usize> = self.by_depth[start..end]
            .iter()
            .copied()
            .filter(|&i| {
                debug_assert!(roi.contains_depth(self.depth[i]));
                let (l, h) = (&self.lo[i], &self.hi[i]);
                if l.x > bb.max.x || h.x < bb.min.x || l.y > bb.max.y || h.y < bb.min.y {
                    return false;
                }
                self.samples[i].iter().any(|s| bb.contains(s))
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Frustum association. Projects every pillar once, then answers each
/// frustum with a depth-sorted range query followed by the 2D box test.
///
/// Detections whose frustum cannot be built yield empty clusters.
pub fn associate(
    points: &[RadarPoint],
    dets: &[PreliminaryDetection],
    camera: &CameraModel,
    params: &AssociationParams,
) -> Vec<Cluster> {
    if dets.is_empty() {
        return Vec::new();
    }
    let projected = ProjectedPillars::new(points, camera, &params.pillar_dims);
    let rois = frustums(dets, camera, params.expansion);
    dets.par_iter()
        .zip(rois.par_iter())
        .map(|(det, roi)| {
            let idx = roi.as_ref().map(|r| projected.members(r)).unwrap_or_default();
            make_cluster(det, points, idx)
        })
        .collect()
}

/// Reference association: per detection, per point, expand and test.
pub fn associate_naive(
    points: &[RadarPoint],
    dets: &[PreliminaryDetection],
    camera: &CameraModel,
    params: &AssociationParams,
) -> Vec<Cluster> {
    let mut clusters = Vec::with_capacity(dets.len());
    for det in dets {
        let mut idx = Vec::new();
        if let Ok(roi) = build_frustum(det, camera, params.expansion) {
            for (i, p) in points.iter().enumerate() {
                if roi.contains(&pillar_expand(p, &params.pillar_dims)) {
                    idx.push(i);
                }
            }
        }
        clusters.push(make_cluster(det, points, idx));
    }
    clusters
}
