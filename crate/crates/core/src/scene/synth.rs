//! Synthetic scenes with planted objects, radar returns and detector outputs.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SceneError, SceneFrame};
use crate::geometry::{project_box_to_bbox2d, project_point, unproject_center, Box2D, Box3D, CameraModel};
use crate::metrics::{GroundTruthBox, NUSCENES_CLASSES};
use crate::radar::{PreliminaryDetection, RadarPoint, Sweep, DEFAULT_MAX_SWEEPS};

pub const ATTRIBUTE_MOVING: u32 = 0;
pub const ATTRIBUTE_STOPPED: u32 = 1;

/// Nominal (w, l, h) per class, in vocabulary order.
const CLASS_DIMS: [[f64; 3]; 10] = [
    [1.95, 4.6, 1.7],
    [2.5, 7.0, 2.9],
    [2.9, 11.0, 3.5],
    [2.9, 12.0, 3.9],
    [2.8, 6.4, 3.2],
    [0.7, 0.7, 1.75],
    [0.8, 2.1, 1.5],
    [0.6, 1.7, 1.3],
    [0.4, 0.4, 1.0],
    [2.5, 0.5, 1.0],
];
const CLASS_MAX_SPEED: [f64; 10] = [15.0, 12.0, 10.0, 10.0, 3.0, 1.5, 12.0, 6.0, 0.0, 0.0];
const STOPPED_BELOW: f64 = 0.2;
const PLACEMENT_ATTEMPTS: usize = 200;
/// Keeps sampled returns strictly inside the box so range tests never sit
/// on a boundary.
const FACE_INSET: f64 = 0.98;
const DEPTH_RANGE: (f64, f64) = (8.0, 50.0);
const CLUTTER_X: (f64, f64) = (-30.0, 30.0);
const CLUTTER_Y: (f64, f64) = (1.0, 60.0);
const IMAGE_MARGIN: f64 = 2.0;
const FRAME_INTERVAL: f64 = 0.5;
const MIN_CELL_SPACING: i64 = 2;

pub fn class_dims(class_id: usize) -> Vector3<f64> {
    Vector3::from(CLASS_DIMS[class_id])
}

fn default_camera() -> CameraModel {
    CameraModel::forward_facing(633.0, (400.0, 224.0), Vector3::new(0.0, 0.0, 1.5), (800, 448))
        .expect("default camera is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub frames: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Uniform clutter returns per square meter per sweep.
    pub clutter_density: f64,
    /// Returns per object per sweep.
    pub min_points_per_object: usize,
    pub max_points_per_object: usize,
    /// Standard deviation of radar position noise, meters.
    pub position_noise: f64,
    /// Standard deviation of radial velocity noise, m/s.
    pub velocity_noise: f64,
    /// Standard deviation of detector depth error, meters.
    pub depth_noise: f64,
    /// Standard deviation of detector pixel jitter.
    pub bbox_jitter: f64,
    pub log_sigma: f64,
    pub sweeps: usize,
    pub sweep_interval: f64,
    /// Feature-map stride used to keep planted objects in separate cells.
    pub stride: u32,
    pub camera: CameraModel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 20,
            min_objects: 1,
            max_objects: 6,
            clutter_density: 0.005,
            min_points_per_object: 2,
            max_points_per_object: 8,
            position_noise: 0.0,
            velocity_noise: 0.0,
            depth_noise: 0.0,
            bbox_jitter: 0.0,
            log_sigma: -8.0,
            sweeps: DEFAULT_MAX_SWEEPS,
            sweep_interval: 0.05,
            stride: 4,
            camera: default_camera(),
        }
    }
}

impl SynthConfig {
    /// Default scene with sensor and detector noise switched on.
    pub fn noisy() -> Self {
        Self {
            position_noise: 0.1,
            velocity_noise: 0.2,
            depth_noise: 1.0,
            bbox_jitter: 2.0,
            log_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.position_noise == 0.0 && self.velocity_noise == 0.0 && self.depth_noise == 0.0 && self.bbox_jitter == 0.0
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidConfig(m));
        for (name, v) in [
            ("clutter_density", self.clutter_density),
            ("position_noise", self.position_noise),
            ("velocity_noise", self.velocity_noise),
            ("depth_noise", self.depth_noise),
            ("bbox_jitter", self.bbox_jitter),
            ("sweep_interval", self.sweep_interval),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !self.log_sigma.is_finite() {
            return bad(format!("log_sigma must be finite, got {}", self.log_sigma));
        }
        if self.min_objects > self.max_objects {
            return bad(format!("min_objects {} > max_objects {}", self.min_objects, self.max_objects));
        }
        if self.min_points_per_object > self.max_points_per_object {
            return bad(format!(
                "min_points_per_object {} > max_points_per_object {}",
                self.min_points_per_object, self.max_points_per_object
            ));
        }
        if self.stride == 0 {
            return bad("stride must be positive".into());
        }
        Ok(())
    }
}

struct Planted {
    gt: GroundTruthBox,
    bbox2d: Box2D,
    pixel: Vector2<f64>,
    depth: f64,
}

fn bev_radius(dims: &Vector3<f64>) -> f64 {
    0.5 * dims.x.hypot(dims.y)
}

fn try_plant(rng: &mut ChaCha8Rng, cfg: &SynthConfig, placed: &[Planted]) -> Option<Planted> {
    let class_id = rng.gen_range(0..NUSCENES_CLASSES.len());
    let scale = rng.gen_range(0.9..1.1);
    let dims = class_dims(class_id) * scale;
    let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let y = rng.gen_range(DEPTH_RANGE.0..DEPTH_RANGE.1);
    let x = rng.gen_range(-0.6 * y..0.6 * y);
    let center = Vector3::new(x, y, 0.5 * dims.z);
    let max_speed = CLASS_MAX_SPEED[class_id];
    let speed = if max_speed > 0.0 && rng.gen_bool(0.6) {
        rng.gen_range(1.0..max_speed.max(1.0 + f64::EPSILON))
    } else {
        0.0
    };
    let velocity = Vector2::new(yaw.cos(), yaw.sin()) * speed;
    let box3d = Box3D::new(center, dims, yaw, velocity);

    let (w, h) = (cfg.camera.width(), cfg.camera.height());
    for corner in box3d.corners() {
        let (px, _) = project_point(&cfg.camera, &corner).ok()?;
        if px.x < IMAGE_MARGIN || px.x > w - IMAGE_MARGIN || px.y < IMAGE_MARGIN || px.y > h - IMAGE_MARGIN {
            return None;
        }
    }
    let (pixel, depth) = project_point(&cfg.camera, &center).ok()?;
    let r = bev_radius(&dims);
    let s = cfg.stride as f64;
    let cell = ((pixel.x / s).floor() as i64, (pixel.y / s).floor() as i64);
    for p in placed {
        let other = &p.gt.box3d;
        if (other.center.xy() - center.xy()).norm() <= r + bev_radius(&other.dims) {
            return None;
        }
        let oc = ((p.pixel.x / s).floor() as i64, (p.pixel.y / s).floor() as i64);
        if (oc.0 - cell.0).abs().max((oc.1 - cell.1).abs()) < MIN_CELL_SPACING {
            return None;
        }
    }
    let bbox2d = project_box_to_bbox2d(&cfg.camera, &box3d).ok()?;
    let attribute = if speed < STOPPED_BELOW { ATTRIBUTE_STOPPED } else { ATTRIBUTE_MOVING };
    Some(Planted {
        gt: GroundTruthBox {
            box3d,
            class_id,
            attribute,
        },
        bbox2d,
        pixel,
        depth,
    })
}

/// Vertical faces of `b` facing the sensor at the ego origin, as
/// (outward normal, half thickness along normal, tangent, half width).
fn visible_faces(b: &Box3D) -> Vec<(Vector2<f64>, f64, Vector2<f64>, f64)> {
    let heading = Vector2::new(b.yaw.cos(), b.yaw.sin());
    let side = Vector2::new(-heading.y, heading.x);
    let (hl, hw) = (0.5 * b.length(), 0.5 * b.width());
    [(heading, hl, side, hw), (-heading, hl, side, hw), (side, hw, heading, hl), (-side, hw, heading, hl)]
        .into_iter()
        .filter(|(n, off, _, _)| {
            let face = b.center.xy() + n * *off;
            n.dot(&face) < 0.0
        })
        .collect()
}

fn object_returns(
    rng: &mut ChaCha8Rng,
    b: &Box3D,
    count: usize,
    age: f64,
    pos_noise: &Normal<f64>,
    vel_noise: &Normal<f64>,
) -> Vec<RadarPoint> {
    let faces = visible_faces(b);
    if faces.is_empty() {
        return Vec::new();
    }
    let widths: Vec<f64> = faces.iter().map(|f| f.3).collect();
    let total: f64 = widths.iter().sum();
    let ground = b.center.z - 0.5 * b.height();
    (0..count)
        .map(|_| {
            let mut pick = rng.gen_range(0.0..total);
            let mut k = 0;
            while k + 1 < faces.len() && pick >= widths[k] {
                pick -= widths[k];
                k += 1;
            }
            let (n, off, t, half) = faces[k];
            let a = rng.gen_range(-FACE_INSET..FACE_INSET) * half;
            let z = ground + rng.gen_range(0.05..0.95) * b.height();
            let bev = b.center.xy() + n * (off * FACE_INSET) + t * a - b.velocity * age;
            let position = Vector3::new(
                bev.x + pos_noise.sample(rng),
                bev.y + pos_noise.sample(rng),
                z + pos_noise.sample(rng),
            );
            let ray = position.xy().normalize();
            let radial = b.velocity.dot(&ray) + vel_noise.sample(rng);
            RadarPoint::new(position, ray * radial, rng.gen_range(0.0..20.0))
        })
        .collect()
}

fn clutter(rng: &mut ChaCha8Rng, density: f64) -> Vec<RadarPoint> {
    let area = (CLUTTER_X.1 - CLUTTER_X.0) * (CLUTTER_Y.1 - CLUTTER_Y.0);
    let expected = density * area;
    let mut n = expected.floor() as usize;
    if rng.gen_bool(expected.fract()) {
        n += 1;
    }
    (0..n)
        .map(|_| {
            let p = Vector3::new(
                rng.gen_range(CLUTTER_X.0..CLUTTER_X.1),
                rng.gen_range(CLUTTER_Y.0..CLUTTER_Y.1),
                rng.gen_range(0.0..2.0),
            );
            RadarPoint::new(p, Vector2::zeros(), rng.gen_range(-10.0..5.0))
        })
        .collect()
}

fn detection(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    planted: &Planted,
    depth_noise: &Normal<f64>,
    jitter: &Normal<f64>,
) -> PreliminaryDetection {
    let score = rng.gen_range(0.5..1.0);
    let gt = &planted.gt;
    let (w, h) = (cfg.camera.width(), cfg.camera.height());
    let (pixel, depth, bbox2d) = if cfg.depth_noise == 0.0 && cfg.bbox_jitter == 0.0 {
        (planted.pixel, planted.depth, planted.bbox2d)
    } else {
        let pixel = planted.pixel + Vector2::new(jitter.sample(rng), jitter.sample(rng));
        let depth = (planted.depth + depth_noise.sample(rng)).max(1.0);
        let mut j = || jitter.sample(rng);
        let (x0, y0) = (planted.bbox2d.min.x + j(), planted.bbox2d.min.y + j());
        let (x1, y1) = (planted.bbox2d.max.x + j(), planted.bbox2d.max.y + j());
        let bbox2d = Box2D::from_coords(
            x0.min(x1).clamp(0.0, w),
            y0.min(y1).clamp(0.0, h),
            x0.max(x1).clamp(0.0, w),
            y0.max(y1).clamp(0.0, h),
        );
        (pixel, depth, bbox2d)
    };
    let box3d = if cfg.depth_noise == 0.0 && cfg.bbox_jitter == 0.0 {
        gt.box3d
    } else {
        Box3D {
            center: unproject_center(&cfg.camera, &pixel, depth),
            ..gt.box3d
        }
    };
    PreliminaryDetection {
        class_id: gt.class_id,
        score,
        bbox2d,
        projected_center: pixel,
        depth,
        log_sigma: cfg.log_sigma,
        box3d,
        attribute: gt.attribute,
    }
}

fn synth_frame(cfg: &SynthConfig, frame: usize) -> SceneFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(frame as u64);
    let pos_noise = Normal::new(0.0, cfg.position_noise).expect("validated");
    let vel_noise = Normal::new(0.0, cfg.velocity_noise).expect("validated");
    let depth_noise = Normal::new(0.0, cfg.depth_noise).expect("validated");
    let jitter = Normal::new(0.0, cfg.bbox_jitter).expect("validated");

    let target = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut planted: Vec<Planted> = Vec::with_capacity(target);
    let mut attempts = 0;
    while planted.len() < target && attempts < PLACEMENT_ATTEMPTS * target.max(1) {
        attempts += 1;
        if let Some(p) = try_plant(&mut rng, cfg, &planted) {
            planted.push(p);
        }
    }

    let t_frame = frame as f64 * FRAME_INTERVAL;
    let radar_sweeps = (0..cfg.sweeps)
        .map(|k| {
            let age = (cfg.sweeps - 1 - k) as f64 * cfg.sweep_interval;
            let mut points = Vec::new();
            for p in &planted {
                let n = rng.gen_range(cfg.min_points_per_object..=cfg.max_points_per_object);
                points.extend(object_returns(&mut rng, &p.gt.box3d, n, age, &pos_noise, &vel_noise));
            }
            points.extend(clutter(&mut rng, cfg.clutter_density));
            Sweep {
                timestamp: t_frame - age,
                points,
            }
        })
        .collect();

    let preliminary_detections = planted
        .iter()
        .map(|p| detection(&mut rng, cfg, p, &depth_noise, &jitter))
        .collect();
    SceneFrame {
        frame_id: frame as u64,
        camera: cfg.camera.clone(),
        radar_sweeps,
        preliminary_detections,
        ground_truth: Some(planted.into_iter().map(|p| p.gt).collect()),
        head_outputs: None,
    }
}

/// Generates `cfg.frames` independent frames. Each frame draws from its own
/// stream of the seeded generator, so frame `k` does not depend on how many
/// frames are requested.
pub fn synth_scene(cfg: &SynthConfig) -> Result<Vec<SceneFrame>, SceneError> {
    cfg.validate()?;
    Ok((0..cfg.frames).map(|f| synth_frame(cfg, f)).collect())
}
