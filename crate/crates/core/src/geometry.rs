//! Pinhole camera projection, cuboid/rectangle box types and overlap measures.
//!
//! Frames: the ego frame is x right, y forward, z up; the camera frame is
//! x right, y down, z forward. A box's yaw rotates its length axis away from
//! ego +x about ego +z.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Points closer than this to the image plane are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("degenerate box: enclosing area is zero")]
    DegenerateBox,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = angle.rem_euclid(two_pi);
    if a > PI {
        a -= two_pi;
    }
    a
}

/// Intrinsic and extrinsic calibration of a pinhole camera.
///
/// `extrinsic` maps ego coordinates into the camera frame
/// (`p_cam = R * p_ego + t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCamera", into = "RawCamera")]
pub struct CameraModel {
    intrinsic: Matrix3<f64>,
    intrinsic_inv: Matrix3<f64>,
    extrinsic: Matrix4<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    image_size: (u32, u32),
}

/// Row-major on-disk form of [`CameraModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawCamera {
    intrinsic: [[f64; 3]; 3],
    extrinsic: [[f64; 4]; 4],
    image_size: [u32; 2],
}

impl TryFrom<RawCamera> for CameraModel {
    type Error = GeometryError;

    fn try_from(raw: RawCamera) -> Result<Self, Self::Error> {
        let k = Matrix3::from_fn(|r, c| raw.intrinsic[r][c]);
        let e = Matrix4::from_fn(|r, c| raw.extrinsic[r][c]);
        CameraModel::new(k, e, (raw.image_size[0], raw.image_size[1]))
    }
}

impl From<CameraModel> for RawCamera {
    fn from(cam: CameraModel) -> Self {
        let mut intrinsic = [[0.0; 3]; 3];
        let mut extrinsic = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                intrinsic[r][c] = cam.intrinsic[(r, c)];
            }
        }
        for r in 0..4 {
            for c in 0..4 {
                extrinsic[r][c] = cam.extrinsic[(r, c)];
            }
        }
        RawCamera {
            intrinsic,
            extrinsic,
            image_size: [cam.image_size.0, cam.image_size.1],
        }
    }
}

impl CameraModel {
    pub fn new(
        intrinsic: Matrix3<f64>,
        extrinsic: Matrix4<f64>,
        image_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        if !(intrinsic[(0, 0)] > 0.0 && intrinsic[(1, 1)] > 0.0) {
            return Err(GeometryError::InvalidCamera(
                "focal lengths must be positive".into(),
            ));
        }
        if intrinsic[(2, 0)] != 0.0
            || intrinsic[(2, 1)] != 0.0
            || intrinsic[(1, 0)] != 0.0
            || intrinsic[(2, 2)] != 1.0
        {
            return Err(GeometryError::InvalidCamera(
                "intrinsic must be upper triangular with K[2][2] = 1".into(),
            ));
        }
        if intrinsic.iter().chain(extrinsic.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidCamera("non-finite entry".into()));
        }
        let rotation: Matrix3<f64> = extrinsic.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = rotation.transpose() * rotation - Matrix3::identity();
        if ortho.amax() >= 1e-9 {
            return Err(GeometryError::InvalidCamera(
                "extrinsic rotation is not orthonormal".into(),
            ));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(GeometryError::InvalidCamera("empty image".into()));
        }
        let translation = Vector3::new(extrinsic[(0, 3)], extrinsic[(1, 3)], extrinsic[(2, 3)]);
        let intrinsic_inv = intrinsic
            .try_inverse()
            .ok_or_else(|| GeometryError::InvalidCamera("singular intrinsic".into()))?;
        Ok(Self {
            intrinsic,
            intrinsic_inv,
            extrinsic,
            rotation,
            translation,
            image_size,
        })
    }

    /// Level camera mounted at `position` (ego frame) looking along ego +y.
    pub fn forward_facing(
        focal: f64,
        principal: (f64, f64),
        position: Vector3<f64>,
        image_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            1.0, 0.0, 0.0,
            0.0, 0.0, -1.0,
            0.0, 1.0, 0.0,
        );
        let t = -(rotation * position);
        let mut extrinsic = Matrix4::identity();
        extrinsic.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        extrinsic[(0, 3)] = t.x;
        extrinsic[(1, 3)] = t.y;
        extrinsic[(2, 3)] = t.z;
        #[rustfmt::skip]
        let intrinsic = Matrix3::new(
            focal, 0.0, principal.0,
            0.0, focal, principal.1,
            0.0, 0.0, 1.0,
        );
        Self::new(intrinsic, extrinsic, image_size)
    }

    pub fn intrinsic(&self) -> &Matrix3<f64> {
        &self.intrinsic
    }

    pub fn extrinsic(&self) -> &Matrix4<f64> {
        &self.extrinsic
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    pub fn width(&self) -> f64 {
        self.image_size.0 as f64
    }

    pub fn height(&self) -> f64 {
        self.image_size.1 as f64
    }

    /// Camera center expressed in the ego frame.
    pub fn center_in_ego(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Heading (ego BEV angle from +x) of the optical axis.
    pub fn optical_axis_heading(&self) -> f64 {
        // Third row of R is the camera z axis expressed in ego coordinates.
        let z = self.rotation.row(2);
        z[1].atan2(z[0])
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_ego(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_cam - self.translation)
    }
}

/// Projects an ego-frame point to pixel coordinates and camera depth.
pub fn project_point(
    camera: &CameraModel,
    p: &Vector3<f64>,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    project_camera_point(camera, &camera.to_camera(p))
}

/// Same as [`project_point`] for a point already in the camera frame.
pub fn project_camera_point(
    camera: &CameraModel,
    p_cam: &Vector3<f64>,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    let depth = p_cam.z;
    if depth <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera(depth));
    }
    let h = camera.intrinsic * (p_cam / depth);
    Ok((Vector2::new(h.x, h.y), depth))
}

/// Inverse pinhole projection: pixel plus camera depth back to the ego frame.
pub fn unproject_center(camera: &CameraModel, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
    let ray = camera.intrinsic_inv * Vector3::new(pixel.x, pixel.y, 1.0);
    // Keep depth exact: the inverse intrinsic of an upper-triangular K has z == 1.
    let p_cam = Vector3::new(ray.x * depth, ray.y * depth, depth);
    camera.to_ego(&p_cam)
}

/// Yaw-rotated cuboid in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Vector3<f64>,
    /// (width, length, height) in meters.
    pub dims: Vector3<f64>,
    pub yaw: f64,
    pub velocity: Vector2<f64>,
}

impl Box3D {
    pub fn new(center: Vector3<f64>, dims: Vector3<f64>, yaw: f64, velocity: Vector2<f64>) -> Self {
        Self {
            center,
            dims,
            yaw: normalize_angle(yaw),
            velocity,
        }
    }

    pub fn width(&self) -> f64 {
        self.dims.x
    }

    pub fn length(&self) -> f64 {
        self.dims.y
    }

    pub fn height(&self) -> f64 {
        self.dims.z
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        box3d_corners(self)
    }
}

/// Corner `i` uses signs from bits (length: bit 0, width: bit 1, height: bit 2).
pub fn box3d_corners(b: &Box3D) -> [Vector3<f64>; 8] {
    let (s, c) = b.yaw.sin_cos();
    let half_l = 0.5 * b.length();
    let half_w = 0.5 * b.width();
    let half_h = 0.5 * b.height();
    std::array::from_fn(|i| {
        let ol = if i & 1 == 0 { -half_l } else { half_l };
        let ow = if i & 2 == 0 { -half_w } else { half_w };
        let oh = if i & 4 == 0 { -half_h } else { half_h };
        Vector3::new(
            b.center.x + c * ol - s * ow,
            b.center.y + s * ol + c * ow,
            b.center.z + oh,
        )
    })
}

/// Axis-aligned image rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Box2D {
    pub fn new(min: Vector2<f64>, max: Vector2<f64>) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y, "Box2D min must not exceed max");
        Self { min, max }
    }

    pub fn from_coords(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(Vector2::new(x0, y0), Vector2::new(x1, y1))
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Vector2<f64> {
        (self.min + self.max) * 0.5
    }

    /// Inclusive containment test.
    #[inline]
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Scales the box about its center.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let half = Vector2::new(0.5 * self.width(), 0.5 * self.height()) * factor;
        Self::new(c - half, c + half)
    }

    pub fn intersection_area(&self, other: &Box2D) -> f64 {
        let w = (self.max.x.min(other.max.x) - self.min.x.max(other.min.x)).max(0.0);
        let h = (self.max.y.min(other.max.y) - self.min.y.max(other.min.y)).max(0.0);
        w * h
    }

    pub fn enclosing(&self, other: &Box2D) -> Box2D {
        Box2D::new(
            Vector2::new(self.min.x.min(other.min.x), self.min.y.min(other.min.y)),
            Vector2::new(self.max.x.max(other.max.x), self.max.y.max(other.max.y)),
        )
    }
}

/// Axis-aligned hull of the box's projected corners, clipped to the image.
///
/// Corners behind the camera are ignored; a hull that lies entirely outside
/// the image collapses to a zero-area box on the image border.
pub fn project_box_to_bbox2d(camera: &CameraModel, b: &Box3D) -> Result<Box2D, GeometryError> {
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    let mut any = false;
    for corner in box3d_corners(b) {
        if let Ok((px, _)) = project_point(camera, &corner) {
            any = true;
            lo = lo.inf(&px);
            hi = hi.sup(&px);
        }
    }
    if !any {
        let depth = camera.to_camera(&b.center).z;
        return Err(GeometryError::BehindCamera(depth));
    }
    let (w, h) = (camera.width(), camera.height());
    let clip = |v: Vector2<f64>| Vector2::new(v.x.clamp(0.0, w), v.y.clamp(0.0, h));
    Ok(Box2D::new(clip(lo), clip(hi)))
}

/// IoU of two boxes sharing center and yaw, given (w, l, h) dimensions.
pub fn aligned_iou3d(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let inter = a.x.min(b.x) * a.y.min(b.y) * a.z.min(b.z);
    let union = a.x * a.y * a.z + b.x * b.y * b.z - inter;
    inter / union
}

pub fn iou2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Generalized IoU.
pub fn giou2d(a: &Box2D, b: &Box2D) -> Result<f64, GeometryError> {
    let enclosing = a.enclosing(b).area();
    if enclosing <= 0.0 {
        return Err(GeometryError::DegenerateBox);
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    Ok(iou - (enclosing - union) / enclosing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_camera() -> CameraModel {
        CameraModel::new(Matrix3::identity(), Matrix4::identity(), (10, 10)).unwrap()
    }

    fn random_camera(rng: &mut ChaCha8Rng) -> CameraModel {
        let rot = nalgebra::Rotation3::from_euler_angles(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-PI..PI),
        );
        let mut e = Matrix4::identity();
        e.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
        for i in 0..3 {
            e[(i, 3)] = rng.gen_range(-2.0..2.0);
        }
        let f = rng.gen_range(200.0..1500.0);
        #[rustfmt::skip]
        let k = Matrix3::new(
            f, rng.gen_range(-1.0..1.0), rng.gen_range(100.0..800.0),
            0.0, f * rng.gen_range(0.9..1.1), rng.gen_range(100.0..500.0),
            0.0, 0.0, 1.0,
        );
        CameraModel::new(k, e, (1600, 900)).unwrap()
    }

    #[test]
    fn projects_on_optical_axis() {
        let cam = unit_camera();
        let (px, d) = project_point(&cam, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));
        assert_eq!(d, 1.0);
        let (px, d) = project_point(&cam, &Vector3::new(2.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(1.0, 0.0));
        assert_eq!(d, 2.0);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = unit_camera();
        assert!(matches!(
            project_point(&cam, &Vector3::new(0.0, 0.0, 0.0)),
            Err(GeometryError::BehindCamera(_))
        ));
        assert!(project_point(&cam, &Vector3::new(1.0, 1.0, -3.0)).is_err());
    }

    #[test]
    fn project_unproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let cam = random_camera(&mut rng);
            let p_cam = Vector3::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(0.5..80.0),
            );
            let p = cam.to_ego(&p_cam);
            let (px, depth) = project_point(&cam, &p).unwrap();
            let back = unproject_center(&cam, &px, depth);
            assert!((back - p).norm() < 1e-9, "{back} vs {p}");
        }
    }

    #[test]
    fn unproject_principal_point() {
        let cam = CameraModel::new(
            Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0),
            Matrix4::identity(),
            (640, 480),
        )
        .unwrap();
        let p = unproject_center(&cam, &Vector2::new(320.0, 240.0), 5.0);
        assert_eq!(p, Vector3::new(0.0, 0.0, 5.0));
        // A half-pixel shift moves the point by depth * 0.5 / f.
        let q = unproject_center(&cam, &Vector2::new(320.5, 240.5), 5.0);
        assert_abs_diff_eq!(q.x, 5.0 * 0.5 / 500.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, 5.0 * 0.5 / 500.0, epsilon = 1e-15);
    }

    #[test]
    fn camera_validation() {
        let mut k = Matrix3::identity();
        k[(0, 0)] = -1.0;
        assert!(CameraModel::new(k, Matrix4::identity(), (1, 1)).is_err());
        let mut e = Matrix4::identity();
        e[(0, 0)] = 2.0;
        assert!(CameraModel::new(Matrix3::identity(), e, (1, 1)).is_err());
        assert!(CameraModel::new(Matrix3::identity(), Matrix4::identity(), (0, 1)).is_err());
    }

    #[test]
    fn forward_camera_frame_convention() {
        let cam = CameraModel::forward_facing(
            500.0,
            (400.0, 224.0),
            Vector3::new(0.0, 0.0, 1.5),
            (800, 448),
        )
        .unwrap();
        // Ego forward is camera +z, ego up is camera -y.
        let p = cam.to_camera(&Vector3::new(1.0, 10.0, 2.5));
        assert_abs_diff_eq!(p, Vector3::new(1.0, -1.0, 10.0), epsilon = 1e-12);
        assert_abs_diff_eq!(cam.optical_axis_heading(), PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cam.center_in_ego(), Vector3::new(0.0, 0.0, 1.5), epsilon = 1e-15);
    }

    #[test]
    fn unit_cube_corners() {
        let b = Box3D::new(Vector3::zeros(), Vector3::repeat(1.0), 0.0, Vector2::zeros());
        for c in box3d_corners(&b) {
            for v in c.iter() {
                assert_eq!(v.abs(), 0.5);
            }
        }
    }

    fn sorted_corners(b: &Box3D) -> Vec<[f64; 3]> {
        let mut v: Vec<[f64; 3]> = box3d_corners(b).iter().map(|c| [c.x, c.y, c.z]).collect();
        v.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x * 1e9).round().total_cmp(&(y * 1e9).round()))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        v
    }

    #[test]
    fn yaw_pi_is_a_symmetry() {
        let dims = Vector3::new(1.5, 3.0, 2.0);
        let a = Box3D::new(Vector3::new(1.0, 2.0, 3.0), dims, 0.0, Vector2::zeros());
        let b = Box3D::new(Vector3::new(1.0, 2.0, 3.0), dims, PI, Vector2::zeros());
        for (p, q) in sorted_corners(&a).iter().zip(sorted_corners(&b)) {
            for i in 0..3 {
                assert_abs_diff_eq!(p[i], q[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn corners_match_rotation_matrix_oracle() {
        let b = Box3D::new(
            Vector3::new(3.0, -1.0, 0.5),
            Vector3::new(2.0, 4.0, 1.0),
            PI / 4.0,
            Vector2::zeros(),
        );
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), PI / 4.0);
        let corners = box3d_corners(&b);
        for (i, c) in corners.iter().enumerate() {
            let local = Vector3::new(
                if i & 1 == 0 { -2.0 } else { 2.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -0.5 } else { 0.5 },
            );
            let expected = rot * local + b.center;
            assert_abs_diff_eq!(*c, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn yaw_periodicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let yaw = rng.gen_range(-PI..PI);
            let center = Vector3::new(rng.gen_range(-50.0..50.0), rng.gen_range(0.0..60.0), 0.5);
            let dims = Vector3::new(1.9, 4.5, 1.6);
            let a = Box3D::new(center, dims, yaw, Vector2::zeros());
            let b = Box3D::new(center, dims, yaw + 2.0 * PI, Vector2::zeros());
            for (p, q) in box3d_corners(&a).iter().zip(box3d_corners(&b).iter()) {
                assert_abs_diff_eq!(*p, *q, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_eq!(normalize_angle(0.25), 0.25);
    }

    fn test_camera() -> CameraModel {
        CameraModel::forward_facing(600.0, (400.0, 224.0), Vector3::new(0.0, 0.0, 1.0), (800, 448))
            .unwrap()
    }

    #[test]
    fn centered_box_is_symmetric_about_principal_point() {
        let cam = test_camera();
        // Box center at camera height so it lies on the optical axis.
        let b = Box3D::new(Vector3::new(0.0, 20.0, 1.0), Vector3::new(2.0, 4.0, 1.5), 0.0, Vector2::zeros());
        let bb = project_box_to_bbox2d(&cam, &b).unwrap();
        assert_abs_diff_eq!(bb.center(), Vector2::new(400.0, 224.0), epsilon = 1e-9);
    }

    #[test]
    fn off_image_box_collapses() {
        let cam = test_camera();
        let b = Box3D::new(Vector3::new(200.0, 20.0, 1.0), Vector3::repeat(1.0), 0.0, Vector2::zeros());
        let bb = project_box_to_bbox2d(&cam, &b).unwrap();
        assert_eq!(bb.area(), 0.0);
        let behind = Box3D::new(Vector3::new(0.0, -20.0, 1.0), Vector3::repeat(1.0), 0.0, Vector2::zeros());
        assert!(matches!(project_box_to_bbox2d(&cam, &behind), Err(GeometryError::BehindCamera(_))));
    }

    #[test]
    fn bbox_hull_matches_per_corner_oracle() {
        let cam = test_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let b = Box3D::new(
                Vector3::new(rng.gen_range(-15.0..15.0), rng.gen_range(5.0..60.0), rng.gen_range(0.0..2.0)),
                Vector3::new(rng.gen_range(0.5..3.0), rng.gen_range(0.5..12.0), rng.gen_range(0.5..4.0)),
                rng.gen_range(-PI..PI),
                Vector2::zeros(),
            );
            let bb = project_box_to_bbox2d(&cam, &b).unwrap();
            let k = cam.intrinsic();
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for c in box3d_corners(&b) {
                // Independent route: explicit ego->camera axis swap then pinhole.
                let xc = c.x;
                let yc = -(c.z - 1.0);
                let zc = c.y;
                let u = k[(0, 0)] * xc / zc + k[(0, 2)];
                let v = k[(1, 1)] * yc / zc + k[(1, 2)];
                x0 = x0.min(u);
                y0 = y0.min(v);
                x1 = x1.max(u);
                y1 = y1.max(v);
            }
            let clip = |v: f64, hi: f64| v.clamp(0.0, hi);
            assert_abs_diff_eq!(bb.min.x, clip(x0, 800.0), epsilon = 1e-9);
            assert_abs_diff_eq!(bb.min.y, clip(y0, 448.0), epsilon = 1e-9);
            assert_abs_diff_eq!(bb.max.x, clip(x1, 800.0), epsilon = 1e-9);
            assert_abs_diff_eq!(bb.max.y, clip(y1, 448.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn aligned_iou_closed_forms() {
        let a = Vector3::new(2.0, 2.0, 2.0);
        let b = Vector3::new(1.0, 1.0, 1.0);
        assert_eq!(aligned_iou3d(&a, &a), 1.0);
        assert_eq!(aligned_iou3d(&a, &b), 0.125);
        assert_eq!(aligned_iou3d(&b, &a), 0.125);
    }

    #[test]
    fn aligned_iou_matches_voxel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a: Vector3<f64> = Vector3::new(rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
            let b: Vector3<f64> = Vector3::new(rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
            // Voxel grid over the common bounding region. The grid is a tensor
            // product, so occupied voxel counts factor per axis.
            let n = 20_000usize;
            let count = |ext: f64, half: f64| {
                (0..n)
                    .filter(|&i| (((i as f64 + 0.5) / n as f64 - 0.5) * ext).abs() <= half)
                    .count() as f64
            };
            let ext = [a.x.max(b.x), a.y.max(b.y), a.z.max(b.z)];
            let mut in_a = 1.0;
            let mut in_b = 1.0;
            let mut in_both = 1.0;
            for axis in 0..3 {
                in_a *= count(ext[axis], a[axis] / 2.0);
                in_b *= count(ext[axis], b[axis] / 2.0);
                in_both *= count(ext[axis], a[axis].min(b[axis]) / 2.0);
            }
            let oracle = in_both / (in_a + in_b - in_both);
            let got = aligned_iou3d(&a, &b);
            assert!((got - oracle).abs() < 1e-3, "{got} vs {oracle}");
        }
    }

    #[test]
    fn giou_examples() {
        let a = Box2D::from_coords(0.0, 0.0, 1.0, 1.0);
        let b = Box2D::from_coords(1.0, 1.0, 2.0, 2.0);
        assert_eq!(giou2d(&a, &a).unwrap(), 1.0);
        assert_eq!(giou2d(&a, &b).unwrap(), -0.5);
        let p = Box2D::from_coords(3.0, 3.0, 3.0, 3.0);
        assert!(matches!(giou2d(&p, &p), Err(GeometryError::DegenerateBox)));
    }

    #[test]
    fn giou_decreases_with_separation() {
        let a = Box2D::from_coords(0.0, 0.0, 1.0, 1.0);
        let mut prev = f64::INFINITY;
        for step in 0..60 {
            let off = 2.0 + (step as f64).powi(3);
            let b = Box2D::from_coords(off, off, off + 1.0, off + 1.0);
            let g = giou2d(&a, &b).unwrap();
            assert!(g < prev && g > -1.0);
            prev = g;
        }
        assert!(prev < -0.9999);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = Box2D> {
            (-50.0..50.0f64, -50.0..50.0f64, 0.0..30.0f64, 0.0..30.0f64)
                .prop_map(|(x, y, w, h)| Box2D::from_coords(x, y, x + w, y + h))
        }

        proptest! {
            #[test]
            fn giou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
                if let (Ok(g1), Ok(g2)) = (giou2d(&a, &b), giou2d(&b, &a)) {
                    prop_assert!((g1 - g2).abs() < 1e-12);
                    prop_assert!(g1 <= iou2d(&a, &b) + 1e-12);
                    prop_assert!(g1 > -1.0 - 1e-12 && g1 <= 1.0 + 1e-12);
                }
                if a.area() > 0.0 {
                    prop_assert!((giou2d(&a, &a).unwrap() - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn aligned_iou_symmetric(
                a in (0.1..5.0f64, 0.1..5.0f64, 0.1..5.0f64),
                b in (0.1..5.0f64, 0.1..5.0f64, 0.1..5.0f64),
            ) {
                let a = Vector3::new(a.0, a.1, a.2);
                let b = Vector3::new(b.0, b.1, b.2);
                let ab = aligned_iou3d(&a, &b);
                prop_assert_eq!(ab, aligned_iou3d(&b, &a));
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert_eq!(ab == 1.0, a == b);
            }
        }
    }
}
