//! Handcrafted radar cluster statistics and their rasterization onto the image
//! feature plane.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::geometry::Box2D;
use crate::radar::{Cluster, RadarPoint};

pub const DEFAULT_POSITION_NORM: f64 = 60.0;
pub const DEFAULT_VELOCITY_NORM: f64 = 20.0;
pub const DEFAULT_STRIDE: u32 = 4;

const DEGENERATE_SXX: f64 = 1e-12;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum FeatureError {
    #[error("cluster has no points")]
    EmptyCluster,
    #[error("least-squares line is undefined for this cluster")]
    DegenerateLine,
    #[error("feature vectors have different lengths ({0} vs {1})")]
    MixedChannelCounts(usize, usize),
    #[error("image size {width}x{height} is not divisible by stride {stride}")]
    InvalidImageSize { width: u32, height: u32, stride: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HandcraftedVariant {
    /// max, min, mean
    Mean,
    /// max, min, mean, orientation
    MeanOrt,
    /// max, min, median, orientation
    MedianOrt,
    /// max, min, mean, median, variance, orientation
    Complete,
}

impl HandcraftedVariant {
    pub fn len(self) -> usize {
        match self {
            Self::Mean => 12,
            Self::MeanOrt | Self::MedianOrt => 13,
            Self::Complete => 21,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandcraftedConfig {
    pub variant: HandcraftedVariant,
    pub position_norm: f64,
    pub velocity_norm: f64,
}

impl Default for HandcraftedConfig {
    fn default() -> Self {
        Self {
            variant: HandcraftedVariant::MeanOrt,
            position_norm: DEFAULT_POSITION_NORM,
            velocity_norm: DEFAULT_VELOCITY_NORM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn concat(&self, other: &FeatureVector) -> FeatureVector {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        FeatureVector(v)
    }
}

/// Normalized per-point channels (x, y, v_x, v_y).
pub fn normalized_channels(p: &RadarPoint, cfg: &HandcraftedConfig) -> [f64; 4] {
    [
        p.position.x / cfg.position_norm,
        p.position.y / cfg.position_norm,
        p.velocity.x / cfg.velocity_norm,
        p.velocity.y / cfg.velocity_norm,
    ]
}

/// Rows sorted lexicographically so every reduction runs in a fixed order.
fn canonical_rows(points: &[RadarPoint], cfg: &HandcraftedConfig) -> Vec<[f64; 4]> {
    let mut rows: Vec<[f64; 4]> = points.iter().map(|p| normalized_channels(p, cfg)).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows
}

/// Outcome of fitting `y = m x + b` to BEV positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineFit {
    Slope(f64),
    /// All x equal but at least two distinct points.
    Vertical,
    /// Fewer than two distinct points.
    SinglePoint,
}

/// Least-squares slope of `xy`, summed in the given order.
pub fn fit_line(xy: &[(f64, f64)]) -> LineFit {
    let n = xy.len();
    if n == 0 {
        return LineFit::SinglePoint;
    }
    let mean_x = xy.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mean_y = xy.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in xy {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    if sxx >= DEGENERATE_SXX {
        return LineFit::Slope(sxy / sxx);
    }
    let first = xy[0];
    if xy.iter().all(|&p| p == first) {
        LineFit::SinglePoint
    } else {
        LineFit::Vertical
    }
}

fn cluster_line(cluster: &Cluster, cfg: &HandcraftedConfig) -> LineFit {
    let xy: Vec<(f64, f64)> = canonical_rows(&cluster.members, cfg)
        .iter()
        .map(|r| (r[0], r[1]))
        .collect();
    fit_line(&xy)
}

/// Slope of the best-fitting line through the cluster's normalized BEV positions.
pub fn cluster_slope(cluster: &Cluster, cfg: &HandcraftedConfig) -> Result<f64, FeatureError> {
    match cluster_line(cluster, cfg) {
        LineFit::Slope(m) => Ok(m),
        LineFit::Vertical | LineFit::SinglePoint => Err(FeatureError::DegenerateLine),
    }
}

/// Orientation in (-pi/2, pi/2].
pub fn slope_to_orientation(fit: LineFit) -> f64 {
    match fit {
        LineFit::Slope(m) => m.atan(),
        LineFit::Vertical => FRAC_PI_2,
        LineFit::SinglePoint => 0.0,
    }
}

#[derive(Debug, Clone, Copy)]
struct ChannelStats {
    max: f64,
    min: f64,
    mean: f64,
    median: f64,
    variance: f64,
}

/// `sorted` must be ascending and non-empty.
fn channel_stats(sorted: &[f64]) -> ChannelStats {
    let n = sorted.len();
    let min = sorted[0];
    let max = sorted[n - 1];
    let mean = (sorted.iter().sum::<f64>() / n as f64).clamp(min, max);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (0.5 * (sorted[n / 2 - 1] + sorted[n / 2])).clamp(min, max)
    };
    let variance = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    ChannelStats {
        max,
        min,
        mean,
        median,
        variance,
    }
}

/// Statistics of the normalized (x, y, v_x, v_y) channels, laid out as
/// max[4], min[4], then mean/median/variance blocks per variant, then the
/// orientation when the variant has one.
pub fn extract_handcrafted(
    cluster: &Cluster,
    cfg: &HandcraftedConfig,
) -> Result<FeatureVector, FeatureError> {
    if cluster.is_empty() {
        return Err(FeatureError::EmptyCluster);
    }
    let rows = canonical_rows(&cluster.members, cfg);
    let stats: [ChannelStats; 4] = std::array::from_fn(|c| {
        let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        col.sort_by(f64::total_cmp);
        channel_stats(&col)
    });
    let mut out = Vec::with_capacity(cfg.variant.len());
    out.extend(stats.iter().map(|s| s.max));
    out.extend(stats.iter().map(|s| s.min));
    use HandcraftedVariant::*;
    if matches!(cfg.variant, Mean | MeanOrt | Complete) {
        out.extend(stats.iter().map(|s| s.mean));
    }
    if matches!(cfg.variant, MedianOrt | Complete) {
        out.extend(stats.iter().map(|s| s.median));
    }
    if cfg.variant == Complete {
        out.extend(stats.iter().map(|s| s.variance));
    }
    if cfg.variant != Mean {
        let xy: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
        out.push(slope_to_orientation(fit_line(&xy)));
    }
    debug_assert_eq!(out.len(), cfg.variant.len());
    Ok(FeatureVector(out))
}

/// C x H x W grid of cluster features on the downsampled image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHeatmap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: u32,
    pub values: Vec<f64>,
}

impl FeatureHeatmap {
    pub fn zeros(channels: usize, height: usize, width: usize, stride: u32) -> Self {
        Self {
            channels,
            height,
            width,
            stride,
            values: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.height + row) * self.width + col
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(c, row, col)]
    }

    /// Image-space center of a feature-map cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.stride as f64;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }

    pub fn nonzero_pixels(&self) -> usize {
        let plane = self.height * self.width;
        (0..plane)
            .filter(|&i| (0..self.channels).any(|c| self.values[c * plane + i] != 0.0))
            .count()
    }
}

/// Paints each cluster's feature vector into every cell whose image-space
/// center falls inside the detection's 2D box. Where boxes overlap, the
/// detection with the smaller estimated depth wins; ties go to the earlier
/// cluster.
pub fn rasterize_heatmap(
    items: &[(Cluster, FeatureVector)],
    image_size: (u32, u32),
    stride: u32,
) -> Result<FeatureHeatmap, FeatureError> {
    let (w, h) = image_size;
    if stride == 0 || w % stride != 0 || h % stride != 0 {
        return Err(FeatureError::InvalidImageSize {
            width: w,
            height: h,
            stride,
        });
    }
    let channels = items.first().map_or(0, |(_, f)| f.len());
    if let Some((_, f)) = items.iter().find(|(_, f)| f.len() != channels) {
        return Err(FeatureError::MixedChannelCounts(channels, f.len()));
    }
    let (hf, wf) = ((h / stride) as usize, (w / stride) as usize);
    let mut map = FeatureHeatmap::zeros(channels, hf, wf, stride);
    let mut owner: Vec<Option<usize>> = vec![None; hf * wf];
    let s = stride as f64;
    for (k, (cluster, _)) in items.iter().enumerate() {
        let depth = cluster.detection.depth;
        let bb = &cluster.detection.bbox2d;
        let Some((r0, r1)) = cell_span(bb.min.y, bb.max.y, s, hf) else {
            continue;
        };
        let Some((c0, c1)) = cell_span(bb.min.x, bb.max.x, s, wf) else {
            continue;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let slot = &mut owner[row * wf + col];
                let wins = match *slot {
                    None => true,
                    Some(j) => depth < items[j].0.detection.depth,
                };
                if wins {
                    *slot = Some(k);
                }
            }
        }
    }
    let plane = hf * wf;
    for (cell, o) in owner.iter().enumerate() {
        if let Some(k) = o {
            for (c, v) in items[*k].1.as_slice().iter().enumerate() {
                map.values[c * plane + cell] = *v;
            }
        }
    }
    Ok(map)
}

/// Inclusive range of cell indices whose centers `(i + 0.5) * s` lie in `[lo, hi]`.
fn cell_span(lo: f64, hi: f64, s: f64, n: usize) -> Option<(usize, usize)> {
    if n == 0 || !(lo <= hi) {
        return None;
    }
    let first = ((lo / s - 0.5).ceil().max(0.0)) as usize;
    let last_f = (hi / s - 0.5).floor();
    if last_f < 0.0 {
        return None;
    }
    let mut first = first;
    let mut last = (last_f as usize).min(n - 1);
    // Guard the float rounding of the division against the exact predicate.
    while first > 0 && ((first - 1) as f64 + 0.5) * s >= lo {
        first -= 1;
    }
    while first <= last && (first as f64 + 0.5) * s < lo {
        first += 1;
    }
    while last + 1 < n && ((last + 1) as f64 + 0.5) * s <= hi {
        last += 1;
    }
    while last >= first && (last as f64 + 0.5) * s > hi {
        if last == 0 {
            return None;
        }
        last -= 1;
    }
    (first <= last).then_some((first, last))
}

/// Cells of a `FeatureHeatmap` covered by `bbox`, for callers that need the mask.
pub fn covered_cells(bbox: &Box2D, image_size: (u32, u32), stride: u32) -> Vec<(usize, usize)> {
    let (hf, wf) = ((image_size.1 / stride) as usize, (image_size.0 / stride) as usize);
    let s = stride as f64;
    match (cell_span(bbox.min.y, bbox.max.y, s, hf), cell_span(bbox.min.x, bbox.max.x, s, wf)) {
        (Some((r0, r1)), Some((c0, c1))) => (r0..=r1)
            .flat_map(|r| (c0..=c1).map(move |c| (r, c)))
            .collect(),
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3D;
    use crate::radar::PreliminaryDetection;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Vector2, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn det(bbox: Box2D, depth: f64) -> PreliminaryDetection {
        PreliminaryDetection {
            class_id: 0,
            score: 1.0,
            bbox2d: bbox,
            projected_center: bbox.center(),
            depth,
            log_sigma: 0.0,
            box3d: Box3D::new(Vector3::new(0.0, depth, 0.0), Vector3::repeat(1.0), 0.0, Vector2::zeros()),
            attribute: 0,
        }
    }

    fn cluster_of(points: Vec<RadarPoint>) -> Cluster {
        Cluster {
            detection: det(Box2D::from_coords(0.0, 0.0, 8.0, 8.0), 10.0),
            member_indices: (0..points.len()).collect(),
            members: points,
        }
    }

    fn rp(x: f64, y: f64, vx: f64, vy: f64) -> RadarPoint {
        RadarPoint::new(Vector3::new(x, y, 0.0), Vector2::new(vx, vy), 0.0)
    }

    fn unit_cfg(variant: HandcraftedVariant) -> HandcraftedConfig {
        HandcraftedConfig {
            variant,
            position_norm: 1.0,
            velocity_norm: 1.0,
        }
    }

    #[test]
    fn slope_examples() {
        let cfg = unit_cfg(HandcraftedVariant::MeanOrt);
        let c = cluster_of(vec![rp(0.0, 0.0, 0.0, 0.0), rp(1.0, 1.0, 0.0, 0.0), rp(2.0, 2.0, 0.0, 0.0)]);
        assert_abs_diff_eq!(cluster_slope(&c, &cfg).unwrap(), 1.0, epsilon = 1e-15);
        let c = cluster_of(vec![rp(0.0, 0.0, 0.0, 0.0), rp(1.0, 2.0, 0.0, 0.0)]);
        assert_abs_diff_eq!(cluster_slope(&c, &cfg).unwrap(), 2.0, epsilon = 1e-15);
        let c = cluster_of(vec![rp(0.0, 0.0, 0.0, 0.0), rp(0.0, 1.0, 0.0, 0.0)]);
        assert_eq!(cluster_slope(&c, &cfg), Err(FeatureError::DegenerateLine));
    }

    #[test]
    fn orientation_conventions() {
        assert_abs_diff_eq!(slope_to_orientation(LineFit::Slope(1.0)), PI / 4.0, epsilon = 1e-15);
        assert_eq!(slope_to_orientation(fit_line(&[(0.0, 0.0), (0.0, 1.0)])), FRAC_PI_2);
        assert_eq!(slope_to_orientation(fit_line(&[(3.0, 4.0)])), 0.0);
        assert_eq!(slope_to_orientation(fit_line(&[(3.0, 4.0), (3.0, 4.0)])), 0.0);
    }

    #[test]
    fn single_point_features() {
        let c = cluster_of(vec![rp(6.0, 12.0, 2.0, -4.0)]);
        let f = extract_handcrafted(&c, &HandcraftedConfig::default()).unwrap();
        assert_eq!(f.len(), 13);
        let expected = [0.1, 0.2, 0.1, -0.2];
        for block in 0..3 {
            for ch in 0..4 {
                assert_abs_diff_eq!(f.0[block * 4 + ch], expected[ch], epsilon = 1e-15);
            }
        }
        assert_eq!(f.0[12], 0.0);
    }

    #[test]
    fn symmetric_cluster_has_zero_mean() {
        let c = cluster_of(vec![rp(3.0, -2.0, 1.0, 5.0), rp(-3.0, 2.0, -1.0, -5.0)]);
        let f = extract_handcrafted(&c, &HandcraftedConfig::default()).unwrap();
        for v in &f.0[8..12] {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn empty_cluster_is_an_error() {
        let c = cluster_of(vec![]);
        assert_eq!(extract_handcrafted(&c, &HandcraftedConfig::default()), Err(FeatureError::EmptyCluster));
    }

    #[test]
    fn variant_lengths() {
        let c = cluster_of(vec![rp(1.0, 2.0, 0.0, 0.0), rp(2.0, 5.0, 1.0, 0.0), rp(4.0, 1.0, 0.5, 0.5)]);
        for (v, n) in [
            (HandcraftedVariant::Mean, 12),
            (HandcraftedVariant::MeanOrt, 13),
            (HandcraftedVariant::MedianOrt, 13),
            (HandcraftedVariant::Complete, 21),
        ] {
            assert_eq!(extract_handcrafted(&c, &unit_cfg(v)).unwrap().len(), n);
        }
        let complete = extract_handcrafted(&c, &unit_cfg(HandcraftedVariant::Complete)).unwrap();
        // Medians of (1,2,4), (1,2,5), (0,0.5,1), (0,0,0.5).
        assert_eq!(&complete.0[12..16], &[2.0, 2.0, 0.5, 0.0]);
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<RadarPoint> = (0..9)
            .map(|_| rp(rng.gen_range(-30.0..30.0), rng.gen_range(0.0..60.0), rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0)))
            .collect();
        let c = cluster_of(pts);
        let base = extract_handcrafted(&c, &HandcraftedConfig::default()).unwrap();
        let doubled = HandcraftedConfig {
            position_norm: 2.0 * DEFAULT_POSITION_NORM,
            ..Default::default()
        };
        let f = extract_handcrafted(&c, &doubled).unwrap();
        for block in 0..3 {
            for ch in 0..2 {
                let i = block * 4 + ch;
                assert_eq!(f.0[i], base.0[i] / 2.0);
            }
        }
        assert_abs_diff_eq!(f.0[12], base.0[12], epsilon = 1e-12);
    }

    fn two_boxes() -> Vec<(Cluster, FeatureVector)> {
        let mut a = cluster_of(vec![]);
        a.detection = det(Box2D::from_coords(0.0, 0.0, 20.0, 20.0), 20.0);
        let mut b = cluster_of(vec![]);
        b.detection = det(Box2D::from_coords(10.0, 10.0, 32.0, 24.0), 10.0);
        vec![(a, FeatureVector(vec![1.0, 2.0])), (b, FeatureVector(vec![3.0, 4.0]))]
    }

    #[test]
    fn full_image_box_fills_heatmap() {
        let mut c = cluster_of(vec![]);
        c.detection.bbox2d = Box2D::from_coords(0.0, 0.0, 32.0, 16.0);
        let fv = FeatureVector(vec![0.5, -1.0, 2.0]);
        let map = rasterize_heatmap(&[(c, fv.clone())], (32, 16), 4).unwrap();
        assert_eq!((map.channels, map.height, map.width), (3, 4, 8));
        for ch in 0..3 {
            for r in 0..4 {
                for col in 0..8 {
                    assert_eq!(map.get(ch, r, col), fv.0[ch]);
                }
            }
        }
        let empty = rasterize_heatmap(&[], (32, 16), 4).unwrap();
        assert!(empty.values.is_empty() && empty.height == 4 && empty.width == 8);
    }

    #[test]
    fn overlap_nearest_wins_painter_oracle() {
        let items = two_boxes();
        let map = rasterize_heatmap(&items, (32, 32), 4).unwrap();
        // Painter's algorithm: paint far to near, per pixel, using the same
        // cell-center rule.
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| items[b].0.detection.depth.total_cmp(&items[a].0.detection.depth));
        let mut oracle = vec![[0.0f64; 2]; 64];
        for k in order {
            let bb = items[k].0.detection.bbox2d;
            for r in 0..8 {
                for c in 0..8 {
                    let (u, v) = ((c as f64 + 0.5) * 4.0, (r as f64 + 0.5) * 4.0);
                    if u >= bb.min.x && u <= bb.max.x && v >= bb.min.y && v <= bb.max.y {
                        oracle[r * 8 + c] = [items[k].1 .0[0], items[k].1 .0[1]];
                    }
                }
            }
        }
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!([map.get(0, r, c), map.get(1, r, c)], oracle[r * 8 + c], "cell {r},{c}");
            }
        }
        // Pixel (3,3) has center (14,14): inside both, nearer (depth 10) wins.
        assert_eq!(map.get(0, 3, 3), 3.0);
    }

    #[test]
    fn rasterize_errors() {
        let mut items = two_boxes();
        items[1].1 = FeatureVector(vec![1.0]);
        assert_eq!(rasterize_heatmap(&items, (32, 32), 4), Err(FeatureError::MixedChannelCounts(2, 1)));
        assert!(matches!(rasterize_heatmap(&[], (30, 32), 4), Err(FeatureError::InvalidImageSize { .. })));
    }

    #[test]
    fn cell_span_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5000 {
            let a = rng.gen_range(-10.0..120.0f64);
            let b = a + rng.gen_range(0.0..60.0);
            // Snap some endpoints exactly onto cell centers.
            let (lo, hi) = if rng.gen_bool(0.3) { ((a / 4.0).round() * 4.0 + 2.0, (b / 4.0).round() * 4.0 + 2.0) } else { (a, b) };
            let expect: Vec<usize> = (0..25).filter(|&i| { let c = (i as f64 + 0.5) * 4.0; c >= lo && c <= hi }).collect();
            let got: Vec<usize> = match cell_span(lo, hi, 4.0, 25) { Some((f, l)) => (f..=l).collect(), None => vec![] };
            assert_eq!(got, expect, "{lo} {hi}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn arb_points(max: usize) -> impl Strategy<Value = Vec<RadarPoint>> {
            proptest::collection::vec(
                (-60.0..60.0f64, 0.0..60.0f64, -20.0..20.0f64, -20.0..20.0f64)
                    .prop_map(|(x, y, vx, vy)| rp(x, y, vx, vy)),
                1..max,
            )
        }

        proptest! {
            #[test]
            fn permutation_invariant_and_ordered(pts in arb_points(40), seed in any::<u64>()) {
                let cfg = HandcraftedConfig { variant: HandcraftedVariant::Complete, ..Default::default() };
                let f = extract_handcrafted(&cluster_of(pts.clone()), &cfg).unwrap();
                let mut shuffled = pts.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for i in (1..shuffled.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    shuffled.swap(i, j);
                }
                let g = extract_handcrafted(&cluster_of(shuffled), &cfg).unwrap();
                prop_assert_eq!(&f, &g);
                for ch in 0..4 {
                    let (max, min, mean, median) = (f.0[ch], f.0[4 + ch], f.0[8 + ch], f.0[12 + ch]);
                    prop_assert!(min <= mean && mean <= max);
                    prop_assert!(min <= median && median <= max);
                    prop_assert!(f.0[16 + ch] >= 0.0);
                }
            }

            #[test]
            fn rotation_shifts_orientation(
                ts in proptest::collection::vec(-1.0..1.0f64, 2..20),
                base in -1.2..1.2f64,
                phi in -0.3..0.3f64,
            ) {
                // Collinear points along a line at angle `base`, rotated by phi
                // about their centroid.
                let (s0, c0) = base.sin_cos();
                let line: Vec<(f64, f64)> = ts.iter().map(|&t| (5.0 + t * c0, 7.0 + t * s0)).collect();
                let spread = ts.iter().cloned().fold(f64::MIN, f64::max) - ts.iter().cloned().fold(f64::MAX, f64::min);
                prop_assume!(spread > 0.1);
                let n = line.len() as f64;
                let cx = line.iter().map(|p| p.0).sum::<f64>() / n;
                let cy = line.iter().map(|p| p.1).sum::<f64>() / n;
                let (s, c) = phi.sin_cos();
                let rotated: Vec<(f64, f64)> = line.iter().map(|&(x, y)| {
                    let (dx, dy) = (x - cx, y - cy);
                    (cx + c * dx - s * dy, cy + s * dx + c * dy)
                }).collect();
                let a = slope_to_orientation(fit_line(&line));
                let b = slope_to_orientation(fit_line(&rotated));
                prop_assume!(b.abs() < 1.5);
                let mut d = b - a - phi;
                d = (d + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
                prop_assert!(d.abs() < 1e-9, "{a} {b} {phi}");
            }
        }
    }
}
