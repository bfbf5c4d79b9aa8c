//! Peak extraction and box decoding from head outputs.
//!
//! Head outputs live on the feature grid (image size divided by the stride).
//! Regression values are class agnostic: one cell holds the offset, depth
//! code, depth uncertainty, dimensions, orientation bins, velocity, and
//! attribute for whatever object peaks there.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, unproject_center, Box3D, CameraModel};
use crate::losses::{bin_covers, NUM_BINS, ORIENTATION_BIN_CENTERS};
use crate::radar::PreliminaryDetection;

pub const DEFAULT_TOP_K: usize = 100;
pub const MIN_DECODED_DEPTH: f64 = 1e-3;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum DecodeError {
    #[error("head output shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("head output entry out of range: {0}")]
    OutOfRange(String),
}

/// Depth from the inverse-sigmoid code: `1 / sigmoid(s) - 1`, which equals
/// `exp(-s)`.
pub fn decode_depth(d_sig: f64) -> f64 {
    (-d_sig).exp().max(MIN_DECODED_DEPTH)
}

pub fn encode_depth(depth: f64) -> f64 {
    -depth.ln()
}

/// `(p_dep, p_3d)` with `p_dep = exp(-sigma^2)`.
pub fn confidence(p_k: f64, log_sigma: f64) -> (f64, f64) {
    let sigma = log_sigma.exp();
    let p_dep = (-sigma * sigma).exp();
    (p_dep, p_dep * p_k)
}

/// Yaw from the most confident bin and its `(cos, sin)` residual.
pub fn decode_orientation(confidences: &[f64; NUM_BINS], residuals: &[[f64; 2]; NUM_BINS]) -> f64 {
    let mut best = 0;
    for i in 1..NUM_BINS {
        if confidences[i] > confidences[best] {
            best = i;
        }
    }
    let [c, s] = residuals[best];
    normalize_angle(ORIENTATION_BIN_CENTERS[best] + s.atan2(c))
}

/// Bin membership flags and `(cos, sin)` residuals for every bin.
pub fn encode_orientation(yaw: f64) -> ([f64; NUM_BINS], [[f64; 2]; NUM_BINS]) {
    let conf = ORIENTATION_BIN_CENTERS.map(|c| if bin_covers(yaw, c) { 1.0 } else { 0.0 });
    let res = ORIENTATION_BIN_CENTERS.map(|c| [(yaw - c).cos(), (yaw - c).sin()]);
    (conf, res)
}

/// Class heatmaps, `C x H x W` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHeatmap {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ClassHeatmap {
    pub fn zeros(num_classes: usize, height: usize, width: usize) -> Self {
        Self {
            num_classes,
            height,
            width,
            values: vec![0.0; num_classes * height * width],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.height + row) * self.width + col
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(c, row, col)]
    }

    fn is_local_max(&self, c: usize, row: usize, col: usize) -> bool {
        let v = self.get(c, row, col);
        for r in row.saturating_sub(1)..=(row + 1).min(self.height - 1) {
            for q in col.saturating_sub(1)..=(col + 1).min(self.width - 1) {
                if self.get(c, r, q) > v {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub class_id: usize,
    /// Heatmap peak value `p_k`.
    pub score: f64,
    pub row: usize,
    pub col: usize,
}

/// The `k` strongest positive peaks across all classes. With `suppress`, a
/// pixel qualifies only if no 3x3 neighbor in its channel is larger. Ties go
/// to the lower (channel, row, column).
pub fn topk_peaks(heatmap: &ClassHeatmap, k: usize, suppress: bool) -> Vec<Candidate> {
    let mut peaks = Vec::new();
    for c in 0..heatmap.num_classes {
        for row in 0..heatmap.height {
            for col in 0..heatmap.width {
                let v = heatmap.get(c, row, col);
                if v > 0.0 && (!suppress || heatmap.is_local_max(c, row, col)) {
                    peaks.push(Candidate {
                        class_id: c,
                        score: v,
                        row,
                        col,
                    });
                }
            }
        }
    }
    // Scan order already follows (channel, row, column); a stable sort keeps it for ties.
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score));
    peaks.truncate(k);
    peaks
}

/// Regression head values at one feature cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellRegression {
    /// Sub-cell offset of the projected center, in cells.
    pub offset: [f64; 2],
    pub d_sig: f64,
    pub log_sigma: f64,
    /// Width, length, height.
    pub dims: [f64; 3],
    pub rot_conf: [f64; NUM_BINS],
    pub rot_res: [[f64; 2]; NUM_BINS],
    pub velocity: [f64; 2],
    #[serde(default)]
    pub attribute: u32,
}

/// Dense head outputs on the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaps {
    pub stride: u32,
    pub heatmap: ClassHeatmap,
    /// `H x W` row-major.
    pub regression: Vec<CellRegression>,
}

impl HeadMaps {
    pub fn zeros(stride: u32, num_classes: usize, height: usize, width: usize) -> Self {
        Self {
            stride,
            heatmap: ClassHeatmap::zeros(num_classes, height, width),
            regression: vec![CellRegression::default(); height * width],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> &CellRegression {
        &self.regression[row * self.heatmap.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapPeak {
    pub class_id: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseCell {
    pub row: usize,
    pub col: usize,
    #[serde(flatten)]
    pub values: CellRegression,
}

/// File form of head outputs: only nonzero heatmap pixels and populated
/// regression cells are listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOutputs {
    pub stride: u32,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub peaks: Vec<HeatmapPeak>,
    pub cells: Vec<SparseCell>,
}

impl HeadOutputs {
    pub fn to_dense(&self) -> Result<HeadMaps, DecodeError> {
        if self.stride == 0 || self.height == 0 || self.width == 0 {
            return Err(DecodeError::ShapeMismatch(format!(
                "stride {} with {}x{} grid",
                self.stride, self.height, self.width
            )));
        }
        let mut maps = HeadMaps::zeros(self.stride, self.num_classes, self.height, self.width);
        for p in &self.peaks {
            if p.class_id >= self.num_classes || p.row >= self.height || p.col >= self.width {
                return Err(DecodeError::OutOfRange(format!(
                    "peak class {} at ({}, {})",
                    p.class_id, p.row, p.col
                )));
            }
            if !(0.0..=1.0).contains(&p.value) {
                return Err(DecodeError::OutOfRange(format!("peak value {}", p.value)));
            }
            let i = maps.heatmap.index(p.class_id, p.row, p.col);
            maps.heatmap.values[i] = p.value;
        }
        for c in &self.cells {
            if c.row >= self.height || c.col >= self.width {
                return Err(DecodeError::OutOfRange(format!("cell at ({}, {})", c.row, c.col)));
            }
            maps.regression[c.row * self.width + c.col] = c.values;
        }
        Ok(maps)
    }

    pub fn from_dense(maps: &HeadMaps) -> Self {
        let h = &maps.heatmap;
        let mut peaks = Vec::new();
        for c in 0..h.num_classes {
            for row in 0..h.height {
                for col in 0..h.width {
                    let value = h.get(c, row, col);
                    if value != 0.0 {
                        peaks.push(HeatmapPeak {
                            class_id: c,
                            row,
                            col,
                            value,
                        });
                    }
                }
            }
        }
        let cells = maps
            .regression
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != CellRegression::default())
            .map(|(i, v)| SparseCell {
                row: i / h.width,
                col: i % h.width,
                values: *v,
            })
            .collect();
        Self {
            stride: maps.stride,
            height: h.height,
            width: h.width,
            num_classes: h.num_classes,
            peaks,
            cells,
        }
    }
}

/// Writes preliminary detections into head maps at their projected centers.
/// Centers outside the image land on the nearest border cell with an offset
/// that reaches back to the true center. When two detections share a cell
/// the higher score keeps it.
pub fn encode_detections(
    detections: &[PreliminaryDetection],
    image_size: (u32, u32),
    stride: u32,
    num_classes: usize,
) -> Result<HeadMaps, DecodeError> {
    if stride == 0 || !image_size.0.is_multiple_of(stride) || !image_size.1.is_multiple_of(stride) {
        return Err(DecodeError::ShapeMismatch(format!(
            "image {}x{} is not divisible by stride {stride}",
            image_size.0, image_size.1
        )));
    }
    let (w, h) = ((image_size.0 / stride) as usize, (image_size.1 / stride) as usize);
    let mut maps = HeadMaps::zeros(stride, num_classes, h, w);
    let mut owner: Vec<Option<f64>> = vec![None; h * w];
    let r = stride as f64;
    for det in detections {
        if det.class_id >= num_classes {
            return Err(DecodeError::OutOfRange(format!("class {}", det.class_id)));
        }
        let (gx, gy) = (det.projected_center.x / r, det.projected_center.y / r);
        let col = gx.floor().clamp(0.0, (w - 1) as f64) as usize;
        let row = gy.floor().clamp(0.0, (h - 1) as f64) as usize;
        let i = row * w + col;
        if owner[i].is_some_and(|s| s >= det.score) {
            continue;
        }
        if owner[i].is_some() {
            for c in 0..num_classes {
                let j = maps.heatmap.index(c, row, col);
                maps.heatmap.values[j] = 0.0;
            }
        }
        owner[i] = Some(det.score);
        let j = maps.heatmap.index(det.class_id, row, col);
        maps.heatmap.values[j] = det.score.clamp(0.0, 1.0);
        let (rot_conf, rot_res) = encode_orientation(det.box3d.yaw);
        let b = &det.box3d;
        maps.regression[i] = CellRegression {
            offset: [gx - col as f64, gy - row as f64],
            d_sig: encode_depth(det.depth),
            log_sigma: det.log_sigma,
            dims: [b.dims.x, b.dims.y, b.dims.z],
            rot_conf,
            rot_res,
            velocity: [b.velocity.x, b.velocity.y],
            attribute: det.attribute,
        };
    }
    Ok(maps)
}

/// Final detection with its confidence factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox3D {
    pub box3d: Box3D,
    pub class_id: usize,
    /// `p_3d`.
    pub score: f64,
    pub p_k: f64,
    pub p_dep: f64,
    pub attribute: u32,
}

/// Builds a box per candidate, keeps those with `p_3d >= threshold`, and
/// sorts by `p_3d` descending (stable).
pub fn decode_detections(
    candidates: &[Candidate],
    maps: &HeadMaps,
    camera: &CameraModel,
    threshold: f64,
) -> Vec<DetectionBox3D> {
    let r = maps.stride as f64;
    let mut out: Vec<DetectionBox3D> = candidates
        .iter()
        .filter_map(|cand| {
            let cell = maps.cell(cand.row, cand.col);
            let pixel = Vector2::new(
                (cand.col as f64 + cell.offset[0]) * r,
                (cand.row as f64 + cell.offset[1]) * r,
            );
            let depth = decode_depth(cell.d_sig);
            let center = unproject_center(camera, &pixel, depth);
            let yaw = decode_orientation(&cell.rot_conf, &cell.rot_res);
            let (p_dep, p_3d) = confidence(cand.score, cell.log_sigma);
            (p_3d >= threshold).then(|| DetectionBox3D {
                box3d: Box3D::new(
                    center,
                    Vector3::from(cell.dims),
                    yaw,
                    Vector2::from(cell.velocity),
                ),
                class_id: cand.class_id,
                score: p_3d,
                p_k: cand.score,
                p_dep,
                attribute: cell.attribute,
            })
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}
