//! Training losses for the detection heads, with hand-derived gradients with
//! respect to the predicted quantities.
//!
//! Every loss averages over the object count `M` and refuses an empty batch.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::geometry::{giou2d, normalize_angle, Box2D};

pub const PROB_EPS: f64 = 1e-7;
pub const FOCAL_ALPHA: f64 = 2.0;
pub const FOCAL_BETA: f64 = 4.0;
pub const NUM_BINS: usize = 4;
pub const ORIENTATION_BIN_CENTERS: [f64; NUM_BINS] = [0.0, FRAC_PI_2, PI, -FRAC_PI_2];
/// A bin covers yaws within this angle of its center.
pub const BIN_HALF_WIDTH: f64 = FRAC_PI_2;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum LossError {
    #[error("batch has no objects")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("object {0} has no covering orientation bin")]
    NoCoveredBin(usize),
    #[error("object {0} has a degenerate 2D box")]
    DegenerateBox(usize),
    #[error("object {0} has non-positive depth")]
    InvalidDepth(usize),
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_count(m: usize) -> Result<f64, LossError> {
    if m == 0 {
        Err(LossError::EmptyBatch)
    } else {
        Ok(m as f64)
    }
}

/// Predicted and target heatmaps (flattened `C x H x W`) with the object count.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapPair {
    pub predicted: Vec<f64>,
    pub target: Vec<f64>,
    pub num_objects: usize,
}

impl HeatmapPair {
    fn check(&self) -> Result<f64, LossError> {
        if self.predicted.len() != self.target.len() {
            return Err(LossError::ShapeMismatch(format!(
                "{} predicted vs {} target pixels",
                self.predicted.len(),
                self.target.len()
            )));
        }
        check_count(self.num_objects)
    }
}

/// Penalty-reduced pixelwise focal loss. Pixels with target exactly 1 are
/// positives.
pub fn focal_loss(pair: &HeatmapPair, alpha: f64, beta: f64) -> Result<f64, LossError> {
    let m = pair.check()?;
    let mut sum = 0.0;
    for (&p, &y) in pair.predicted.iter().zip(&pair.target) {
        let p = clamp_prob(p);
        sum += if y == 1.0 {
            -(1.0 - p).powf(alpha) * p.ln()
        } else {
            -(1.0 - y).powf(beta) * p.powf(alpha) * (1.0 - p).ln()
        };
    }
    Ok(sum / m)
}

/// Gradient of [`focal_loss`] with respect to each predicted pixel; zero where
/// the prediction is clamped.
pub fn focal_loss_grad(pair: &HeatmapPair, alpha: f64, beta: f64) -> Result<Vec<f64>, LossError> {
    let m = pair.check()?;
    Ok(pair
        .predicted
        .iter()
        .zip(&pair.target)
        .map(|(&p, &y)| {
            if p != clamp_prob(p) {
                return 0.0;
            }
            let g = if y == 1.0 {
                alpha * (1.0 - p).powf(alpha - 1.0) * p.ln() - (1.0 - p).powf(alpha) / p
            } else {
                -(1.0 - y).powf(beta)
                    * (alpha * p.powf(alpha - 1.0) * (1.0 - p).ln() - p.powf(alpha) / (1.0 - p))
            };
            g / m
        })
        .collect())
}

/// Regression head values for one object.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectHeads {
    pub offset: [f64; 2],
    pub velocity: [f64; 2],
    /// Width, length, height.
    pub dims3d: [f64; 3],
    /// Projected corners relative to the projected center.
    pub corners: [[f64; 2]; 8],
    pub depth: f64,
    /// Left, top, right, bottom distances from the representative point.
    pub sides: [f64; 4],
}

/// Per-object predictions and targets. `log_sigma` is the predicted log
/// standard deviation of depth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressionBatch {
    pub predicted: Vec<ObjectHeads>,
    pub target: Vec<ObjectHeads>,
    pub log_sigma: Vec<f64>,
    pub truncated: Vec<bool>,
    pub representative: Vec<[f64; 2]>,
}

impl RegressionBatch {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    fn check(&self) -> Result<f64, LossError> {
        let m = self.target.len();
        for (name, n) in [
            ("predicted", self.predicted.len()),
            ("log_sigma", self.log_sigma.len()),
            ("truncated", self.truncated.len()),
            ("representative", self.representative.len()),
        ] {
            if n != m {
                return Err(LossError::ShapeMismatch(format!("{name} has {n} rows, targets {m}")));
            }
        }
        check_count(m)
    }
}

/// L1 for regular objects and `ln(1 + L1)` for truncated ones.
pub fn offset_loss(batch: &RegressionBatch) -> Result<f64, LossError> {
    let m = batch.check()?;
    let mut sum = 0.0;
    for k in 0..batch.len() {
        let l1 = l1_dist(&batch.predicted[k].offset, &batch.target[k].offset);
        sum += if batch.truncated[k] { l1.ln_1p() } else { l1 };
    }
    Ok(sum / m)
}

pub fn offset_loss_grad(batch: &RegressionBatch) -> Result<Vec<[f64; 2]>, LossError> {
    let m = batch.check()?;
    Ok((0..batch.len())
        .map(|k| {
            let (p, t) = (&batch.predicted[k].offset, &batch.target[k].offset);
            let scale = if batch.truncated[k] {
                1.0 / (1.0 + l1_dist(p, t))
            } else {
                1.0
            };
            [sign(p[0] - t[0]) * scale / m, sign(p[1] - t[1]) * scale / m]
        })
        .collect())
}

fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L1Kind {
    Velocity,
    Dims3d,
    Corners,
}

fn l1_values(h: &ObjectHeads, kind: L1Kind) -> Vec<f64> {
    match kind {
        L1Kind::Velocity => h.velocity.to_vec(),
        L1Kind::Dims3d => h.dims3d.to_vec(),
        L1Kind::Corners => h.corners.iter().flatten().copied().collect(),
    }
}

pub fn l1_regression_loss(kind: L1Kind, batch: &RegressionBatch) -> Result<f64, LossError> {
    let m = batch.check()?;
    let sum: f64 = batch
        .predicted
        .iter()
        .zip(&batch.target)
        .map(|(p, t)| l1_dist(&l1_values(p, kind), &l1_values(t, kind)))
        .sum();
    Ok(sum / m)
}

/// Gradient rows in the same flattening as the head (corners row-major).
pub fn l1_regression_loss_grad(kind: L1Kind, batch: &RegressionBatch) -> Result<Vec<Vec<f64>>, LossError> {
    let m = batch.check()?;
    Ok(batch
        .predicted
        .iter()
        .zip(&batch.target)
        .map(|(p, t)| {
            l1_values(p, kind)
                .iter()
                .zip(l1_values(t, kind))
                .map(|(a, b)| sign(a - b) / m)
                .collect()
        })
        .collect())
}

/// Uncertainty-attenuated L1: `|d - d_hat| / sigma^2 + ln sigma^2` with
/// `sigma^2 = exp(2 log_sigma)`. Negative values are possible.
pub fn depth_uncertainty_loss(batch: &RegressionBatch) -> Result<f64, LossError> {
    let m = batch.check()?;
    let mut sum = 0.0;
    for k in 0..batch.len() {
        if !(batch.target[k].depth > 0.0) {
            return Err(LossError::InvalidDepth(k));
        }
        let err = (batch.target[k].depth - batch.predicted[k].depth).abs();
        let ls = batch.log_sigma[k];
        sum += err * (-2.0 * ls).exp() + 2.0 * ls;
    }
    Ok(sum / m)
}

/// Returns `(d/d depth_hat, d/d log_sigma)` per object.
pub fn depth_uncertainty_loss_grad(batch: &RegressionBatch) -> Result<Vec<[f64; 2]>, LossError> {
    let m = batch.check()?;
    Ok((0..batch.len())
        .map(|k| {
            let diff = batch.predicted[k].depth - batch.target[k].depth;
            let inv_var = (-2.0 * batch.log_sigma[k]).exp();
            [sign(diff) * inv_var / m, (2.0 - 2.0 * diff.abs() * inv_var) / m]
        })
        .collect())
}

fn sides_box(point: &[f64; 2], sides: &[f64; 4]) -> Box2D {
    Box2D::from_coords(
        point[0] - sides[0],
        point[1] - sides[1],
        point[0] + sides[2],
        point[1] + sides[3],
    )
}

fn check_sides(k: usize, sides: &[f64; 4]) -> Result<(), LossError> {
    if sides.iter().all(|s| s.is_finite() && *s >= 0.0) {
        Ok(())
    } else {
        Err(LossError::DegenerateBox(k))
    }
}

/// Mean `1 - GIoU` between predicted and target boxes built from side
/// distances around each representative point.
pub fn dim2d_giou_loss(batch: &RegressionBatch) -> Result<f64, LossError> {
    let m = batch.check()?;
    let mut sum = 0.0;
    for k in 0..batch.len() {
        let (p, t) = (&batch.predicted[k].sides, &batch.target[k].sides);
        check_sides(k, p)?;
        check_sides(k, t)?;
        let rep = &batch.representative[k];
        let g = giou2d(&sides_box(rep, p), &sides_box(rep, t)).map_err(|_| LossError::DegenerateBox(k))?;
        sum += 1.0 - g;
    }
    Ok(sum / m)
}

/// Gradient of [`dim2d_giou_loss`] with respect to the predicted sides.
///
/// With `G = I/U - 1 + U/C`, each side moves one edge of the predicted box;
/// intersection and enclosure extents change only on the edge that is
/// currently binding.
pub fn dim2d_giou_loss_grad(batch: &RegressionBatch) -> Result<Vec<[f64; 4]>, LossError> {
    let m = batch.check()?;
    let mut out = Vec::with_capacity(batch.len());
    for k in 0..batch.len() {
        let (p, t) = (&batch.predicted[k].sides, &batch.target[k].sides);
        check_sides(k, p)?;
        check_sides(k, t)?;
        let rep = &batch.representative[k];
        let (a, b) = (sides_box(rep, p), sides_box(rep, t));
        let (pw, ph) = (a.width(), a.height());
        let iw = (a.max.x.min(b.max.x) - a.min.x.max(b.min.x)).max(0.0);
        let ih = (a.max.y.min(b.max.y) - a.min.y.max(b.min.y)).max(0.0);
        let cw = a.max.x.max(b.max.x) - a.min.x.min(b.min.x);
        let ch = a.max.y.max(b.max.y) - a.min.y.min(b.min.y);
        let inter = iw * ih;
        let union = a.area() + b.area() - inter;
        let encl = cw * ch;
        if !(encl > 0.0 && union > 0.0) {
            return Err(LossError::DegenerateBox(k));
        }
        // Per side: (d area, d iw, d ih, d cw, d ch).
        let low_x_binding = a.min.x > b.min.x;
        let high_x_binding = a.max.x < b.max.x;
        let low_y_binding = a.min.y > b.min.y;
        let high_y_binding = a.max.y < b.max.y;
        let overlap = iw > 0.0 && ih > 0.0;
        let partials = [
            (ph, low_x_binding as u8 as f64, 0.0, (!low_x_binding) as u8 as f64, 0.0),
            (pw, 0.0, low_y_binding as u8 as f64, 0.0, (!low_y_binding) as u8 as f64),
            (ph, high_x_binding as u8 as f64, 0.0, (!high_x_binding) as u8 as f64, 0.0),
            (pw, 0.0, high_y_binding as u8 as f64, 0.0, (!high_y_binding) as u8 as f64),
        ];
        let mut g = [0.0; 4];
        for (j, &(d_area, d_iw, d_ih, d_cw, d_ch)) in partials.iter().enumerate() {
            let d_inter = if overlap { d_iw * ih + d_ih * iw } else { 0.0 };
            let d_union = d_area - d_inter;
            let d_encl = d_cw * ch + d_ch * cw;
            let d_giou = (d_inter * union - inter * d_union) / (union * union)
                + (d_union * encl - union * d_encl) / (encl * encl);
            g[j] = -d_giou / m;
        }
        out.push(g);
    }
    Ok(out)
}

/// Whether bin centered at `center` covers `yaw`.
pub fn bin_covers(yaw: f64, center: f64) -> bool {
    normalize_angle(yaw - center).abs() <= BIN_HALF_WIDTH
}

/// Ground-truth orientation for one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationTarget {
    pub yaw: f64,
    pub centers: [f64; NUM_BINS],
    pub membership: [bool; NUM_BINS],
}

impl OrientationTarget {
    pub fn new(yaw: f64) -> Self {
        Self::with_centers(yaw, ORIENTATION_BIN_CENTERS)
    }

    pub fn with_centers(yaw: f64, centers: [f64; NUM_BINS]) -> Self {
        let membership = centers.map(|c| bin_covers(yaw, c));
        Self {
            yaw,
            centers,
            membership,
        }
    }

    pub fn covered_count(&self) -> usize {
        self.membership.iter().filter(|b| **b).count()
    }

    /// `(cos, sin)` of the yaw relative to bin `i`.
    pub fn residual(&self, i: usize) -> [f64; 2] {
        let d = self.yaw - self.centers[i];
        [d.cos(), d.sin()]
    }
}

/// Per-bin confidences and raw `(cos, sin)` residuals for one object.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OrientationPrediction {
    pub confidences: [f64; NUM_BINS],
    pub residuals: [[f64; 2]; NUM_BINS],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiBinLoss {
    pub classification: f64,
    pub residual: f64,
}

impl MultiBinLoss {
    pub fn total(&self) -> f64 {
        self.classification + self.residual
    }
}

fn check_multibin(preds: &[OrientationPrediction], targets: &[OrientationTarget]) -> Result<f64, LossError> {
    if preds.len() != targets.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} orientation predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let m = check_count(targets.len())?;
    if let Some(k) = targets.iter().position(|t| t.covered_count() == 0) {
        return Err(LossError::NoCoveredBin(k));
    }
    Ok(m)
}

fn bce(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Bin classification (mean BCE over all bins) and residual (mean L1 over
/// covered bins) losses.
pub fn multibin_loss(preds: &[OrientationPrediction], targets: &[OrientationTarget]) -> Result<MultiBinLoss, LossError> {
    let m = check_multibin(preds, targets)?;
    let (mut cls, mut res) = (0.0, 0.0);
    for (p, t) in preds.iter().zip(targets) {
        let mut c = 0.0;
        let mut r = 0.0;
        for i in 0..NUM_BINS {
            let b = if t.membership[i] { 1.0 } else { 0.0 };
            c += bce(p.confidences[i], b);
            if t.membership[i] {
                let [tc, ts] = t.residual(i);
                r += (p.residuals[i][0] - tc).abs() + (p.residuals[i][1] - ts).abs();
            }
        }
        cls += c / NUM_BINS as f64;
        res += r / t.covered_count() as f64;
    }
    Ok(MultiBinLoss {
        classification: cls / m,
        residual: res / m,
    })
}

/// Gradient of the summed rotation loss with respect to every prediction field.
pub fn multibin_loss_grad(
    preds: &[OrientationPrediction],
    targets: &[OrientationTarget],
) -> Result<Vec<OrientationPrediction>, LossError> {
    let m = check_multibin(preds, targets)?;
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let mut g = OrientationPrediction::default();
            let n = t.covered_count() as f64;
            for i in 0..NUM_BINS {
                let b = if t.membership[i] { 1.0 } else { 0.0 };
                let q = p.confidences[i];
                if q == clamp_prob(q) {
                    g.confidences[i] = (-b / q + (1.0 - b) / (1.0 - q)) / (NUM_BINS as f64 * m);
                }
                if t.membership[i] {
                    let [tc, ts] = t.residual(i);
                    g.residuals[i] = [
                        sign(p.residuals[i][0] - tc) / (n * m),
                        sign(p.residuals[i][1] - ts) / (n * m),
                    ];
                }
            }
            g
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub cls: f64,
    pub off: f64,
    pub vel: f64,
    pub dim3d: f64,
    pub rot: f64,
    pub dep: f64,
    pub dim2d: f64,
    pub corner: f64,
}

pub const DIM2D_WEIGHT: f64 = 0.1;
pub const CORNER_WEIGHT: f64 = 0.5;

pub fn total_loss(c: &LossComponents) -> f64 {
    c.cls + c.off + c.vel + c.dim3d + c.rot + c.dep + DIM2D_WEIGHT * c.dim2d + CORNER_WEIGHT * c.corner
}
