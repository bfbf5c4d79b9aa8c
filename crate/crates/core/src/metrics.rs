//! nuScenes-style detection metrics: center-distance matching, AP, the five
//! true-positive errors, and NDS.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decoder::DetectionBox3D;
use crate::geometry::{aligned_iou3d, normalize_angle, Box3D};

/// The ten nuScenes detection classes; class ids index this list.
pub const NUSCENES_CLASSES: [&str; 10] = [
    "car",
    "truck",
    "bus",
    "trailer",
    "construction_vehicle",
    "pedestrian",
    "motorcycle",
    "bicycle",
    "traffic_cone",
    "barrier",
];

/// Points on the recall axis used for AP interpolation.
const RECALL_SAMPLES: usize = 101;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no ground truth boxes to evaluate against")]
    EmptyGroundTruth,
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub box3d: Box3D,
    pub class_id: usize,
    #[serde(default)]
    pub attribute: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub distance_thresholds: Vec<f64>,
    pub min_recall: f64,
    pub min_precision: f64,
    pub tp_threshold: f64,
    /// Classes to evaluate; empty means every class present in the ground truth.
    pub classes: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            distance_thresholds: vec![0.5, 1.0, 2.0, 4.0],
            min_recall: 0.1,
            min_precision: 0.1,
            tp_threshold: 2.0,
            classes: Vec::new(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let t = &self.distance_thresholds;
        if t.is_empty() || t[0] <= 0.0 || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MetricsError::InvalidConfig(
                "distance thresholds must be positive and ascending".into(),
            ));
        }
        if !(self.tp_threshold > 0.0) {
            return Err(MetricsError::InvalidConfig("tp_threshold must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.min_recall) || !(0.0..1.0).contains(&self.min_precision) {
            return Err(MetricsError::InvalidConfig(
                "min_recall and min_precision must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

pub fn bev_distance(a: &Box3D, b: &Box3D) -> f64 {
    (a.center.x - b.center.x).hypot(a.center.y - b.center.y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub det: usize,
    pub gt: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    /// In processing order (score descending).
    pub pairs: Vec<MatchPair>,
    pub unmatched_dets: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Detection indices by score descending, ties by index.
fn score_order(dets: &[DetectionBox3D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy matching within one frame: in score order, each detection takes
/// the nearest unmatched ground truth of its class within `threshold` (BEV
/// center distance, inclusive). Equidistant candidates go to the lower index.
pub fn match_detections(dets: &[DetectionBox3D], gts: &[GroundTruthBox], threshold: f64) -> Matching {
    let mut taken = vec![false; gts.len()];
    let mut out = Matching::default();
    for d in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class_id != dets[d].class_id {
                continue;
            }
            let dist = bev_distance(&dets[d].box3d, &gt.box3d);
            if dist <= threshold && best.is_none_or(|(_, b)| dist < b) {
                best = Some((g, dist));
            }
        }
        match best {
            Some((g, distance)) => {
                taken[g] = true;
                out.pairs.push(MatchPair { det: d, gt: g, distance });
            }
            None => out.unmatched_dets.push(d),
        }
    }
    out.unmatched_gts = (0..gts.len()).filter(|&g| !taken[g]).collect();
    out
}

/// `numpy.interp(x, xp, fp, right=0)` for nondecreasing `xp`.
fn interp(x: f64, xp: &[f64], fp: &[f64]) -> f64 {
    let n = xp.len();
    if x < xp[0] {
        return fp[0];
    }
    if x == xp[n - 1] {
        return fp[n - 1];
    }
    if x > xp[n - 1] {
        return 0.0;
    }
    // Largest j with xp[j] <= x.
    let j = xp.partition_point(|v| *v <= x) - 1;
    if xp[j] == x {
        return fp[j];
    }
    let slope = (fp[j + 1] - fp[j]) / (xp[j + 1] - xp[j]);
    slope * (x - xp[j]) + fp[j]
}

/// Average precision from true/false positive flags in score order.
///
/// Precision is interpolated onto 101 evenly spaced recall values; points
/// below `min_recall` are dropped, `min_precision` is subtracted and clipped
/// at zero, and the mean is rescaled to `[0, 1]`.
pub fn average_precision(tp_flags: &[bool], num_gt: usize, min_recall: f64, min_precision: f64) -> f64 {
    if num_gt == 0 || tp_flags.is_empty() {
        return 0.0;
    }
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    for &hit in tp_flags {
        if hit {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        precision.push(tp / (tp + fp));
        recall.push(tp / num_gt as f64);
    }
    let step = 1.0 / (RECALL_SAMPLES - 1) as f64;
    let first = (100.0 * min_recall).round() as usize + 1;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in first..RECALL_SAMPLES {
        let r = if i == RECALL_SAMPLES - 1 { 1.0 } else { i as f64 * step };
        sum += (interp(r, &recall, &precision) - min_precision).max(0.0);
        count += 1;
    }
    if count == 0 {
        return 0.0;
    }
    // Rounding can overshoot 1 by an ulp or two for a perfect curve.
    (sum / count as f64 / (1.0 - min_precision)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpErrors {
    pub ate: f64,
    pub ase: f64,
    /// Radians in `[0, pi]`.
    pub aoe: f64,
    pub ave: f64,
    pub aae: f64,
}

impl TpErrors {
    pub const WORST: TpErrors = TpErrors {
        ate: 1.0,
        ase: 1.0,
        aoe: 1.0,
        ave: 1.0,
        aae: 1.0,
    };

    pub fn as_array(&self) -> [f64; 5] {
        [self.ate, self.ase, self.aoe, self.ave, self.aae]
    }
}

pub fn yaw_error(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

/// Per-pair error terms for one matched detection.
pub fn pair_errors(det: &DetectionBox3D, gt: &GroundTruthBox) -> TpErrors {
    TpErrors {
        ate: bev_distance(&det.box3d, &gt.box3d),
        ase: 1.0 - aligned_iou3d(&det.box3d.dims, &gt.box3d.dims),
        aoe: yaw_error(det.box3d.yaw, gt.box3d.yaw),
        ave: (det.box3d.velocity - gt.box3d.velocity).norm(),
        aae: if det.attribute == gt.attribute { 0.0 } else { 1.0 },
    }
}

/// Mean error terms over matched pairs; every term is 1 when there are none.
pub fn tp_errors(pairs: &[(&DetectionBox3D, &GroundTruthBox)]) -> TpErrors {
    if pairs.is_empty() {
        return TpErrors::WORST;
    }
    let mut acc = [0.0; 5];
    for (d, g) in pairs {
        for (a, e) in acc.iter_mut().zip(pair_errors(d, g).as_array()) {
            *a += e;
        }
    }
    let n = pairs.len() as f64;
    TpErrors {
        ate: acc[0] / n,
        ase: acc[1] / n,
        aoe: acc[2] / n,
        ave: acc[3] / n,
        aae: acc[4] / n,
    }
}

/// Detection score: `(5 mAP + sum(1 - min(1, mTP))) / 10`. Orientation error
/// enters in radians.
pub fn nds(map: f64, mean_tp: &TpErrors) -> f64 {
    let tp_sum: f64 = mean_tp.as_array().iter().map(|e| 1.0 - e.min(1.0)).sum();
    0.1 * (5.0 * map + tp_sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    /// One AP per distance threshold.
    pub ap_per_threshold: Vec<f64>,
    pub ap: f64,
    pub tp: TpErrors,
    pub num_gt: usize,
    pub num_dets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub classes: Vec<ClassMetrics>,
    pub map: f64,
    pub mean_tp: TpErrors,
    pub nds: f64,
}

/// Evaluates detections against ground truth, both keyed by frame id.
/// Detections in frames without ground truth count as false positives.
pub fn evaluate(
    dets: &BTreeMap<u64, Vec<DetectionBox3D>>,
    gts: &BTreeMap<u64, Vec<GroundTruthBox>>,
    cfg: &EvalConfig,
) -> Result<EvalResult, MetricsError> {
    cfg.validate()?;
    let total_gt: usize = gts.values().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let classes: Vec<usize> = if cfg.classes.is_empty() {
        let mut c: Vec<usize> = gts.values().flatten().map(|g| g.class_id).collect();
        c.sort_unstable();
        c.dedup();
        c
    } else {
        cfg.classes.clone()
    };
    let empty_gt: Vec<GroundTruthBox> = Vec::new();
    let empty_det: Vec<DetectionBox3D> = Vec::new();
    let frame_ids: Vec<u64> = {
        let mut ids: Vec<u64> = dets.keys().chain(gts.keys()).copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };

    // Per threshold: (score, frame, det index, class, hit) for every detection.
    let mut flags_per_threshold: Vec<Vec<(f64, u64, usize, usize, bool)>> = Vec::new();
    for &th in &cfg.distance_thresholds {
        let mut flags = Vec::new();
        for &f in &frame_ids {
            let fd = dets.get(&f).unwrap_or(&empty_det);
            let fg = gts.get(&f).unwrap_or(&empty_gt);
            let m = match_detections(fd, fg, th);
            let mut hit = vec![false; fd.len()];
            for p in &m.pairs {
                hit[p.det] = true;
            }
            for (i, d) in fd.iter().enumerate() {
                flags.push((d.score, f, i, d.class_id, hit[i]));
            }
        }
        flags.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        flags_per_threshold.push(flags);
    }

    let mut tp_pairs: BTreeMap<usize, Vec<(&DetectionBox3D, &GroundTruthBox)>> = BTreeMap::new();
    for &f in &frame_ids {
        let fd = dets.get(&f).unwrap_or(&empty_det);
        let fg = gts.get(&f).unwrap_or(&empty_gt);
        for p in match_detections(fd, fg, cfg.tp_threshold).pairs {
            tp_pairs.entry(fg[p.gt].class_id).or_default().push((&fd[p.det], &fg[p.gt]));
        }
    }

    let mut per_class = Vec::with_capacity(classes.len());
    for &c in &classes {
        let num_gt = gts.values().flatten().filter(|g| g.class_id == c).count();
        let num_dets = dets.values().flatten().filter(|d| d.class_id == c).count();
        let ap_per_threshold: Vec<f64> = flags_per_threshold
            .iter()
            .map(|flags| {
                let hits: Vec<bool> = flags.iter().filter(|f| f.3 == c).map(|f| f.4).collect();
                average_precision(&hits, num_gt, cfg.min_recall, cfg.min_precision)
            })
            .collect();
        let ap = ap_per_threshold.iter().sum::<f64>() / ap_per_threshold.len() as f64;
        let tp = if num_gt == 0 {
            TpErrors::WORST
        } else {
            tp_errors(tp_pairs.get(&c).map_or(&[][..], Vec::as_slice))
        };
        per_class.push(ClassMetrics {
            class_id: c,
            ap_per_threshold,
            ap,
            tp,
            num_gt,
            num_dets,
        });
    }

    let n = per_class.len().max(1) as f64;
    let map = per_class.iter().map(|m| m.ap).sum::<f64>() / n;
    let mut mean = [0.0; 5];
    for m in &per_class {
        for (a, e) in mean.iter_mut().zip(m.tp.as_array()) {
            *a += e;
        }
    }
    let mean_tp = TpErrors {
        ate: mean[0] / n,
        ase: mean[1] / n,
        aoe: mean[2] / n,
        ave: mean[3] / n,
        aae: mean[4] / n,
    };
    Ok(EvalResult {
        nds: nds(map, &mean_tp),
        classes: per_class,
        map,
        mean_tp,
    })
}

fn class_name(id: usize) -> String {
    NUSCENES_CLASSES
        .get(id)
        .map_or_else(|| format!("class_{id}"), |s| s.to_string())
}

/// Human-readable summary table.
pub fn format_report(result: &EvalResult, cfg: &EvalConfig) -> String {
    let mut s = String::new();
    let t = &result.mean_tp;
    let _ = writeln!(s, "NDS   {:.4}", result.nds);
    let _ = writeln!(s, "mAP   {:.4}", result.map);
    let _ = writeln!(s, "mATE  {:.4}", t.ate);
    let _ = writeln!(s, "mASE  {:.4}", t.ase);
    let _ = writeln!(s, "mAOE  {:.4}", t.aoe);
    let _ = writeln!(s, "mAVE  {:.4}", t.ave);
    let _ = writeln!(s, "mAAE  {:.4}", t.aae);
    let _ = writeln!(s);
    let mut header = format!("{:<22}{:>6}{:>6}", "class", "gt", "dets");
    for th in &cfg.distance_thresholds {
        header.push_str(&format!("{:>9}", format!("AP@{th}")));
    }
    header.push_str(&format!("{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}", "AP", "ATE", "ASE", "AOE", "AVE", "AAE"));
    let _ = writeln!(s, "{header}");
    for m in &result.classes {
        let mut line = format!("{:<22}{:>6}{:>6}", class_name(m.class_id), m.num_gt, m.num_dets);
        for ap in &m.ap_per_threshold {
            line.push_str(&format!("{ap:>9.4}"));
        }
        line.push_str(&format!("{:>8.4}", m.ap));
        for e in m.tp.as_array() {
            line.push_str(&format!("{e:>8.4}"));
        }
        let _ = writeln!(s, "{line}");
    }
    s
}

/// `key=value` lines with full precision, one metric per line.
pub fn format_kv(result: &EvalResult) -> String {
    let mut s = String::new();
    let t = &result.mean_tp;
    for (k, v) in [
        ("NDS", result.nds),
        ("mAP", result.map),
        ("mATE", t.ate),
        ("mASE", t.ase),
        ("mAOE", t.aoe),
        ("mAVE", t.ave),
        ("mAAE", t.aae),
    ] {
        let _ = writeln!(s, "{k}={v}");
    }
    for m in &result.classes {
        let name = class_name(m.class_id);
        let _ = writeln!(s, "AP.{name}={}", m.ap);
        for (k, v) in ["ATE", "ASE", "AOE", "AVE", "AAE"].iter().zip(m.tp.as_array()) {
            let _ = writeln!(s, "{k}.{name}={v}");
        }
    }
    s
}
