//! Per-frame inference: radar preprocessing, association, cluster features,
//! heatmap rasterization and box decoding.

use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{
    decode_detections, encode_detections, topk_peaks, DecodeError, HeadMaps, DEFAULT_TOP_K,
};
use crate::features::{
    extract_handcrafted, rasterize_heatmap, FeatureError, FeatureVector, HandcraftedConfig,
    DEFAULT_STRIDE,
};
use crate::kpconv::{extract_learned, KPNetworkConfig, NetworkVariant};
use crate::metrics::NUSCENES_CLASSES;
use crate::radar::{
    accumulate_sweeps, associate, range_filter, AssociationParams, Cluster, DEFAULT_MAX_RANGE,
    DEFAULT_MAX_SWEEPS, DEFAULT_MIN_RANGE,
};
use crate::scene::{ClusterSummary, FrameDetections, HeatmapSummary, SceneFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    Handcrafted,
    Learned,
    Hybrid,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Handcrafted => "handcrafted",
            FeatureMode::Learned => "learned",
            FeatureMode::Hybrid => "hybrid",
        }
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "handcrafted" => Ok(FeatureMode::Handcrafted),
            "learned" => Ok(FeatureMode::Learned),
            "hybrid" => Ok(FeatureMode::Hybrid),
            other => Err(format!("unknown feature mode `{other}`")),
        }
    }
}

#[derive(thiserror::Error, Debug)]
pub enum PipelineError {
    #[error("frame {frame_id}: {source}")]
    Features { frame_id: u64, source: FeatureError },
    #[error("frame {frame_id}: {source}")]
    Decode { frame_id: u64, source: DecodeError },
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub features: FeatureMode,
    pub handcrafted: HandcraftedConfig,
    /// Shared read-only by all workers.
    pub network: Arc<KPNetworkConfig>,
    pub max_sweeps: usize,
    pub min_range: f64,
    pub max_range: f64,
    pub association: AssociationParams,
    pub stride: u32,
    pub top_k: usize,
    pub score_threshold: f64,
}

impl PipelineConfig {
    pub fn new(features: FeatureMode, network: KPNetworkConfig) -> Self {
        Self {
            features,
            handcrafted: HandcraftedConfig::default(),
            network: Arc::new(network),
            max_sweeps: DEFAULT_MAX_SWEEPS,
            min_range: DEFAULT_MIN_RANGE,
            max_range: DEFAULT_MAX_RANGE,
            association: AssociationParams::default(),
            stride: DEFAULT_STRIDE,
            top_k: DEFAULT_TOP_K,
            score_threshold: 0.0,
        }
    }

    /// Large network seeded with `seed`.
    pub fn with_seed(features: FeatureMode, seed: u64) -> Self {
        Self::new(features, KPNetworkConfig::new(NetworkVariant::Large, seed))
    }

    pub fn feature_len(&self) -> usize {
        match self.features {
            FeatureMode::Handcrafted => self.handcrafted.variant.len(),
            FeatureMode::Learned => self.network.output_dim,
            FeatureMode::Hybrid => self.handcrafted.variant.len() + self.network.output_dim,
        }
    }

    /// Feature vector for one cluster; clusters without radar support get zeros.
    pub fn extract(&self, cluster: &Cluster) -> Result<FeatureVector, FeatureError> {
        if cluster.is_empty() {
            return Ok(FeatureVector::zeros(self.feature_len()));
        }
        Ok(match self.features {
            FeatureMode::Handcrafted => extract_handcrafted(cluster, &self.handcrafted)?,
            FeatureMode::Learned => extract_learned(cluster, &self.network),
            FeatureMode::Hybrid => extract_handcrafted(cluster, &self.handcrafted)?
                .concat(&extract_learned(cluster, &self.network)),
        })
    }
}

/// Plain BEV coordinates of one frame's clusters and boxes for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevDump {
    pub frame_id: u64,
    /// Radar points after range filtering, `[x, y]`.
    pub points: Vec<[f64; 2]>,
    /// Member positions per preliminary detection.
    pub clusters: Vec<Vec<[f64; 2]>>,
    /// Footprint corners of each decoded box.
    pub boxes: Vec<[[f64; 2]; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub detections: FrameDetections,
    pub bev: BevDump,
}

pub fn run_frame(frame: &SceneFrame, cfg: &PipelineConfig) -> Result<FrameOutput, PipelineError> {
    let frame_id = frame.frame_id;
    let feat_err = |source| PipelineError::Features { frame_id, source };
    let dec_err = |source| PipelineError::Decode { frame_id, source };

    let points = accumulate_sweeps(&frame.radar_sweeps, cfg.max_sweeps);
    let points = range_filter(&points, cfg.min_range, cfg.max_range);
    let clusters = associate(&points, &frame.preliminary_detections, &frame.camera, &cfg.association);

    let mut items = Vec::with_capacity(clusters.len());
    for c in &clusters {
        let f = cfg.extract(c).map_err(feat_err)?;
        items.push((c.clone(), f));
    }
    let supported: Vec<(Cluster, FeatureVector)> =
        items.into_iter().filter(|(c, _)| !c.is_empty()).collect();
    let image_size = frame.camera.image_size();
    let heatmap = rasterize_heatmap(&supported, image_size, cfg.stride).map_err(feat_err)?;

    let maps: HeadMaps = match &frame.head_outputs {
        Some(h) => h.to_dense().map_err(dec_err)?,
        None => encode_detections(
            &frame.preliminary_detections,
            image_size,
            cfg.stride,
            NUSCENES_CLASSES.len(),
        )
        .map_err(dec_err)?,
    };
    let candidates = topk_peaks(&maps.heatmap, cfg.top_k, true);
    let detections = decode_detections(&candidates, &maps, &frame.camera, cfg.score_threshold);

    let bev = BevDump {
        frame_id,
        points: points.iter().map(|p| [p.position.x, p.position.y]).collect(),
        clusters: clusters
            .iter()
            .map(|c| c.members.iter().map(|p| [p.position.x, p.position.y]).collect())
            .collect(),
        boxes: detections
            .iter()
            .map(|d| {
                let c = d.box3d.corners();
                // Bottom face, in perimeter order.
                [c[0], c[1], c[3], c[2]].map(|v| [v.x, v.y])
            })
            .collect(),
    };
    Ok(FrameOutput {
        detections: FrameDetections {
            frame_id,
            detections,
            clusters: clusters
                .iter()
                .enumerate()
                .map(|(i, c)| ClusterSummary {
                    detection_index: i,
                    size: c.len(),
                })
                .collect(),
            heatmap: HeatmapSummary {
                channels: heatmap.channels,
                height: heatmap.height,
                width: heatmap.width,
                nonzero_pixels: heatmap.nonzero_pixels(),
            },
        },
        bev,
    })
}

/// Runs frames on the rayon pool; output is ordered by `frame_id`.
pub fn run_frames(frames: &[SceneFrame], cfg: &PipelineConfig) -> Result<Vec<FrameOutput>, PipelineError> {
    let mut out: Vec<FrameOutput> = frames
        .par_iter()
        .map(|f| run_frame(f, cfg))
        .collect::<Result<_, _>>()?;
    out.sort_by_key(|o| o.detections.frame_id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::HandcraftedVariant;
    use crate::scene::{synth_scene, SynthConfig};

    fn lite(features: FeatureMode) -> PipelineConfig {
        PipelineConfig::new(features, KPNetworkConfig::new(NetworkVariant::Lite, 3))
    }

    #[test]
    fn noiseless_frames_decode_planted_boxes() {
        let frames = synth_scene(&SynthConfig { frames: 5, ..Default::default() }).unwrap();
        let out = run_frames(&frames, &lite(FeatureMode::Handcrafted)).unwrap();
        for (f, o) in frames.iter().zip(&out) {
            assert_eq!(o.detections.frame_id, f.frame_id);
            let gt = f.ground_truth.as_ref().unwrap();
            assert_eq!(o.detections.detections.len(), gt.len());
            for g in gt {
                let best = o
                    .detections
                    .detections
                    .iter()
                    .map(|d| (d.box3d.center - g.box3d.center).norm())
                    .fold(f64::INFINITY, f64::min);
                assert!(best < 1e-6, "{best}");
            }
            assert_eq!(o.detections.heatmap.channels, HandcraftedVariant::MeanOrt.len());
            assert!(o.detections.clusters.iter().any(|c| c.size > 0));
            assert!(o.detections.heatmap.nonzero_pixels > 0);
        }
    }

    #[test]
    fn feature_modes_set_channel_count() {
        let frames = synth_scene(&SynthConfig { frames: 2, ..Default::default() }).unwrap();
        for (mode, len) in [
            (FeatureMode::Handcrafted, 13),
            (FeatureMode::Learned, 64),
            (FeatureMode::Hybrid, 77),
        ] {
            let cfg = lite(mode);
            assert_eq!(cfg.feature_len(), len);
            for o in run_frames(&frames, &cfg).unwrap() {
                assert_eq!(o.detections.heatmap.channels, len);
            }
        }
    }

    #[test]
    fn order_follows_frame_id() {
        let mut frames = synth_scene(&SynthConfig { frames: 6, ..Default::default() }).unwrap();
        frames.reverse();
        let out = run_frames(&frames, &lite(FeatureMode::Handcrafted)).unwrap();
        let ids: Vec<u64> = out.iter().map(|o| o.detections.frame_id).collect();
        assert_eq!(ids, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn head_outputs_take_precedence() {
        let mut frames = synth_scene(&SynthConfig { frames: 1, ..Default::default() }).unwrap();
        let f = &mut frames[0];
        let maps = encode_detections(&f.preliminary_detections[..1], (800, 448), 4, 10).unwrap();
        f.head_outputs = Some(crate::decoder::HeadOutputs::from_dense(&maps));
        let o = run_frame(f, &lite(FeatureMode::Handcrafted)).unwrap();
        assert_eq!(o.detections.detections.len(), 1);
    }

    #[test]
    fn feature_mode_parsing() {
        for m in [FeatureMode::Handcrafted, FeatureMode::Learned, FeatureMode::Hybrid] {
            assert_eq!(m.as_str().parse::<FeatureMode>().unwrap(), m);
        }
        assert!("mixed".parse::<FeatureMode>().is_err());
    }
}
