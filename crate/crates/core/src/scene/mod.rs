//! Scene and detection files.
//!
//! Both are JSON lines. The first line is a schema header such as
//! `{"format":"clusterfusion.scene","version":1}`; every following non-blank
//! line holds one record. Scene records are [`SceneFrame`]s:
//!
//! - `frame_id`: unsigned integer, unique within the file.
//! - `camera`: `{"intrinsic": 3x3 rows, "extrinsic": 4x4 rows (camera from
//!   ego), "image_size": [width, height]}`.
//! - `radar_sweeps`: list of `{"timestamp": s, "points": [...]}` in
//!   ascending timestamp order. Points carry `position` `[x, y, z]` (m, ego
//!   frame), `velocity` `[vx, vy]` (m/s, compensated radial velocity in BEV),
//!   `rcs` (dBsm), and an optional `sweep_age`.
//! - `preliminary_detections`: camera detector outputs with `class_id`,
//!   `score`, `bbox2d`, `projected_center`, `depth`, `log_sigma`, `box3d`,
//!   and `attribute`.
//! - `ground_truth`: optional list of `{"box3d", "class_id", "attribute"}`.
//! - `head_outputs`: optional sparse head maps; without them the pipeline
//!   decodes the preliminary detections.
//!
//! Boxes are `{"center": [x, y, z], "dims": [w, l, h], "yaw": rad,
//! "velocity": [vx, vy]}`. Detection records are [`FrameDetections`].

mod synth;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decoder::{DetectionBox3D, HeadOutputs};
use crate::geometry::CameraModel;
use crate::metrics::{GroundTruthBox, NUSCENES_CLASSES};
use crate::radar::{PreliminaryDetection, Sweep};

pub use synth::{class_dims, synth_scene, SynthConfig, ATTRIBUTE_MOVING, ATTRIBUTE_STOPPED};

pub const SCENE_FORMAT: &str = "clusterfusion.scene";
pub const DETECTIONS_FORMAT: &str = "clusterfusion.detections";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(thiserror::Error, Debug)]
pub enum SceneError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { expected: u32, found: u32 },
    #[error("file format `{found}` where `{expected}` was expected")]
    WrongFormat { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SchemaHeader {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub frame_id: u64,
    pub camera: CameraModel,
    pub radar_sweeps: Vec<Sweep>,
    pub preliminary_detections: Vec<PreliminaryDetection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<GroundTruthBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_outputs: Option<HeadOutputs>,
}

impl SceneFrame {
    pub fn validate(&self) -> Result<(), String> {
        if self
            .radar_sweeps
            .windows(2)
            .any(|w| !(w[0].timestamp <= w[1].timestamp))
        {
            return Err("radar sweep timestamps are not ascending".into());
        }
        let classes = self
            .preliminary_detections
            .iter()
            .map(|d| d.class_id)
            .chain(self.ground_truth.iter().flatten().map(|g| g.class_id));
        for c in classes {
            if c >= NUSCENES_CLASSES.len() {
                return Err(format!("class id {c} is outside the vocabulary"));
            }
        }
        Ok(())
    }
}

/// Per-cluster summary kept alongside each detection frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub detection_index: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSummary {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub nonzero_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_id: u64,
    pub detections: Vec<DetectionBox3D>,
    pub clusters: Vec<ClusterSummary>,
    pub heatmap: HeatmapSummary,
}

fn write_records<W: Write, T: Serialize>(mut w: W, format: &str, records: &[T]) -> Result<(), SceneError> {
    let header = SchemaHeader {
        format: format.to_string(),
        version: SCHEMA_VERSION,
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_line<T: DeserializeOwned>(line_no: usize, text: &str) -> Result<T, SceneError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        SceneError::Parse {
            line: line_no,
            field: path,
            message: e.into_inner().to_string(),
        }
    })?;
    de.end().map_err(|e| SceneError::Parse {
        line: line_no,
        field: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

fn read_records<R: BufRead, T: DeserializeOwned>(r: R, format: &str) -> Result<Vec<(usize, T)>, SceneError> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header: SchemaHeader = loop {
        match lines.next() {
            Some((n, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break parse_line(n, &line)?;
                }
            }
            None => {
                return Err(SceneError::Invalid {
                    line: 0,
                    message: "missing schema header".into(),
                })
            }
        }
    };
    if header.format != format {
        return Err(SceneError::WrongFormat {
            expected: format.into(),
            found: header.format,
        });
    }
    if header.version != SCHEMA_VERSION {
        return Err(SceneError::SchemaVersionMismatch {
            expected: SCHEMA_VERSION,
            found: header.version,
        });
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((n, parse_line(n, &line)?));
    }
    Ok(out)
}

pub fn write_scene<W: Write>(w: W, frames: &[SceneFrame]) -> Result<(), SceneError> {
    write_records(w, SCENE_FORMAT, frames)
}

pub fn read_scene<R: BufRead>(r: R) -> Result<Vec<SceneFrame>, SceneError> {
    let records: Vec<(usize, SceneFrame)> = read_records(r, SCENE_FORMAT)?;
    let mut seen = std::collections::HashSet::new();
    for (line, f) in &records {
        f.validate().map_err(|message| SceneError::Invalid { line: *line, message })?;
        if !seen.insert(f.frame_id) {
            return Err(SceneError::Invalid {
                line: *line,
                message: format!("duplicate frame_id {}", f.frame_id),
            });
        }
    }
    Ok(records.into_iter().map(|(_, f)| f).collect())
}

pub fn save_scene(path: &Path, frames: &[SceneFrame]) -> Result<(), SceneError> {
    write_scene(BufWriter::new(File::create(path)?), frames)
}

pub fn load_scene(path: &Path) -> Result<Vec<SceneFrame>, SceneError> {
    read_scene(BufReader::new(File::open(path)?))
}

pub fn write_detections<W: Write>(w: W, frames: &[FrameDetections]) -> Result<(), SceneError> {
    write_records(w, DETECTIONS_FORMAT, frames)
}

pub fn read_detections<R: BufRead>(r: R) -> Result<Vec<FrameDetections>, SceneError> {
    Ok(read_records(r, DETECTIONS_FORMAT)?
        .into_iter()
        .map(|(_, f)| f)
        .collect())
}

pub fn save_detections(path: &Path, frames: &[FrameDetections]) -> Result<(), SceneError> {
    write_detections(BufWriter::new(File::create(path)?), frames)
}

pub fn load_detections(path: &Path) -> Result<Vec<FrameDetections>, SceneError> {
    read_detections(BufReader::new(File::open(path)?))
}
