//! Non-neural core of a radar / monocular-camera 3D detection pipeline.
//!
//! Radar points are expanded into pillars and grouped into per-detection
//! clusters by frustum association ([`radar`]). Each cluster is summarized by
//! handcrafted statistics ([`features`]), a kernel-point convolution network
//! ([`kpconv`]), or both, and rasterized onto the image feature plane.
//! [`decoder`] turns head outputs into 3D boxes with depth-uncertainty-aware
//! confidence, [`losses`] holds the training objectives, and [`metrics`]
//! implements nuScenes-style evaluation.

pub mod bench;
pub mod decoder;
pub mod features;
pub mod geometry;
pub mod kpconv;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod radar;
pub mod scene;

pub use geometry::{Box2D, Box3D, CameraModel};
pub use radar::{Cluster, PreliminaryDetection, RadarPoint};
