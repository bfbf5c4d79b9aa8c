use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{grid_subsample, kpconv_forward, radius_neighbors, KPConvLayerConfig, KpConvError, PointFeatures};
use crate::features::{extract_handcrafted, FeatureError, FeatureVector, HandcraftedConfig};
use crate::radar::{Cluster, RadarPoint};

pub const DEFAULT_BASE_CELL: f64 = 0.1;
pub const DEFAULT_NEIGHBOR_CAP: usize = 26;
/// Layer radius in units of the layer's grid cell.
pub const RADIUS_PER_CELL: f64 = 2.5;
/// Kernel points are laid out inside this fraction of the layer radius.
pub const KERNEL_EXTENT: f64 = 0.66;
pub const LEAKY_SLOPE: f64 = 0.1;
pub const INPUT_CHANNELS: usize = 5;

const REPULSION_STEPS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkVariant {
    Lite,
    Medium,
    Large,
}

impl NetworkVariant {
    pub fn kernel_size(self) -> usize {
        match self {
            NetworkVariant::Lite => 8,
            NetworkVariant::Medium | NetworkVariant::Large => 15,
        }
    }

    pub fn layer_count(self) -> usize {
        match self {
            NetworkVariant::Lite => 4,
            NetworkVariant::Medium | NetworkVariant::Large => 5,
        }
    }

    pub fn first_dim(self) -> usize {
        match self {
            NetworkVariant::Lite => 8,
            NetworkVariant::Medium => 32,
            NetworkVariant::Large => 64,
        }
    }

    pub fn output_dim(self) -> usize {
        self.first_dim() << (self.layer_count() - 1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NetworkVariant::Lite => "lite",
            NetworkVariant::Medium => "medium",
            NetworkVariant::Large => "large",
        }
    }
}

impl std::str::FromStr for NetworkVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lite" => Ok(NetworkVariant::Lite),
            "medium" => Ok(NetworkVariant::Medium),
            "large" => Ok(NetworkVariant::Large),
            other => Err(format!("unknown network variant `{other}`")),
        }
    }
}

/// A frozen KP-CNN feature extractor.
///
/// Layer `j` queries points on a grid of cell `base_cell_size * 2^j` and
/// searches neighbors within `2.5` cells. Layer 0 convolves the subsampled
/// input onto itself; later layers are strided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPNetworkConfig {
    pub variant: NetworkVariant,
    pub layers: Vec<KPConvLayerConfig>,
    pub first_dim: usize,
    pub output_dim: usize,
    pub base_cell_size: f64,
    /// `None` means unlimited.
    pub neighbor_cap: Option<usize>,
    pub position_norm: f64,
    pub velocity_norm: f64,
    pub seed: u64,
}

/// Kernel point dispositions inside a ball of radius `extent`: one point at
/// the center and the rest spread by minimizing a repulsion energy with a
/// weak pull toward the center. Deterministic for a given seed.
pub fn kernel_point_layout(count: usize, extent: f64, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = vec![Vector3::zeros()];
    while pts.len() < count {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n: f64 = v.norm();
        if n > 1e-3 && n <= 1.0 {
            pts.push(v);
        }
    }
    pts.truncate(count);
    for step in 0..REPULSION_STEPS {
        let lr = 0.02 * (1.0 - step as f64 / REPULSION_STEPS as f64) + 1e-3;
        let forces: Vec<Vector3<f64>> = (0..pts.len())
            .map(|i| {
                let mut f = -pts[i];
                for (j, pj) in pts.iter().enumerate() {
                    if i != j {
                        let d = pts[i] - pj;
                        let n = d.norm().max(1e-6);
                        f += d / (n * n * n) * 0.05;
                    }
                }
                f
            })
            .collect();
        for i in 1..pts.len() {
            let f = forces[i];
            let fn_ = f.norm();
            let step_vec = if fn_ > 1.0 { f / fn_ } else { f };
            pts[i] += step_vec * lr;
            let n = pts[i].norm();
            if n > 1.0 {
                pts[i] /= n;
            }
        }
    }
    pts.into_iter().map(|p| p * extent).collect()
}

impl KPNetworkConfig {
    /// Builds a network with seeded uniform weights (He-uniform bound).
    pub fn new(variant: NetworkVariant, seed: u64) -> Self {
        Self::with_options(variant, seed, DEFAULT_BASE_CELL, Some(DEFAULT_NEIGHBOR_CAP))
    }

    pub fn with_options(
        variant: NetworkVariant,
        seed: u64,
        base_cell_size: f64,
        neighbor_cap: Option<usize>,
    ) -> Self {
        assert!(base_cell_size > 0.0, "base cell must be positive");
        let k = variant.kernel_size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(variant.layer_count());
        let mut in_channels = INPUT_CHANNELS;
        for j in 0..variant.layer_count() {
            let out_channels = variant.first_dim() << j;
            let cell_size = base_cell_size * f64::powi(2.0, j as i32);
            let radius = RADIUS_PER_CELL * cell_size;
            let kernel_points = kernel_point_layout(k, KERNEL_EXTENT * radius, rng.gen());
            let bound = (6.0 / (k * in_channels) as f64).sqrt();
            let weights = (0..k * in_channels * out_channels)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push(KPConvLayerConfig {
                kernel_points,
                radius,
                influence_sigma: radius / 2.0,
                cell_size,
                in_channels,
                out_channels,
                strided: j > 0,
                weights,
            });
            in_channels = out_channels;
        }
        Self {
            variant,
            layers,
            first_dim: variant.first_dim(),
            output_dim: variant.output_dim(),
            base_cell_size,
            neighbor_cap,
            position_norm: 60.0,
            velocity_norm: 20.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), KpConvError> {
        if self.layers.is_empty() {
            return Err(KpConvError::DimensionMismatch("network has no layers".into()));
        }
        let mut expected = INPUT_CHANNELS;
        for (j, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.in_channels != expected {
                return Err(KpConvError::DimensionMismatch(format!(
                    "layer {j} takes {} channels, previous layer yields {expected}",
                    layer.in_channels
                )));
            }
            expected = layer.out_channels;
        }
        if expected != self.output_dim || self.layers[0].out_channels != self.first_dim {
            return Err(KpConvError::DimensionMismatch(
                "first/output dims disagree with layers".into(),
            ));
        }
        if !(self.position_norm > 0.0 && self.velocity_norm > 0.0) {
            return Err(KpConvError::DimensionMismatch("norms must be positive".into()));
        }
        Ok(())
    }

    /// Input rows `(x, y, vx, vy, 1.0)` for a cluster, with positions relative
    /// to the cluster centroid. Points are put in a canonical order first.
    pub fn input_features(&self, points: &[RadarPoint]) -> PointFeatures {
        let mut pts: Vec<&RadarPoint> = points.iter().collect();
        pts.sort_by(|a, b| {
            let ka = [a.position.x, a.position.y, a.position.z, a.velocity.x, a.velocity.y, a.rcs, a.sweep_age];
            let kb = [b.position.x, b.position.y, b.position.z, b.velocity.x, b.velocity.y, b.rcs, b.sweep_age];
            ka.iter()
                .zip(&kb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let n = pts.len().max(1) as f64;
        let centroid = pts.iter().map(|p| p.position).sum::<Vector3<f64>>() / n;
        let positions = pts.iter().map(|p| p.position - centroid).collect();
        let features = pts
            .iter()
            .flat_map(|p| {
                [
                    p.position.x / self.position_norm,
                    p.position.y / self.position_norm,
                    p.velocity.x / self.velocity_norm,
                    p.velocity.y / self.velocity_norm,
                    1.0,
                ]
            })
            .collect();
        PointFeatures {
            positions,
            channels: INPUT_CHANNELS,
            features,
        }
    }

    /// Runs all layers on prepared input and average-pools to one row.
    pub fn forward(&self, input: &PointFeatures) -> Result<FeatureVector, KpConvError> {
        if input.channels != INPUT_CHANNELS {
            return Err(KpConvError::DimensionMismatch(format!(
                "network input has {} channels, expected {INPUT_CHANNELS}",
                input.channels
            )));
        }
        if input.is_empty() {
            return Ok(FeatureVector::zeros(self.output_dim));
        }
        let mut support = grid_subsample(input, self.base_cell_size);
        for layer in &self.layers {
            let queries = if layer.strided {
                let positions_only = PointFeatures {
                    positions: support.positions.clone(),
                    channels: 0,
                    features: Vec::new(),
                };
                grid_subsample(&positions_only, layer.cell_size).positions
            } else {
                support.positions.clone()
            };
            let neighbors =
                radius_neighbors(&queries, &support.positions, layer.radius, self.neighbor_cap);
            let mut out = kpconv_forward(layer, &queries, &support, &neighbors)?;
            for v in &mut out {
                if *v < 0.0 {
                    *v *= LEAKY_SLOPE;
                }
            }
            support = PointFeatures {
                positions: queries,
                channels: layer.out_channels,
                features: out,
            };
        }
        let n = support.len() as f64;
        let mut pooled = vec![0.0; support.channels];
        for i in 0..support.len() {
            for (acc, v) in pooled.iter_mut().zip(support.row(i)) {
                *acc += v;
            }
        }
        Ok(FeatureVector(pooled.into_iter().map(|v| v / n).collect()))
    }
}

/// Learned cluster descriptor of length `net.output_dim`; zeros for an empty
/// cluster.
pub fn extract_learned(cluster: &Cluster, net: &KPNetworkConfig) -> FeatureVector {
    let input = net.input_features(&cluster.members);
    net.forward(&input)
        .expect("network channels are validated at construction")
}

/// Handcrafted values followed by learned values.
pub fn extract_hybrid(
    cluster: &Cluster,
    cfg: &HandcraftedConfig,
    net: &KPNetworkConfig,
) -> Result<FeatureVector, FeatureError> {
    let hand = extract_handcrafted(cluster, cfg)?;
    Ok(hand.concat(&extract_learned(cluster, net)))
}
