//! Kernel point convolution on radar clusters.
//!
//! The operator is rigid KPConv with linear-correlation influence: a support
//! point at offset `p - q` from the query contributes to kernel point `k` with
//! weight `max(0, 1 - |p - q - y_k| / sigma)`.

mod checkpoint;
mod network;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use network::{
    extract_hybrid, extract_learned, kernel_point_layout, KPNetworkConfig, NetworkVariant,
    DEFAULT_BASE_CELL, DEFAULT_NEIGHBOR_CAP,
};

#[derive(thiserror::Error, Debug)]
pub enum KpConvError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cluster has no points")]
    EmptyCluster,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One convolution layer: rigid kernel points plus a K x in x out weight tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPConvLayerConfig {
    pub kernel_points: Vec<Vector3<f64>>,
    pub radius: f64,
    pub influence_sigma: f64,
    /// Grid cell of this layer's query points.
    pub cell_size: f64,
    pub in_channels: usize,
    pub out_channels: usize,
    pub strided: bool,
    /// Row-major `[kernel][in][out]`.
    pub weights: Vec<f64>,
}

impl KPConvLayerConfig {
    pub fn kernel_point_count(&self) -> usize {
        self.kernel_points.len()
    }

    #[inline]
    pub fn weight_index(&self, k: usize, c: usize, o: usize) -> usize {
        (k * self.in_channels + c) * self.out_channels + o
    }

    pub fn validate(&self) -> Result<(), KpConvError> {
        let expected = self.kernel_point_count() * self.in_channels * self.out_channels;
        if self.weights.len() != expected {
            return Err(KpConvError::DimensionMismatch(format!(
                "weights hold {} values, expected {expected}",
                self.weights.len()
            )));
        }
        if self.out_channels == 0 {
            return Err(KpConvError::DimensionMismatch("out_channels is zero".into()));
        }
        if self.kernel_points.iter().any(|y| y.norm() > self.radius) {
            return Err(KpConvError::DimensionMismatch(
                "kernel point outside the layer radius".into(),
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(KpConvError::DimensionMismatch("non-finite weight".into()));
        }
        Ok(())
    }
}

/// Point positions with a row-major N x C feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    pub positions: Vec<Vector3<f64>>,
    pub channels: usize,
    pub features: Vec<f64>,
}

impl PointFeatures {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        channels: usize,
        features: Vec<f64>,
    ) -> Result<Self, KpConvError> {
        if features.len() != positions.len() * channels {
            return Err(KpConvError::DimensionMismatch(format!(
                "{} positions x {channels} channels != {} feature values",
                positions.len(),
                features.len()
            )));
        }
        Ok(Self {
            positions,
            channels,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }
}

type CellKey = (i64, i64, i64);

fn cell_key(p: &Vector3<f64>, cell: f64) -> CellKey {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// One output point per occupied grid cell: the barycenter of its members
/// with their mean features. Output is ordered by cell index.
pub fn grid_subsample(points: &PointFeatures, cell: f64) -> PointFeatures {
    assert!(cell > 0.0, "grid cell must be positive");
    let ch = points.channels;
    let mut cells: BTreeMap<CellKey, (usize, Vector3<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, p) in points.positions.iter().enumerate() {
        let entry = cells
            .entry(cell_key(p, cell))
            .or_insert_with(|| (0, Vector3::zeros(), vec![0.0; ch]));
        entry.0 += 1;
        entry.1 += p;
        for (acc, v) in entry.2.iter_mut().zip(points.row(i)) {
            *acc += v;
        }
    }
    let mut positions = Vec::with_capacity(cells.len());
    let mut features = Vec::with_capacity(cells.len() * ch);
    for (_, (n, sum, feat)) in cells {
        let n = n as f64;
        positions.push(sum / n);
        features.extend(feat.iter().map(|v| v / n));
    }
    PointFeatures {
        positions,
        channels: ch,
        features,
    }
}

/// Support indices within distance `r` of each query, nearest first (ties by
/// index), truncated to `cap` when given.
///
/// Candidates come from a uniform hash grid with cell size `r`.
pub fn radius_neighbors(
    queries: &[Vector3<f64>],
    support: &[Vector3<f64>],
    r: f64,
    cap: Option<usize>,
) -> Vec<Vec<usize>> {
    assert!(r > 0.0, "search radius must be positive");
    let mut grid: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in support.iter().enumerate() {
        grid.entry(cell_key(p, r)).or_default().push(i);
    }
    let r2 = r * r;
    queries
        .iter()
        .map(|q| {
            let (cx, cy, cz) = cell_key(q, r);
            let mut found: Vec<(f64, usize)> = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(ids) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &i in ids {
                                let d2 = (support[i] - q).norm_squared();
                                if d2 <= r2 {
                                    found.push((d2, i));
                                }
                            }
                        }
                    }
                }
            }
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some(cap) = cap {
                found.truncate(cap);
            }
            found.into_iter().map(|(_, i)| i).collect()
        })
        .collect()
}

#[inline]
fn influence(offset: &Vector3<f64>, kernel_point: &Vector3<f64>, sigma: f64) -> f64 {
    (1.0 - (offset - kernel_point).norm() / sigma).max(0.0)
}

fn check_inputs(
    layer: &KPConvLayerConfig,
    queries: &[Vector3<f64>],
    support: &PointFeatures,
    neighbors: &[Vec<usize>],
) -> Result<(), KpConvError> {
    if support.channels != layer.in_channels {
        return Err(KpConvError::DimensionMismatch(format!(
            "support has {} channels, layer expects {}",
            support.channels, layer.in_channels
        )));
    }
    if neighbors.len() != queries.len() {
        return Err(KpConvError::DimensionMismatch(format!(
            "{} neighbor lists for {} queries",
            neighbors.len(),
            queries.len()
        )));
    }
    if neighbors.iter().flatten().any(|&i| i >= support.len()) {
        return Err(KpConvError::DimensionMismatch(
            "neighbor index out of range".into(),
        ));
    }
    let expected = layer.kernel_point_count() * layer.in_channels * layer.out_channels;
    if layer.weights.len() != expected {
        return Err(KpConvError::DimensionMismatch(format!(
            "weights hold {} values, expected {expected}",
            layer.weights.len()
        )));
    }
    Ok(())
}

/// Influence-weighted neighbor features per kernel point, `[kernel][in]`.
fn gather(
    layer: &KPConvLayerConfig,
    q: &Vector3<f64>,
    support: &PointFeatures,
    neighbors: &[usize],
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let c_in = layer.in_channels;
    for &i in neighbors {
        let offset = support.positions[i] - q;
        let f = support.row(i);
        for (k, y) in layer.kernel_points.iter().enumerate() {
            let h = influence(&offset, y, layer.influence_sigma);
            if h > 0.0 {
                let acc = &mut out[k * c_in..(k + 1) * c_in];
                for (a, v) in acc.iter_mut().zip(f) {
                    *a += h * v;
                }
            }
        }
    }
}

/// Applies one KPConv layer; returns a row-major `queries x out_channels` matrix.
pub fn kpconv_forward(
    layer: &KPConvLayerConfig,
    queries: &[Vector3<f64>],
    support: &PointFeatures,
    neighbors: &[Vec<usize>],
) -> Result<Vec<f64>, KpConvError> {
    check_inputs(layer, queries, support, neighbors)?;
    let (c_in, c_out) = (layer.in_channels, layer.out_channels);
    let mut out = vec![0.0; queries.len() * c_out];
    let mut g = vec![0.0; layer.kernel_point_count() * c_in];
    for (qi, q) in queries.iter().enumerate() {
        gather(layer, q, support, &neighbors[qi], &mut g);
        let row = &mut out[qi * c_out..(qi + 1) * c_out];
        for (kc, &gv) in g.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            let w = &layer.weights[kc * c_out..(kc + 1) * c_out];
            for (o, wv) in row.iter_mut().zip(w) {
                *o += gv * wv;
            }
        }
    }
    Ok(out)
}

/// Gradient of `sum(upstream * kpconv_forward(..))` with respect to the
/// layer weights, in the same `[kernel][in][out]` layout.
pub fn kpconv_weight_grad(
    layer: &KPConvLayerConfig,
    queries: &[Vector3<f64>],
    support: &PointFeatures,
    neighbors: &[Vec<usize>],
    upstream: &[f64],
) -> Result<Vec<f64>, KpConvError> {
    check_inputs(layer, queries, support, neighbors)?;
    let (c_in, c_out) = (layer.in_channels, layer.out_channels);
    if upstream.len() != queries.len() * c_out {
        return Err(KpConvError::DimensionMismatch(
            "upstream gradient shape".into(),
        ));
    }
    let mut grad = vec![0.0; layer.weights.len()];
    let mut g = vec![0.0; layer.kernel_point_count() * c_in];
    for (qi, q) in queries.iter().enumerate() {
        gather(layer, q, support, &neighbors[qi], &mut g);
        let up = &upstream[qi * c_out..(qi + 1) * c_out];
        for (kc, &gv) in g.iter().enumerate() {
            let dst = &mut grad[kc * c_out..(kc + 1) * c_out];
            for (d, u) in dst.iter_mut().zip(up) {
                *d += gv * u;
            }
        }
    }
    Ok(grad)
}
