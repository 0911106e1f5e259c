//! Diffusion-feature clustering: sigmoid-weighted feature fusion, PCA +
//! k-means, and the three-pass cluster optimization (semantic merge,
//! depth-guided split, isolated-point elimination).

mod accuracy;
mod fusion;
mod kmeans;
pub mod mask_io;
mod optimize;
mod pca;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use accuracy::classification_accuracy;
pub use fusion::{fuse_features, raw_weight, FusionWeights};
pub use kmeans::{initial_clusters, kmeans, KMeansResult, KMEANS_MAX_ITER, KMEANS_TOL};
pub use optimize::{
    cluster_semantics, depth_split, eliminate_isolated, enforce_k_max, fill_unknown, ingest_labels,
    optimize_clusters, semantic_merge, MAX_OPT_CYCLES,
};
pub use pca::pca_project;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Auto,
    ExternalBase,
    UserEdited,
}

/// Label map over the feature grid; every cell carries exactly one label and
/// labels are contiguous `0..n_clusters`, numbered by first appearance in
/// row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMask {
    pub image_id: String,
    pub labels: Array2<usize>,
    pub n_clusters: usize,
    pub provenance: Provenance,
    /// Non-fatal conditions raised while building the mask.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ClusterMask {
    /// Wraps raw labels, renumbering them canonically.
    pub fn from_labels(image_id: impl Into<String>, labels: Array2<usize>, provenance: Provenance) -> Self {
        let (labels, n_clusters) = canonical_relabel(&labels);
        Self {
            image_id: image_id.into(),
            labels,
            n_clusters,
            provenance,
            warnings: Vec::new(),
        }
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.n_clusters];
        self.labels.iter().for_each(|&l| areas[l] += 1);
        areas
    }

    /// Cells of one cluster as `(y, x)`.
    pub fn cells(&self, label: usize) -> Vec<(usize, usize)> {
        self.labels
            .indexed_iter()
            .filter(|(_, &l)| l == label)
            .map(|(idx, _)| idx)
            .collect()
    }

    /// True when labels are exactly `0..n_clusters` and all are used.
    pub fn is_partition(&self) -> bool {
        let areas = {
            let mut a = vec![0usize; self.n_clusters];
            for &l in self.labels.iter() {
                if l >= self.n_clusters {
                    return false;
                }
                a[l] += 1;
            }
            a
        };
        areas.iter().all(|&a| a > 0)
    }

    pub fn resized(&self, height: usize, width: usize) -> Array2<usize> {
        resize_nearest(&self.labels, height, width)
    }
}

/// Renumbers labels by first appearance in row-major order.
pub fn canonical_relabel(labels: &Array2<usize>) -> (Array2<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels.mapv(|l| {
        let next = map.len();
        *map.entry(l).or_insert(next)
    });
    (out, map.len())
}

/// Nearest-neighbor resize of any grid (cell centers mapped proportionally).
pub fn resize_nearest<T: Clone>(grid: &Array2<T>, height: usize, width: usize) -> Array2<T> {
    let (h, w) = grid.dim();
    Array2::from_shape_fn((height, width), |(y, x)| {
        let sy = ((2 * y + 1) * h / (2 * height)).min(h - 1);
        let sx = ((2 * x + 1) * w / (2 * width)).min(w - 1);
        grid[[sy, sx]].clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterOptConfig {
    /// Upper limit on the number of clusters.
    pub k_max: usize,
    /// Cosine similarity at or above which two clusters merge.
    pub merge_threshold: f64,
    /// Components smaller than this many cells are absorbed by a neighbor.
    pub isolated_area: usize,
    pub use_depth_split: bool,
    /// Split a cluster when its two depth sub-means differ by more than this
    /// fraction of the global depth range.
    pub depth_split_fraction: f64,
    pub pca_dims: usize,
}

impl Default for ClusterOptConfig {
    fn default() -> Self {
        Self {
            k_max: 10,
            merge_threshold: 0.85,
            isolated_area: 8,
            use_depth_split: true,
            depth_split_fraction: 0.25,
            pca_dims: 64,
        }
    }
}

impl ClusterOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.merge_threshold > 0.0 && self.merge_threshold < 1.0) {
            return Err(Error::Validation(format!(
                "merge_threshold must lie in (0, 1), got {}",
                self.merge_threshold
            )));
        }
        if self.k_max < 2 {
            return Err(Error::Validation(format!("k_max must be at least 2, got {}", self.k_max)));
        }
        if self.pca_dims == 0 {
            return Err(Error::Validation("pca_dims must be positive".into()));
        }
        Ok(())
    }

    pub fn validate_for_channels(&self, channels: usize) -> Result<()> {
        self.validate()?;
        if self.pca_dims > channels {
            return Err(Error::Validation(format!(
                "pca_dims {} exceeds feature channel count {channels}",
                self.pca_dims
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn canonical_relabel_orders_by_first_appearance() {
        let (l, n) = canonical_relabel(&array![[7, 7, 3], [3, 9, 7]]);
        assert_eq!(n, 3);
        assert_eq!(l, array![[0, 0, 1], [1, 2, 0]]);
    }

    #[test]
    fn config_validation() {
        assert!(ClusterOptConfig::default().validate().is_ok());
        let bad = ClusterOptConfig {
            merge_threshold: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ClusterOptConfig {
            k_max: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ClusterOptConfig::default().validate_for_channels(32).is_err());
    }

    #[test]
    fn resize_round_trip_keeps_uniform_neighborhoods() {
        let labels = Array2::from_shape_fn((8, 8), |(y, x)| usize::from(x >= 4) + 2 * usize::from(y >= 4));
        let down = resize_nearest(&labels, 4, 4);
        let up = resize_nearest(&down, 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                let uniform = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().all(|(dy, dx)| {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    !(0..8).contains(&yy) || !(0..8).contains(&xx) || labels[[yy as usize, xx as usize]] == labels[[y, x]]
                });
                if uniform {
                    assert_eq!(up[[y, x]], labels[[y, x]]);
                }
            }
        }
    }
}
