//! Region descriptors along three dimensions (attention-aggregated feature
//! statistics, semantic tokens, enclosing circle) and the gallery-wide
//! content-to-style cluster assignment.

mod circle;
mod similarity;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::backends::SemanticTokenGrid;
use crate::clustering::{cluster_semantics, ClusterMask};
use crate::error::{Error, Result};
use crate::transfer::softmax_rows;

pub use circle::{minimum_enclosing_circle, Circle};
pub use similarity::{
    apply_overrides, match_gallery, pairwise_similarity, MatchEntry, MatchOrigin, MatchTable, Override, PerDim,
    SimilarityConfig,
};

/// Below this many tokens a region's semantic evidence is considered thin.
pub const MIN_SEMANTIC_TOKENS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDescriptor {
    pub cluster_id: usize,
    pub image_id: String,
    /// Channel means followed by channel variances of the aggregated features.
    pub stat_vec: Vec<f64>,
    pub sem_vec: Option<Vec<f64>>,
    pub circle: Circle,
    pub valid_token_count: usize,
    pub area: usize,
    /// `valid_token_count` is below the configured minimum.
    pub thin_evidence: bool,
}

/// One parameter-free self-attention pass over the rows of `x`
/// (`Q = K = V = x`, scale `1/sqrt(C)`).
pub fn self_aggregate(x: &Array2<f64>) -> Array2<f64> {
    let scale = 1.0 / (x.ncols() as f64).sqrt();
    let scores = x.dot(&x.t()) * scale;
    softmax_rows(&scores).dot(x)
}

/// Describes every cluster of `mask`.
///
/// `fused` is the `C x h x w` fused feature grid; mask and token grids are
/// mapped onto it by nearest neighbor when their resolutions differ.
pub fn describe_regions(
    mask: &ClusterMask,
    fused: &Array3<f64>,
    tokens: &SemanticTokenGrid,
    min_tokens: usize,
) -> Result<Vec<RegionDescriptor>> {
    let (c, fh, fw) = fused.dim();
    let (h, w) = mask.grid_shape();
    if c == 0 || fh == 0 || fw == 0 {
        return Err(Error::Shape("empty fused feature grid".into()));
    }
    let sems = cluster_semantics(mask, tokens);
    (0..mask.n_clusters)
        .map(|label| {
            let cells = mask.cells(label);
            if cells.is_empty() {
                return Err(Error::Validation(format!("cluster {label} is empty")));
            }
            let rows = Array2::from_shape_fn((cells.len(), c), |(i, ch)| {
                let (y, x) = cells[i];
                let fy = ((2 * y + 1) * fh / (2 * h)).min(fh - 1);
                let fx = ((2 * x + 1) * fw / (2 * w)).min(fw - 1);
                fused[[ch, fy, fx]]
            });
            let agg = self_aggregate(&rows);
            let mean = agg.mean_axis(Axis(0)).expect("non-empty");
            let var = agg.var_axis(Axis(0), 0.0);
            let stat_vec: Vec<f64> = mean.iter().chain(var.iter()).cloned().collect();

            let points: Vec<(f64, f64)> = cells
                .iter()
                .map(|&(y, x)| ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64))
                .collect();
            let circle = minimum_enclosing_circle(&points).expect("non-empty cluster");
            let (sem, count) = &sems[label];
            Ok(RegionDescriptor {
                cluster_id: label,
                image_id: mask.image_id.clone(),
                stat_vec,
                sem_vec: sem.as_ref().map(|a| a.to_vec()),
                circle,
                valid_token_count: *count,
                area: cells.len(),
                thin_evidence: *count < min_tokens,
            })
        })
        .collect()
}
