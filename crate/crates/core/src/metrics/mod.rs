//! Evaluation harness: block features over a 4x4 grid of 128x128 blocks,
//! Hungarian-matched Style score and Gram loss, and ArtFID composition.
//! FID and LPIPS come from external providers.

mod blocks;
mod hungarian;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRecord;

pub use blocks::{block_features, gram_matrix, BlockFeatureExtractor, BlockFeatureSet, SyntheticBlockExtractor};
pub use hungarian::hungarian;

pub const EVAL_SIDE: usize = 512;
pub const BLOCK_SIDE: usize = 128;

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

fn check_pair(a: &BlockFeatureSet, b: &BlockFeatureSet) -> Result<()> {
    if a.blocks.is_empty() || a.blocks.len() != b.blocks.len() {
        return Err(Error::Shape(format!("block counts {} and {}", a.blocks.len(), b.blocks.len())));
    }
    let d = a.blocks[0].len();
    if a.blocks.iter().chain(&b.blocks).any(|v| v.len() != d) {
        return Err(Error::Shape("block feature dimensions differ".into()));
    }
    Ok(())
}

/// Matched block score with the assignment that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMatch {
    pub value: f64,
    /// Style block assigned to each stylized block.
    pub assignment: Vec<usize>,
    /// Stylized blocks whose matched pair had a zero-norm vector.
    #[serde(default)]
    pub zero_norm_blocks: Vec<usize>,
}

/// Mean cosine similarity of stylized blocks to their one-to-one
/// (Hungarian) matched style blocks.
pub fn style_score(stylized: &BlockFeatureSet, style: &BlockFeatureSet) -> Result<BlockMatch> {
    check_pair(stylized, style)?;
    let n = stylized.blocks.len();
    let sims: Vec<Vec<Option<f64>>> = stylized
        .blocks
        .iter()
        .map(|a| style.blocks.iter().map(|b| cosine(a, b)).collect())
        .collect();
    let cost = ndarray::Array2::from_shape_fn((n, n), |(i, j)| 1.0 - sims[i][j].unwrap_or(0.0));
    let (assignment, _) = hungarian(&cost)?;
    let mut zero_norm_blocks = Vec::new();
    let mut total = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        match sims[i][j] {
            Some(s) => total += s,
            None => zero_norm_blocks.push(i),
        }
    }
    Ok(BlockMatch {
        value: total / n as f64,
        assignment,
        zero_norm_blocks,
    })
}

/// Mean L1 distance between Gram matrices of Hungarian-matched blocks.
pub fn gram_loss(stylized: &BlockFeatureSet, style: &BlockFeatureSet) -> Result<BlockMatch> {
    check_pair(stylized, style)?;
    let n = stylized.maps.len();
    if n != stylized.blocks.len() || style.maps.len() != n {
        return Err(Error::Shape("block feature maps missing".into()));
    }
    let ga: Vec<_> = stylized.maps.iter().map(gram_matrix).collect();
    let gb: Vec<_> = style.maps.iter().map(gram_matrix).collect();
    if ga.iter().chain(&gb).any(|g| g.dim() != ga[0].dim()) {
        return Err(Error::Shape("block feature map channels differ".into()));
    }
    let cost = ndarray::Array2::from_shape_fn((n, n), |(i, j)| (&ga[i] - &gb[j]).iter().map(|v| v.abs()).sum());
    let (assignment, total) = hungarian(&cost)?;
    Ok(BlockMatch {
        value: total / n as f64,
        assignment,
        zero_norm_blocks: Vec::new(),
    })
}

/// `(1 + FID) * (1 + LPIPS)`.
pub fn art_fid(fid: f64, lpips: f64) -> Result<f64> {
    if !(fid >= 0.0) || !(lpips >= 0.0) {
        return Err(Error::Argument(format!("FID and LPIPS must be >= 0, got {fid} and {lpips}")));
    }
    Ok((1.0 + fid) * (1.0 + lpips))
}

/// Distribution distance between two image sets.
pub trait FidProvider: Send + Sync {
    fn fid(&self, generated: &[ImageRecord], reference: &[ImageRecord]) -> Result<f64>;
}

/// Perceptual distance between two images.
pub trait LpipsProvider: Send + Sync {
    fn lpips(&self, a: &ImageRecord, b: &ImageRecord) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub style: f64,
    pub gram: f64,
    pub fid: Option<f64>,
    pub lpips: Option<f64>,
    pub artfid: Option<f64>,
}

impl MetricReport {
    pub fn new(style: f64, gram: f64, fid: Option<f64>, lpips: Option<f64>) -> Result<Self> {
        let artfid = match (fid, lpips) {
            (Some(f), Some(l)) => Some(art_fid(f, l)?),
            _ => None,
        };
        Ok(Self {
            style,
            gram,
            fid,
            lpips,
            artfid,
        })
    }
}
