use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::{BLOCK_SIDE, EVAL_SIDE};
use crate::image::ImageRecord;

/// Per-block feature source for the Style and Gram metrics.
pub trait BlockFeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    /// Pooled descriptor of one block.
    fn block_vector(&self, block: &ImageRecord) -> Vec<f64>;

    /// `channels x positions` feature map of one block.
    fn block_map(&self, block: &ImageRecord) -> Array2<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFeatureSet {
    pub image_id: String,
    /// Row-major over `block_grid`.
    pub blocks: Vec<Vec<f64>>,
    #[serde(skip)]
    pub maps: Vec<Array2<f64>>,
    pub block_grid: (usize, usize),
    /// How the input was brought to the evaluation size, if it was.
    pub normalization: Option<String>,
}

/// `F F^T / P` for a `C x P` map.
pub fn gram_matrix(map: &Array2<f64>) -> Array2<f64> {
    map.dot(&map.t()) / map.ncols().max(1) as f64
}

/// Splits an image into 16 non-overlapping 128x128 blocks after bringing it
/// to 512x512 (center square crop, then resize).
pub fn block_features(image: &ImageRecord, extractor: &dyn BlockFeatureExtractor) -> BlockFeatureSet {
    let (h, w) = (image.height(), image.width());
    let (img, normalization) = if (h, w) == (EVAL_SIDE, EVAL_SIDE) {
        (image.clone(), None)
    } else {
        let side = h.min(w);
        let img = image.center_square(side).resized(EVAL_SIDE, EVAL_SIDE);
        (img, Some(format!("center-cropped {h}x{w} to {side}x{side}, resized to {EVAL_SIDE}x{EVAL_SIDE}")))
    };
    let n = EVAL_SIDE / BLOCK_SIDE;
    let mut blocks = Vec::with_capacity(n * n);
    let mut maps = Vec::with_capacity(n * n);
    for by in 0..n {
        for bx in 0..n {
            let pixels = img
                .pixels
                .slice(s![by * BLOCK_SIDE..(by + 1) * BLOCK_SIDE, bx * BLOCK_SIDE..(bx + 1) * BLOCK_SIDE, ..])
                .to_owned();
            let block = ImageRecord {
                id: format!("{}#{}", image.id, by * n + bx),
                pixels,
                role: image.role,
                source_path: String::new(),
            };
            blocks.push(extractor.block_vector(&block));
            maps.push(extractor.block_map(&block));
        }
    }
    BlockFeatureSet {
        image_id: image.id.clone(),
        blocks,
        maps,
        block_grid: (n, n),
        normalization,
    }
}

/// Color histogram plus gradient statistics; maps are pooled color,
/// luminance and gradient planes.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticBlockExtractor;

const BINS: usize = 4;
const POOL: usize = 16;

fn gradients(image: &ImageRecord) -> (Array2<f64>, Array2<f64>) {
    let l = image.luminance();
    let (h, w) = l.dim();
    let gx = Array2::from_shape_fn((h, w), |(y, x)| (l[[y, (x + 1).min(w - 1)]] - l[[y, x.saturating_sub(1)]]) / 2.0);
    let gy = Array2::from_shape_fn((h, w), |(y, x)| (l[[(y + 1).min(h - 1), x]] - l[[y.saturating_sub(1), x]]) / 2.0);
    (gx, gy)
}

impl BlockFeatureExtractor for SyntheticBlockExtractor {
    fn name(&self) -> &str {
        "synthetic-color-gradient"
    }

    fn block_vector(&self, block: &ImageRecord) -> Vec<f64> {
        let (h, w) = (block.height(), block.width());
        let n = (h * w) as f64;
        let bin = |v: f64| ((v * BINS as f64) as usize).min(BINS - 1);
        let mut out = vec![0.0; BINS * BINS * BINS + 4];
        for y in 0..h {
            for x in 0..w {
                let p = block.pixels.slice(s![y, x, ..]);
                out[(bin(p[0]) * BINS + bin(p[1])) * BINS + bin(p[2])] += 1.0 / n;
            }
        }
        let (gx, gy) = gradients(block);
        let mag = (&gx * &gx + &gy * &gy).mapv(f64::sqrt);
        let tail = BINS * BINS * BINS;
        out[tail] = mag.mean().unwrap_or(0.0);
        out[tail + 1] = mag.std(0.0);
        out[tail + 2] = gx.mapv(f64::abs).mean().unwrap_or(0.0);
        out[tail + 3] = gy.mapv(f64::abs).mean().unwrap_or(0.0);
        out
    }

    fn block_map(&self, block: &ImageRecord) -> Array2<f64> {
        let (h, w) = (block.height(), block.width());
        let (ph, pw) = (h / POOL, w / POOL);
        let (gx, gy) = gradients(block);
        let l = block.luminance();
        let mut map = Array2::zeros((6, ph * pw));
        let norm = (POOL * POOL) as f64;
        for y in 0..ph * POOL {
            for x in 0..pw * POOL {
                let cell = (y / POOL) * pw + x / POOL;
                for c in 0..3 {
                    map[[c, cell]] += block.pixels[[y, x, c]] / norm;
                }
                map[[3, cell]] += l[[y, x]] / norm;
                map[[4, cell]] += gx[[y, x]].abs() / norm;
                map[[5, cell]] += gy[[y, x]].abs() / norm;
            }
        }
        map
    }
}
