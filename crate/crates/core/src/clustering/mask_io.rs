//! Label-map files: a single-channel 16-bit PNG (pixel value = label) plus
//! a JSON sidecar.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ClusterMask, ClusterOptConfig, Provenance};
use crate::error::{Error, Result};

/// Marks unlabeled cells in 16-bit external masks (255 in 8-bit ones).
pub const UNKNOWN_LABEL_16: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub image_id: String,
    pub n_clusters: usize,
    pub provenance: Provenance,
    pub grid_shape: (usize, usize),
    pub config: ClusterOptConfig,
    #[serde(default)]
    pub warnings: Vec<String>,
}

pub fn encode_png(mask: &ClusterMask) -> Result<Vec<u8>> {
    let (h, w) = mask.grid_shape();
    if mask.n_clusters >= usize::from(UNKNOWN_LABEL_16) {
        return Err(Error::Argument(format!("{} clusters do not fit a 16-bit label map", mask.n_clusters)));
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([mask.labels[[y as usize, x as usize]] as u16]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Decodes a grayscale label PNG; the maximum code value means "unknown".
pub fn decode_labels(bytes: &[u8]) -> Result<Array2<Option<usize>>> {
    let img = image::load_from_memory(bytes)?;
    let (unknown, gray) = match img {
        image::DynamicImage::ImageLuma8(g) => (255u16, image::DynamicImage::ImageLuma8(g).to_luma16()),
        other => (UNKNOWN_LABEL_16, other.to_luma16()),
    };
    let (w, h) = gray.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        let v = gray.get_pixel(x as u32, y as u32)[0];
        // to_luma16 scales 8-bit values by 257.
        let v = if unknown == 255 { v / 257 } else { v };
        (v != unknown).then_some(usize::from(v))
    }))
}

pub fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.mask.png")), dir.join(format!("{stem}.mask.json")))
}

pub fn write_mask(dir: &Path, stem: &str, mask: &ClusterMask, cfg: &ClusterOptConfig) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let (png, json) = paths(dir, stem);
    std::fs::write(&png, encode_png(mask)?)?;
    let sidecar = MaskSidecar {
        image_id: mask.image_id.clone(),
        n_clusters: mask.n_clusters,
        provenance: mask.provenance,
        grid_shape: mask.grid_shape(),
        config: cfg.clone(),
        warnings: mask.warnings.clone(),
    };
    std::fs::write(&json, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok((png, json))
}

/// Reads a mask PNG and its sidecar (`<stem>.mask.json` next to it).
pub fn read_mask(png: &Path) -> Result<(ClusterMask, MaskSidecar)> {
    let labels = decode_labels(&std::fs::read(png)?)?;
    let name = png.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let stem = name.strip_suffix(".mask.png").unwrap_or(name.trim_end_matches(".png"));
    let json = png.with_file_name(format!("{stem}.mask.json"));
    let sidecar: MaskSidecar = serde_json::from_slice(&std::fs::read(&json)?)?;
    if labels.iter().any(Option::is_none) {
        return Err(Error::Format("mask contains unknown cells".into()));
    }
    let labels = labels.mapv(|l| l.expect("checked"));
    let mut mask = ClusterMask::from_labels(sidecar.image_id.clone(), labels, sidecar.provenance);
    mask.warnings = sidecar.warnings.clone();
    if mask.n_clusters != sidecar.n_clusters {
        return Err(Error::Format(format!(
            "sidecar declares {} clusters, label map has {}",
            sidecar.n_clusters, mask.n_clusters
        )));
    }
    Ok((mask, sidecar))
}
