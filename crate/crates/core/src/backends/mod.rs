//! Provider interfaces for every learned-model feature the pipeline consumes.
//!
//! A [`Denoiser`] supplies inversion features, latents and self-attention
//! captures (with their vector-Jacobian product, so guided sampling can
//! differentiate through them). [`SemanticProvider`] and [`DepthProvider`]
//! supply per-patch tokens and a depth cue. The [`synthetic`] implementations
//! are deterministic and CPU-only.

mod diffusion;
mod schedule;
pub mod synthetic;

use std::sync::Arc;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRecord;
use crate::metrics::{BlockFeatureExtractor, SyntheticBlockExtractor};

pub use diffusion::DiffusionBackend;
pub use schedule::NoiseSchedule;
pub use synthetic::{SyntheticDenoiser, SyntheticDepth, SyntheticParams, SyntheticSemantics};

/// Per-timestep intermediate denoiser features for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub image_id: String,
    /// `total_steps + 1` grids of shape `C x h x w`, indexed by inversion step.
    pub per_step: Vec<Array3<f64>>,
    pub fused: Option<Array3<f64>>,
    pub grid_shape: (usize, usize),
    pub total_steps: usize,
    pub extraction_site: String,
}

impl FeatureStack {
    pub fn channels(&self) -> usize {
        self.per_step.first().map_or(0, |f| f.dim().0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTokenGrid {
    pub image_id: String,
    /// `gh x gw x D`.
    pub tokens: Array3<f64>,
    pub grid_shape: (usize, usize),
}

impl SemanticTokenGrid {
    pub fn dim(&self) -> usize {
        self.tokens.dim().2
    }

    pub fn token(&self, y: usize, x: usize) -> ndarray::ArrayView1<'_, f64> {
        self.tokens.slice(ndarray::s![y, x, ..])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub id: String,
    /// `C' x h' x w'`.
    pub z: Array3<f64>,
    pub timestep: usize,
}

/// Self-attention inputs captured from one layer; rows are spatial cells.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    pub layer_id: usize,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub spatial_shape: (usize, usize),
}

impl AttentionBundle {
    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn d(&self) -> usize {
        self.q.ncols()
    }
}

/// Upstream gradient with respect to one captured bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleGrad {
    pub layer_id: usize,
    pub dq: Array2<f64>,
    pub dk: Array2<f64>,
    pub dv: Array2<f64>,
}

impl BundleGrad {
    pub fn zeros_like(b: &AttentionBundle) -> Self {
        Self {
            layer_id: b.layer_id,
            dq: Array2::zeros(b.q.raw_dim()),
            dk: Array2::zeros(b.k.raw_dim()),
            dv: Array2::zeros(b.v.raw_dim()),
        }
    }
}

/// A pretrained latent denoiser as seen by the pipeline.
pub trait Denoiser: Send + Sync {
    /// Image height and width must be multiples of this.
    fn grid_stride(&self) -> usize;

    /// Clustering/feature grid for an image of the given size.
    fn feature_grid(&self, height: usize, width: usize) -> Result<(usize, usize)>;

    fn latent_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)>;

    /// Named layer the per-step features are read from.
    fn extraction_site(&self) -> &str;

    fn schedule(&self) -> &NoiseSchedule;

    fn num_attention_layers(&self) -> usize;

    /// The last six self-attention layers.
    fn default_layer_ids(&self) -> Vec<usize> {
        let n = self.num_attention_layers();
        (n.saturating_sub(6)..n).collect()
    }

    fn encode(&self, image: &ImageRecord) -> Result<LatentState>;

    fn decode(&self, latent: &LatentState) -> Result<ImageRecord>;

    /// Clean-latent prediction for `z` at `timestep`.
    fn predict_x0(&self, z: &Array3<f64>, timestep: usize) -> Result<Array3<f64>>;

    /// DDIM inversion over `steps` timesteps, returning `steps + 1` feature
    /// grids (step 0 included) and the final noised latent.
    fn invert_and_extract(&self, image: &ImageRecord, steps: usize) -> Result<(FeatureStack, LatentState)>;

    /// Captures one bundle per requested layer without mutating the latent.
    fn sample_step_attention(&self, latent: &LatentState, layer_ids: &[usize]) -> Result<Vec<AttentionBundle>>;

    /// Pulls gradients on captured bundles back to the latent.
    fn attention_vjp(&self, latent: &LatentState, grads: &[BundleGrad]) -> Result<Array3<f64>>;
}

pub trait SemanticProvider: Send + Sync {
    fn patch_stride(&self) -> usize;

    fn semantic_tokens(&self, image: &ImageRecord) -> Result<SemanticTokenGrid>;
}

pub trait DepthProvider: Send + Sync {
    /// Single-channel grid at `grid_stride` resolution.
    fn depth_features(&self, image: &ImageRecord, grid_stride: usize) -> Result<Array2<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Diffusion,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "diffusion" => Ok(Self::Diffusion),
            other => Err(Error::Argument(format!("unknown backend kind `{other}`"))),
        }
    }
}

/// `backend.*` configuration keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub seed: u64,
    pub weights_uri: Option<String>,
    pub extraction_site: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Synthetic,
            seed: 0,
            weights_uri: None,
            extraction_site: synthetic::DEFAULT_SITE.to_string(),
        }
    }
}

/// Every provider one pipeline run needs. Immutable and shareable.
#[derive(Clone)]
pub struct Providers {
    pub denoiser: Arc<dyn Denoiser>,
    pub semantic: Arc<dyn SemanticProvider>,
    pub depth: Option<Arc<dyn DepthProvider>>,
    pub blocks: Arc<dyn BlockFeatureExtractor>,
}

impl std::fmt::Debug for Providers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Providers")
            .field("extraction_site", &self.denoiser.extraction_site())
            .field("depth", &self.depth.is_some())
            .finish()
    }
}

impl Providers {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self> {
        match cfg.kind {
            BackendKind::Synthetic => Ok(Self::synthetic_with(SyntheticParams {
                seed: cfg.seed,
                extraction_site: cfg.extraction_site.clone(),
                ..SyntheticParams::default()
            })),
            BackendKind::Diffusion => {
                let uri = cfg.weights_uri.clone().ok_or_else(|| Error::BackendUnavailable {
                    kind: "diffusion".into(),
                    reason: "backend.weights_uri is not set".into(),
                })?;
                let backend = Arc::new(DiffusionBackend::new(uri, cfg.extraction_site.clone()));
                Ok(Self {
                    denoiser: backend.clone(),
                    semantic: backend,
                    depth: None,
                    blocks: Arc::new(SyntheticBlockExtractor),
                })
            }
        }
    }

    pub fn synthetic(seed: u64) -> Self {
        Self::synthetic_with(SyntheticParams {
            seed,
            ..SyntheticParams::default()
        })
    }

    pub fn synthetic_with(params: SyntheticParams) -> Self {
        let stride = params.feature_stride;
        Self {
            denoiser: Arc::new(SyntheticDenoiser::new(params)),
            semantic: Arc::new(SyntheticSemantics::new(stride)),
            depth: Some(Arc::new(SyntheticDepth)),
            blocks: Arc::new(SyntheticBlockExtractor),
        }
    }

    pub fn without_depth(mut self) -> Self {
        self.depth = None;
        self
    }
}
