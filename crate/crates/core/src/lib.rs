//! Semantic-aware style transfer from an arbitrary gallery of style images.
//!
//! Stages: [`clustering`] splits content and style images into semantic
//! regions from fused diffusion features, [`matching`] pairs every content
//! region with the most similar style region across the gallery, and
//! [`transfer`] runs DDIM sampling with latent updates driven by regional
//! attention losses. [`metrics`] holds the evaluation harness and
//! [`backends`] the model-facing provider traits with a deterministic
//! synthetic implementation.

pub mod backends;
pub mod clustering;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod image;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod transfer;

pub use backends::{
    AttentionBundle, BackendConfig, BackendKind, BundleGrad, Denoiser, DepthProvider, FeatureStack, LatentState,
    Providers, SemanticProvider, SemanticTokenGrid,
};
pub use clustering::{ClusterMask, ClusterOptConfig, Provenance};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use image::{ImageRecord, ImageRole};
pub use matching::{MatchEntry, MatchOrigin, MatchTable, Override, RegionDescriptor, SimilarityConfig};
pub use metrics::{BlockFeatureSet, MetricReport};
pub use pipeline::{ImageAnalysis, RunManifest};
pub use transfer::{LossConfig, LossReport, SparseAttentionPlan, TransferOutcome};
