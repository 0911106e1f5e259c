use ndarray::Array3;

use super::{
    AttentionBundle, BundleGrad, Denoiser, FeatureStack, LatentState, NoiseSchedule, SemanticProvider,
    SemanticTokenGrid,
};
use crate::error::{Error, Result};
use crate::image::ImageRecord;

/// Handle to pretrained latent-diffusion weights referenced by URI.
///
/// Weights are resolved on first use. This build links no tensor runtime, so
/// every model call reports [`Error::BackendUnavailable`] instead of silently
/// substituting the synthetic backend.
#[derive(Debug, Clone)]
pub struct DiffusionBackend {
    weights_uri: String,
    site: String,
    schedule: NoiseSchedule,
}

impl DiffusionBackend {
    pub fn new(weights_uri: String, site: String) -> Self {
        Self {
            weights_uri,
            site,
            schedule: NoiseSchedule::default(),
        }
    }

    fn unavailable(&self) -> Error {
        let local = self.weights_uri.strip_prefix("file://").unwrap_or(&self.weights_uri);
        let reason = if std::path::Path::new(local).exists() {
            format!("weights found at `{}` but no diffusion runtime is compiled in", self.weights_uri)
        } else {
            format!("weights not found at `{}`", self.weights_uri)
        };
        Error::BackendUnavailable {
            kind: "diffusion".into(),
            reason,
        }
    }
}

impl Denoiser for DiffusionBackend {
    fn grid_stride(&self) -> usize {
        16
    }

    fn feature_grid(&self, _height: usize, _width: usize) -> Result<(usize, usize)> {
        Err(self.unavailable())
    }

    fn latent_shape(&self, _height: usize, _width: usize) -> Result<(usize, usize, usize)> {
        Err(self.unavailable())
    }

    fn extraction_site(&self) -> &str {
        &self.site
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn num_attention_layers(&self) -> usize {
        16
    }

    fn encode(&self, _image: &ImageRecord) -> Result<LatentState> {
        Err(self.unavailable())
    }

    fn decode(&self, _latent: &LatentState) -> Result<ImageRecord> {
        Err(self.unavailable())
    }

    fn predict_x0(&self, _z: &Array3<f64>, _timestep: usize) -> Result<Array3<f64>> {
        Err(self.unavailable())
    }

    fn invert_and_extract(&self, _image: &ImageRecord, _steps: usize) -> Result<(FeatureStack, LatentState)> {
        Err(self.unavailable())
    }

    fn sample_step_attention(&self, _latent: &LatentState, _layer_ids: &[usize]) -> Result<Vec<AttentionBundle>> {
        Err(self.unavailable())
    }

    fn attention_vjp(&self, _latent: &LatentState, _grads: &[BundleGrad]) -> Result<Array3<f64>> {
        Err(self.unavailable())
    }
}

impl SemanticProvider for DiffusionBackend {
    fn patch_stride(&self) -> usize {
        16
    }

    fn semantic_tokens(&self, _image: &ImageRecord) -> Result<SemanticTokenGrid> {
        Err(self.unavailable())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageRole;

    #[test]
    fn missing_weights_name_the_synthetic_fallback() {
        let b = DiffusionBackend::new("/nonexistent/sd15.safetensors".into(), "up_blocks.2".into());
        let img = ImageRecord::new("x", Array3::zeros((16, 16, 3)), ImageRole::Content).unwrap();
        let msg = b.invert_and_extract(&img, 15).unwrap_err().to_string();
        assert!(msg.contains("not found"));
        assert!(msg.contains("synthetic"));
    }
}
