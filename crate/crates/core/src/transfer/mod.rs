//! Energy-guided sampling: masked sparse attention losses between matched
//! region pairs, the global content loss, and Adam updates on the latent
//! inside the DDIM schedule.

mod adam;
mod attention;
mod loss;
mod sampling;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::Adam;
pub use attention::{attention, masked_attention, masked_attention_backward, softmax_rows, AttentionGrads};
pub use loss::{
    bundle_shapes, global_content_loss, regional_style_loss, total_loss, ContentLoss, LayerMasks, PairPlan,
    RegionalLoss, SparseAttentionPlan,
};
pub use sampling::{
    guided_sampling, loss_and_gradient, seeded_noise, LossReport, SamplingSchedule, TransferInputs, TransferOutcome,
};

/// `transfer.*` configuration keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_c: f64,
    pub eta: f64,
    pub opt_steps: usize,
    pub denoise_steps: usize,
    /// `None` selects the backend's last six self-attention layers.
    pub layers: Option<Vec<usize>>,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    /// Disabling drops the regional style term (content-only ablation).
    pub rsl_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_c: 0.26,
            eta: 0.05,
            opt_steps: 150,
            denoise_steps: 50,
            layers: None,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            rsl_enabled: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= 0.0) || !self.lambda_c.is_finite() {
            return Err(Error::Validation(format!("lambda_c must be >= 0, got {}", self.lambda_c)));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Validation(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.opt_steps == 0 || self.denoise_steps == 0 {
            return Err(Error::Validation("opt_steps and denoise_steps must be >= 1".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return Err(Error::Validation("adam betas must lie in [0, 1) and eps must be > 0".into()));
        }
        Ok(())
    }

    /// Inner gradient steps run after each denoising step.
    pub fn inner_steps(&self) -> usize {
        self.opt_steps.div_ceil(self.denoise_steps)
    }
}
