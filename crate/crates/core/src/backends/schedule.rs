/// Scaled-linear beta schedule over 1000 training timesteps, the layout used
/// by latent diffusion checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas_cumprod: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::scaled_linear(1000, 0.00085, 0.012)
    }
}

impl NoiseSchedule {
    pub fn scaled_linear(train_steps: usize, beta_start: f64, beta_end: f64) -> Self {
        let (s0, s1) = (beta_start.sqrt(), beta_end.sqrt());
        let mut acc = 1.0;
        let alphas_cumprod = (0..train_steps)
            .map(|i| {
                let frac = if train_steps > 1 { i as f64 / (train_steps - 1) as f64 } else { 0.0 };
                let beta = (s0 + frac * (s1 - s0)).powi(2);
                acc *= 1.0 - beta;
                acc
            })
            .collect();
        Self { alphas_cumprod }
    }

    pub fn train_steps(&self) -> usize {
        self.alphas_cumprod.len()
    }

    /// Cumulative alpha; `None` stands for the clean end of the chain (1.0).
    pub fn alpha_bar(&self, timestep: Option<usize>) -> f64 {
        match timestep {
            Some(t) => self.alphas_cumprod[t.min(self.train_steps() - 1)],
            None => 1.0,
        }
    }

    /// Ascending DDIM timesteps with "leading" spacing and offset 1.
    pub fn ddim_timesteps(&self, steps: usize) -> Vec<usize> {
        let ratio = (self.train_steps() / steps.max(1)).max(1);
        (0..steps)
            .map(|i| (i * ratio + 1).min(self.train_steps() - 1))
            .collect()
    }
}
