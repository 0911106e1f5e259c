use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::backends::FeatureStack;
use crate::error::{Error, Result};

/// Sigmoid step weight `1 / (1 + exp(steepness * (t/T - inflection)))`.
pub fn raw_weight(t: usize, total_steps: usize, steepness: f64, inflection: f64) -> f64 {
    let r = t as f64 / total_steps as f64;
    1.0 / (1.0 + (steepness * (r - inflection)).exp())
}

/// Normalized index-adaptive weights for steps `0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub total_steps: usize,
    pub steepness: f64,
    pub inflection: f64,
    pub normalized: Vec<f64>,
}

impl FusionWeights {
    pub const DEFAULT_STEEPNESS: f64 = 5.0;
    pub const DEFAULT_INFLECTION: f64 = 0.7;

    pub fn new(total_steps: usize) -> Result<Self> {
        Self::with_shape(total_steps, Self::DEFAULT_STEEPNESS, Self::DEFAULT_INFLECTION)
    }

    pub fn with_shape(total_steps: usize, steepness: f64, inflection: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Argument("fusion needs total_steps >= 1".into()));
        }
        let raw: Vec<f64> = (0..=total_steps)
            .map(|t| raw_weight(t, total_steps, steepness, inflection))
            .collect();
        let sum: f64 = raw.iter().sum();
        Ok(Self {
            total_steps,
            steepness,
            inflection,
            normalized: raw.into_iter().map(|d| d / sum).collect(),
        })
    }
}

/// Populates `fused` with the weighted sum of the per-step grids.
pub fn fuse_features(mut stack: FeatureStack, weights: &FusionWeights) -> Result<FeatureStack> {
    if weights.total_steps != stack.total_steps || stack.per_step.len() != weights.normalized.len() {
        return Err(Error::Shape(format!(
            "fusion weights cover {} steps, stack has {} ({} grids)",
            weights.total_steps,
            stack.total_steps,
            stack.per_step.len()
        )));
    }
    let first = stack
        .per_step
        .first()
        .ok_or_else(|| Error::Shape("empty feature stack".into()))?;
    let mut fused = Array3::zeros(first.raw_dim());
    for (grid, &w) in stack.per_step.iter().zip(&weights.normalized) {
        if grid.raw_dim() != fused.raw_dim() {
            return Err(Error::Shape("per-step feature grids differ in shape".into()));
        }
        fused.scaled_add(w, grid);
    }
    stack.fused = Some(fused);
    Ok(stack)
}
