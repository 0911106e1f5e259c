use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::{Array3, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{bundle_shapes, global_content_loss, regional_style_loss, total_loss, SparseAttentionPlan};
use super::{Adam, LossConfig};
use crate::backends::synthetic::{ddim_move, keyed_rng};
use crate::backends::{AttentionBundle, BundleGrad, Denoiser, LatentState};
use crate::clustering::ClusterMask;
use crate::error::{Error, Result};
use crate::image::{ImageRecord, ImageRole};
use crate::matching::MatchTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// 1-based optimization step.
    pub step: usize,
    /// Denoising timestep of the optimized latent; `None` is the clean end.
    pub timestep: Option<usize>,
    pub rsl: f64,
    pub gcl: f64,
    pub total: f64,
    pub per_pair_rsl: Vec<f64>,
}

pub struct TransferInputs<'a> {
    pub content: &'a ImageRecord,
    pub styles: &'a [ImageRecord],
    pub content_mask: &'a ClusterMask,
    pub style_masks: &'a [ClusterMask],
    pub matches: &'a MatchTable,
}

/// How the optimization steps were laid over the denoising schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    /// Descending DDIM timesteps; each step moves to the next one (or to the
    /// clean latent after the last).
    pub timesteps: Vec<usize>,
    pub inner_steps: usize,
    pub opt_steps: usize,
    pub layer_ids: Vec<usize>,
    /// `(layer_id, pair index)` with an empty mask at that layer.
    pub vanished: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub image: ImageRecord,
    pub reports: Vec<LossReport>,
    pub schedule: SamplingSchedule,
    pub final_latent: LatentState,
}

/// Standard normal tensor drawn from a stream keyed by `parts`.
pub fn seeded_noise(shape: (usize, usize, usize), parts: &[&[u8]]) -> Array3<f64> {
    let mut rng = keyed_rng(parts);
    Array3::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng))
}

fn noised(den: &dyn Denoiser, clean: &Array3<f64>, eps: &Array3<f64>, t: Option<usize>) -> Array3<f64> {
    let ab = den.schedule().alpha_bar(t);
    clean * ab.sqrt() + eps * (1.0 - ab).sqrt()
}

fn add_grads(into: &mut [BundleGrad], from: &[BundleGrad], scale: f64) {
    for (a, b) in into.iter_mut().zip(from) {
        a.dq.scaled_add(scale, &b.dq);
        a.dk.scaled_add(scale, &b.dk);
        a.dv.scaled_add(scale, &b.dv);
    }
}

fn all_finite(g: &BundleGrad) -> bool {
    g.dq.iter().chain(g.dk.iter()).chain(g.dv.iter()).all(|v| v.is_finite())
}

/// Total loss at `latent` and its gradient with respect to the latent.
///
/// `step` only labels diagnostics and the returned report.
pub fn loss_and_gradient(
    den: &dyn Denoiser,
    latent: &LatentState,
    layer_ids: &[usize],
    content: &[AttentionBundle],
    style: &[Vec<AttentionBundle>],
    plan: &SparseAttentionPlan,
    cfg: &LossConfig,
    step: usize,
) -> Result<(LossReport, Array3<f64>)> {
    let gen = den.sample_step_attention(latent, layer_ids)?;
    let gcl = global_content_loss(&gen, content, true)?;
    let mut grads: Vec<BundleGrad> = gen.iter().map(BundleGrad::zeros_like).collect();
    add_grads(&mut grads, gcl.grads.as_deref().unwrap_or_default(), cfg.lambda_c);
    let (rsl, per_pair) = if cfg.rsl_enabled {
        let r = regional_style_loss(&gen, style, plan, true)?;
        for (l, v) in r.per_layer.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    quantity: "regional style loss",
                    step,
                    layer: layer_ids[l],
                });
            }
        }
        add_grads(&mut grads, r.grads.as_deref().unwrap_or_default(), 1.0);
        (r.total, r.per_pair)
    } else {
        (0.0, vec![0.0; plan.pairs.len()])
    };
    for (l, v) in gcl.per_layer.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                quantity: "content loss",
                step,
                layer: layer_ids[l],
            });
        }
    }
    if let Some(g) = grads.iter().find(|g| !all_finite(g)) {
        return Err(Error::NonFinite {
            quantity: "attention gradient",
            step,
            layer: g.layer_id,
        });
    }
    let dz = den.attention_vjp(latent, &grads)?;
    if dz.iter().any(|v| !v.is_finite()) {
        // Locate the offending layer.
        for g in &grads {
            let part = den.attention_vjp(latent, std::slice::from_ref(g))?;
            if part.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    quantity: "latent gradient",
                    step,
                    layer: g.layer_id,
                });
            }
        }
    }
    let report = LossReport {
        step,
        timestep: None,
        rsl,
        gcl: gcl.total,
        total: total_loss(rsl, gcl.total, cfg),
        per_pair_rsl: per_pair,
    };
    Ok((report, dz))
}

/// DDIM sampling from seeded noise with `opt_steps` Adam updates of the
/// latent against the regional style and global content losses.
///
/// The content branch reuses the generation's initial noise; each style image
/// gets its own seeded noise. `observer` sees every report together with the
/// updated latent. Setting `cancel` aborts before the next step.
pub fn guided_sampling(
    den: &dyn Denoiser,
    inputs: &TransferInputs<'_>,
    cfg: &LossConfig,
    observer: &mut dyn FnMut(&LossReport, &LatentState),
    cancel: Option<&AtomicBool>,
) -> Result<TransferOutcome> {
    cfg.validate()?;
    if inputs.styles.is_empty() || inputs.styles.len() != inputs.style_masks.len() {
        return Err(Error::Validation(format!(
            "{} style images with {} style masks",
            inputs.styles.len(),
            inputs.style_masks.len()
        )));
    }
    let layer_ids = cfg.layers.clone().unwrap_or_else(|| den.default_layer_ids());
    let seed = cfg.seed.to_le_bytes();

    let content_clean = den.encode(inputs.content)?.z;
    let eps_content = seeded_noise(content_clean.dim(), &[b"init-noise", &seed]);
    let style_clean: Vec<Array3<f64>> = inputs
        .styles
        .iter()
        .map(|s| den.encode(s).map(|l| l.z))
        .collect::<Result<_>>()?;
    let style_eps: Vec<Array3<f64>> = style_clean
        .iter()
        .enumerate()
        .map(|(i, z)| seeded_noise(z.dim(), &[b"style-noise", &seed, &(i as u64).to_le_bytes()]))
        .collect();

    let state = |z: Array3<f64>, t: Option<usize>, id: &str| LatentState {
        id: id.to_string(),
        z,
        timestep: t.unwrap_or(0),
    };

    // Layer shapes depend only on latent size, so probe once.
    let probe = den.sample_step_attention(&state(content_clean.clone(), None, "probe"), &layer_ids)?;
    let style_shapes: Vec<Vec<(usize, usize)>> = style_clean
        .iter()
        .map(|z| {
            den.sample_step_attention(&state(z.clone(), None, "probe"), &layer_ids)
                .map(|b| b.iter().map(|x| x.spatial_shape).collect())
        })
        .collect::<Result<_>>()?;
    let plan = SparseAttentionPlan::build(
        inputs.content_mask,
        inputs.style_masks,
        inputs.matches,
        &bundle_shapes(&probe),
        &style_shapes,
    )?;
    for &(layer, pair) in &plan.vanished {
        log::info!("pair {pair} has an empty mask at layer {layer}; it contributes no loss there");
    }

    let mut timesteps = den.schedule().ddim_timesteps(cfg.denoise_steps);
    timesteps.reverse();
    let schedule = SamplingSchedule {
        timesteps: timesteps.clone(),
        inner_steps: cfg.inner_steps(),
        opt_steps: cfg.opt_steps,
        layer_ids: layer_ids.clone(),
        vanished: plan.vanished.clone(),
    };

    let mut adam = Adam::new(cfg.eta, cfg.adam_betas, cfg.adam_eps);
    let mut z = eps_content.clone();
    let mut reports = Vec::with_capacity(cfg.opt_steps);
    for (i, &t) in timesteps.iter().enumerate() {
        let to = timesteps.get(i + 1).copied();
        z = ddim_move(den, &z, Some(t), to)?;
        if reports.len() >= cfg.opt_steps {
            continue;
        }
        let content_ref = state(noised(den, &content_clean, &eps_content, to), to, "content");
        let content_bundles = den.sample_step_attention(&content_ref, &layer_ids)?;
        let style_bundles: Vec<Vec<AttentionBundle>> = style_clean
            .iter()
            .zip(&style_eps)
            .map(|(c, e)| den.sample_step_attention(&state(noised(den, c, e, to), to, "style"), &layer_ids))
            .collect::<Result<_>>()?;
        for _ in 0..schedule.inner_steps {
            if reports.len() >= cfg.opt_steps {
                break;
            }
            let step = reports.len() + 1;
            if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                return Err(Error::Cancelled(step));
            }
            let current = state(z.clone(), to, "generated");
            let (mut report, dz) =
                loss_and_gradient(den, &current, &layer_ids, &content_bundles, &style_bundles, &plan, cfg, step)?;
            report.timestep = to;
            adam.step(&mut z, &dz);
            if Zip::from(&z).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    quantity: "latent",
                    step,
                    layer: layer_ids.first().copied().unwrap_or(0),
                });
            }
            observer(&report, &state(z.clone(), to, "generated"));
            reports.push(report);
        }
    }

    let final_latent = state(z, None, "generated");
    let mut image = den.decode(&final_latent)?;
    image.id = format!("{}-stylized", inputs.content.id);
    image.role = ImageRole::Content;
    Ok(TransferOutcome {
        image,
        reports,
        schedule,
        final_latent,
    })
}
