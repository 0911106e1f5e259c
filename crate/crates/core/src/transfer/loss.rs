use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::attention::{masked_attention, masked_attention_backward};
use super::LossConfig;
use crate::backends::{AttentionBundle, BundleGrad};
use crate::clustering::{resize_nearest, ClusterMask};
use crate::error::{Error, Result};
use crate::matching::MatchTable;

/// One matched region pair, mirroring a MatchTable entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPlan {
    pub content_cluster: usize,
    pub style_image: String,
    /// Position of the style image in the run's style list.
    pub style_index: usize,
    pub style_cluster: usize,
}

/// Zero/one cell masks of every pair at one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMasks {
    pub layer_id: usize,
    pub content_shape: (usize, usize),
    /// One per pair, over the generated/content bundle's cells.
    pub content: Vec<Vec<bool>>,
    /// One per pair, over the matched style image's bundle cells.
    pub style: Vec<Vec<bool>>,
}

/// Masks for sparse attention, resized by nearest neighbor to every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAttentionPlan {
    pub pairs: Vec<PairPlan>,
    pub layers: Vec<LayerMasks>,
    /// `(layer_id, pair index)` whose content or style mask is empty at that
    /// layer's resolution; such pairs contribute zero loss there.
    pub vanished: Vec<(usize, usize)>,
}

fn flat_mask(labels: &Array2<usize>, label: usize) -> Vec<bool> {
    labels.iter().map(|&l| l == label).collect()
}

impl SparseAttentionPlan {
    /// `content_shapes[l]` is `(layer_id, spatial_shape)` of the generated
    /// bundles; `style_shapes[s][l]` the spatial shape of style image `s`
    /// at the same layer.
    pub fn build(
        content_mask: &ClusterMask,
        style_masks: &[ClusterMask],
        table: &MatchTable,
        content_shapes: &[(usize, (usize, usize))],
        style_shapes: &[Vec<(usize, usize)>],
    ) -> Result<Self> {
        if style_shapes.len() != style_masks.len() {
            return Err(Error::Shape(format!(
                "{} style masks but {} style shape lists",
                style_masks.len(),
                style_shapes.len()
            )));
        }
        let mut seen = vec![false; content_mask.n_clusters];
        let mut pairs = Vec::with_capacity(table.entries.len());
        for e in &table.entries {
            if e.content_cluster >= content_mask.n_clusters {
                return Err(Error::Validation(format!("unknown content cluster {}", e.content_cluster)));
            }
            if std::mem::replace(&mut seen[e.content_cluster], true) {
                return Err(Error::Validation(format!("content cluster {} matched twice", e.content_cluster)));
            }
            let style_index = style_masks
                .iter()
                .position(|m| m.image_id == e.style_image)
                .ok_or_else(|| Error::Validation(format!("unknown style image `{}`", e.style_image)))?;
            if e.style_cluster >= style_masks[style_index].n_clusters {
                return Err(Error::Validation(format!(
                    "unknown style cluster {} in image `{}`",
                    e.style_cluster, e.style_image
                )));
            }
            pairs.push(PairPlan {
                content_cluster: e.content_cluster,
                style_image: e.style_image.clone(),
                style_index,
                style_cluster: e.style_cluster,
            });
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("content cluster {missing} has no match")));
        }

        let mut layers = Vec::with_capacity(content_shapes.len());
        let mut vanished = Vec::new();
        for (l, &(layer_id, (h, w))) in content_shapes.iter().enumerate() {
            let content_labels = resize_nearest(&content_mask.labels, h, w);
            let style_labels: Vec<Array2<usize>> = style_masks
                .iter()
                .zip(style_shapes)
                .map(|(m, shapes)| {
                    let (sh, sw) = *shapes.get(l).ok_or_else(|| Error::Shape(format!("no style shape for layer {layer_id}")))?;
                    Ok(resize_nearest(&m.labels, sh, sw))
                })
                .collect::<Result<_>>()?;
            let mut content = Vec::with_capacity(pairs.len());
            let mut style = Vec::with_capacity(pairs.len());
            for (p, pair) in pairs.iter().enumerate() {
                let cm = flat_mask(&content_labels, pair.content_cluster);
                let sm = flat_mask(&style_labels[pair.style_index], pair.style_cluster);
                if !cm.contains(&true) || !sm.contains(&true) {
                    vanished.push((layer_id, p));
                }
                content.push(cm);
                style.push(sm);
            }
            layers.push(LayerMasks {
                layer_id,
                content_shape: (h, w),
                content,
                style,
            });
        }
        Ok(Self { pairs, layers, vanished })
    }
}

pub fn bundle_shapes(bundles: &[AttentionBundle]) -> Vec<(usize, (usize, usize))> {
    bundles.iter().map(|b| (b.layer_id, b.spatial_shape)).collect()
}

/// Regional style loss and, optionally, its gradient on the generated bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalLoss {
    pub total: f64,
    /// Per pair, summed over layers.
    pub per_pair: Vec<f64>,
    /// Per layer, summed over pairs.
    pub per_layer: Vec<f64>,
    pub grads: Option<Vec<BundleGrad>>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_layer(gen: &AttentionBundle, masks: &LayerMasks) -> Result<()> {
    if gen.layer_id != masks.layer_id || gen.spatial_shape != masks.content_shape {
        return Err(Error::Shape(format!(
            "bundle for layer {} ({:?}) does not match plan layer {} ({:?})",
            gen.layer_id, gen.spatial_shape, masks.layer_id, masks.content_shape
        )));
    }
    Ok(())
}

/// Sum over layers and matched pairs of the L1 distance between masked
/// in-region self-attention and attention of the region's queries over the
/// matched style region.
///
/// `style[s][l]` is style image `s`'s bundle for plan layer `l`.
pub fn regional_style_loss(
    gen: &[AttentionBundle],
    style: &[Vec<AttentionBundle>],
    plan: &SparseAttentionPlan,
    with_grad: bool,
) -> Result<RegionalLoss> {
    if gen.len() != plan.layers.len() {
        return Err(Error::Shape(format!("{} generated bundles for {} plan layers", gen.len(), plan.layers.len())));
    }
    let mut out = RegionalLoss {
        total: 0.0,
        per_pair: vec![0.0; plan.pairs.len()],
        per_layer: vec![0.0; plan.layers.len()],
        grads: with_grad.then(|| gen.iter().map(BundleGrad::zeros_like).collect()),
    };
    for (l, (g, masks)) in gen.iter().zip(&plan.layers).enumerate() {
        check_layer(g, masks)?;
        for (p, pair) in plan.pairs.iter().enumerate() {
            let s = style
                .get(pair.style_index)
                .and_then(|b| b.get(l))
                .ok_or_else(|| Error::Shape(format!("missing style bundle for layer {}", masks.layer_id)))?;
            let (cm, sm) = (&masks.content[p], &masks.style[p]);
            if s.n() != sm.len() || s.d() != g.d() {
                return Err(Error::Shape(format!(
                    "style bundle for layer {} is {}x{}, plan expects {}x{}",
                    masks.layer_id,
                    s.n(),
                    s.d(),
                    sm.len(),
                    g.d()
                )));
            }
            if !cm.contains(&true) || !sm.contains(&true) {
                continue;
            }
            let own = masked_attention(g.q.view(), g.k.view(), g.v.view(), cm, cm);
            let reference = masked_attention(g.q.view(), s.k.view(), s.v.view(), cm, sm);
            let diff = &own - &reference;
            let loss: f64 = diff.iter().map(|v| v.abs()).sum();
            out.per_pair[p] += loss;
            out.per_layer[l] += loss;
            if let Some(grads) = out.grads.as_mut() {
                let dout = diff.mapv(sign);
                let a = masked_attention_backward(g.q.view(), g.k.view(), g.v.view(), cm, cm, dout.view());
                let neg = dout.mapv(|v| -v);
                let b = masked_attention_backward(g.q.view(), s.k.view(), s.v.view(), cm, sm, neg.view());
                let gr = &mut grads[l];
                gr.dq += &a.dq;
                gr.dq += &b.dq;
                gr.dk += &a.dk;
                gr.dv += &a.dv;
            }
        }
    }
    out.total = out.per_layer.iter().sum();
    Ok(out)
}

/// Global content loss with per-layer values and optional query gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentLoss {
    pub total: f64,
    pub per_layer: Vec<f64>,
    pub grads: Option<Vec<BundleGrad>>,
}

/// Sum over layers of `||Q - Q_c||_1`.
pub fn global_content_loss(gen: &[AttentionBundle], content: &[AttentionBundle], with_grad: bool) -> Result<ContentLoss> {
    if gen.len() != content.len() {
        return Err(Error::Shape(format!("{} generated layers vs {} content layers", gen.len(), content.len())));
    }
    let mut per_layer = Vec::with_capacity(gen.len());
    let mut grads = Vec::new();
    for (g, c) in gen.iter().zip(content) {
        if g.q.dim() != c.q.dim() {
            return Err(Error::Shape(format!(
                "layer {}: query shapes {:?} and {:?} differ",
                g.layer_id,
                g.q.dim(),
                c.q.dim()
            )));
        }
        let diff = &g.q - &c.q;
        per_layer.push(diff.iter().map(|v| v.abs()).sum());
        if with_grad {
            let mut gr = BundleGrad::zeros_like(g);
            gr.dq = diff.mapv(sign);
            grads.push(gr);
        }
    }
    Ok(ContentLoss {
        total: per_layer.iter().sum(),
        per_layer,
        grads: with_grad.then_some(grads),
    })
}

pub fn total_loss(rsl: f64, gcl: f64, cfg: &LossConfig) -> f64 {
    rsl + cfg.lambda_c * gcl
}
