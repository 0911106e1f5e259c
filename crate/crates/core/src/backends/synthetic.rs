//! Deterministic CPU stand-ins for the learned providers.
//!
//! The denoiser encodes images into a pooled-color latent, denoises with the
//! posterior mean under an isotropic Gaussian prior, and exposes a small
//! seeded attention network per layer. Features are a seeded projection of
//! per-cell color/texture descriptors plus smooth noise fields keyed by
//! `(image hash, step, site, seed)`, so clustering tracks image structure.
//! Semantic tokens are Gaussian-kernel embeddings of patch color, sorted
//! channel extremes, and texture: token cosine similarity is a smooth,
//! decreasing function of descriptor distance.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{
    AttentionBundle, BundleGrad, Denoiser, DepthProvider, FeatureStack, LatentState, NoiseSchedule,
    SemanticProvider, SemanticTokenGrid,
};
use crate::error::{Error, Result};
use crate::image::{ImageRecord, ImageRole};

pub const DEFAULT_SITE: &str = "up_blocks.2";

/// Number of per-cell descriptor channels fed to the feature projection.
const DESCRIPTOR_DIMS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub seed: u64,
    pub extraction_site: String,
    /// Pixels per feature/token cell.
    pub feature_stride: usize,
    /// Pixels per latent cell.
    pub latent_stride: usize,
    pub feature_channels: usize,
    pub attn_hidden: usize,
    pub attn_dim: usize,
    /// Latent pooling factor of each attention layer, shallow to deep.
    pub layer_pools: Vec<usize>,
    /// Standard deviation of the Gaussian latent prior used by the denoiser.
    pub prior_std: f64,
    /// Feature noise amplitude at step 0 and its increase up to step T.
    pub noise_base: f64,
    pub noise_slope: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            seed: 0,
            extraction_site: DEFAULT_SITE.to_string(),
            feature_stride: 16,
            latent_stride: 8,
            feature_channels: 128,
            attn_hidden: 16,
            attn_dim: 8,
            layer_pools: vec![16, 16, 16, 8, 8, 4, 4, 2, 2],
            prior_std: 0.3,
            noise_base: 0.02,
            noise_slope: 0.3,
        }
    }
}

pub(crate) const LATENT_CHANNELS: usize = 4;

#[derive(Debug, Clone)]
struct LayerWeights {
    pool: usize,
    /// `(C' + 1) x hidden`, last row is the bias.
    w1: Array2<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
}

pub(crate) fn keyed_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let g: f64 = StandardNormal.sample(rng);
        g * scale
    })
}

pub struct SyntheticDenoiser {
    params: SyntheticParams,
    schedule: NoiseSchedule,
    projection: Array2<f64>,
    layers: Vec<LayerWeights>,
}

impl std::fmt::Debug for SyntheticDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyntheticDenoiser").field("params", &self.params).finish()
    }
}

impl SyntheticDenoiser {
    pub fn new(params: SyntheticParams) -> Self {
        let seed = params.seed.to_le_bytes();
        let mut rng = keyed_rng(&[b"projection", &seed, params.extraction_site.as_bytes()]);
        let projection = gaussian_matrix(&mut rng, params.feature_channels, DESCRIPTOR_DIMS, 1.0);
        let layers = params
            .layer_pools
            .iter()
            .enumerate()
            .map(|(i, &pool)| {
                let mut rng = keyed_rng(&[b"attention", &seed, &(i as u64).to_le_bytes()]);
                let m = params.attn_hidden;
                let d = params.attn_dim;
                LayerWeights {
                    pool,
                    w1: gaussian_matrix(&mut rng, LATENT_CHANNELS + 1, m, 2.0 / ((LATENT_CHANNELS + 1) as f64).sqrt()),
                    wq: gaussian_matrix(&mut rng, m, d, 1.0 / (m as f64).sqrt()),
                    wk: gaussian_matrix(&mut rng, m, d, 1.0 / (m as f64).sqrt()),
                    wv: gaussian_matrix(&mut rng, m, d, 1.0 / (m as f64).sqrt()),
                }
            })
            .collect();
        Self {
            params,
            schedule: NoiseSchedule::default(),
            projection,
            layers,
        }
    }

    pub fn params(&self) -> &SyntheticParams {
        &self.params
    }

    fn check_resolution(&self, h: usize, w: usize) -> Result<()> {
        let stride = self.grid_stride();
        if h == 0 || w == 0 || h % stride != 0 || w % stride != 0 {
            return Err(Error::Resolution {
                height: h,
                width: w,
                reason: format!("dimensions must be positive multiples of {stride}"),
            });
        }
        Ok(())
    }

    fn layer(&self, id: usize) -> Result<&LayerWeights> {
        self.layers.get(id).ok_or(Error::LayerRange {
            layer: id,
            available: self.layers.len(),
        })
    }

    /// Largest power-of-two pool not above the layer's nominal pool that tiles the latent.
    fn effective_pool(nominal: usize, lh: usize, lw: usize) -> usize {
        let mut q = nominal.max(1).next_power_of_two();
        if q > nominal {
            q /= 2;
        }
        while q > 1 && (lh % q != 0 || lw % q != 0) {
            q /= 2;
        }
        q.max(1)
    }

    /// Pooled per-cell latent rows `N x C'` for a layer.
    fn pooled(z: &Array3<f64>, pool: usize) -> (Array2<f64>, (usize, usize)) {
        let (c, lh, lw) = z.dim();
        let (ph, pw) = (lh / pool, lw / pool);
        let mut out = Array2::zeros((ph * pw, c));
        let norm = (pool * pool) as f64;
        for ch in 0..c {
            for y in 0..ph * pool {
                for x in 0..pw * pool {
                    out[[(y / pool) * pw + x / pool, ch]] += z[[ch, y, x]] / norm;
                }
            }
        }
        (out, (ph, pw))
    }

    fn hidden(x: &Array2<f64>, w: &LayerWeights) -> Array2<f64> {
        let c = x.ncols();
        let pre = x.dot(&w.w1.slice(s![..c, ..])) + &w.w1.row(c);
        pre.mapv(f64::tanh)
    }

    fn feature_grid_for(&self, image: &ImageRecord, step: usize, total: usize, hash: &str) -> Array3<f64> {
        let stride = self.params.feature_stride;
        let desc = cell_descriptors(image, stride);
        let (_, gh, gw) = desc.dim();
        let c = self.params.feature_channels;
        let mut out = Array3::zeros((c, gh, gw));
        for y in 0..gh {
            for x in 0..gw {
                let d = desc.slice(s![.., y, x]).mapv(|v| v - 0.5);
                let f = self.projection.dot(&d);
                out.slice_mut(s![.., y, x]).assign(&f);
            }
        }
        let sigma = self.params.noise_base + self.params.noise_slope * step as f64 / total as f64;
        let mut rng = keyed_rng(&[
            b"features",
            hash.as_bytes(),
            &(step as u64).to_le_bytes(),
            self.params.extraction_site.as_bytes(),
            &self.params.seed.to_le_bytes(),
        ]);
        let noise = smooth_field(&mut rng, c, gh, gw, 4);
        out.scaled_add(sigma, &noise);
        out
    }
}

impl Denoiser for SyntheticDenoiser {
    fn grid_stride(&self) -> usize {
        self.params.feature_stride.max(self.params.latent_stride)
    }

    fn feature_grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.check_resolution(height, width)?;
        Ok((height / self.params.feature_stride, width / self.params.feature_stride))
    }

    fn latent_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        self.check_resolution(height, width)?;
        Ok((LATENT_CHANNELS, height / self.params.latent_stride, width / self.params.latent_stride))
    }

    fn extraction_site(&self) -> &str {
        &self.params.extraction_site
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn num_attention_layers(&self) -> usize {
        self.layers.len()
    }

    fn encode(&self, image: &ImageRecord) -> Result<LatentState> {
        self.check_resolution(image.height(), image.width())?;
        let stride = self.params.latent_stride;
        let rgb = image.pooled_channels(stride);
        let (_, lh, lw) = rgb.dim();
        let mut z = Array3::zeros((LATENT_CHANNELS, lh, lw));
        z.slice_mut(s![0..3, .., ..]).assign(&rgb.mapv(|v| v - 0.5));
        for y in 0..lh {
            for x in 0..lw {
                let luma = 0.299 * rgb[[0, y, x]] + 0.587 * rgb[[1, y, x]] + 0.114 * rgb[[2, y, x]];
                z[[3, y, x]] = luma - 0.5;
            }
        }
        Ok(LatentState {
            id: image.id.clone(),
            z,
            timestep: 0,
        })
    }

    fn decode(&self, latent: &LatentState) -> Result<ImageRecord> {
        let (c, lh, lw) = latent.z.dim();
        if c != LATENT_CHANNELS {
            return Err(Error::Shape(format!("latent has {c} channels, expected {LATENT_CHANNELS}")));
        }
        let stride = self.params.latent_stride;
        let (h, w) = (lh * stride, lw * stride);
        let mut pixels = Array3::zeros((h, w, 3));
        for y in 0..h {
            let fy = ((y as f64 + 0.5) / stride as f64 - 0.5).clamp(0.0, (lh - 1) as f64);
            let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
            let y1 = (y0 + 1).min(lh - 1);
            for x in 0..w {
                let fx = ((x as f64 + 0.5) / stride as f64 - 0.5).clamp(0.0, (lw - 1) as f64);
                let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
                let x1 = (x0 + 1).min(lw - 1);
                for ch in 0..3 {
                    let v = (1.0 - ty) * ((1.0 - tx) * latent.z[[ch, y0, x0]] + tx * latent.z[[ch, y0, x1]])
                        + ty * ((1.0 - tx) * latent.z[[ch, y1, x0]] + tx * latent.z[[ch, y1, x1]]);
                    pixels[[y, x, ch]] = (v + 0.5).clamp(0.0, 1.0);
                }
            }
        }
        Ok(ImageRecord {
            id: latent.id.clone(),
            pixels,
            role: ImageRole::Content,
            source_path: String::new(),
        })
    }

    fn predict_x0(&self, z: &Array3<f64>, timestep: usize) -> Result<Array3<f64>> {
        let ab = self.schedule.alpha_bar(Some(timestep));
        let s2 = self.params.prior_std * self.params.prior_std;
        let k = ab.sqrt() * s2 / (ab * s2 + 1.0 - ab);
        Ok(z.mapv(|v| v * k))
    }

    fn invert_and_extract(&self, image: &ImageRecord, steps: usize) -> Result<(FeatureStack, LatentState)> {
        if steps == 0 {
            return Err(Error::Argument("inversion needs at least one step".into()));
        }
        let (gh, gw) = self.feature_grid(image.height(), image.width())?;
        let mut latent = self.encode(image)?;
        let hash = image.content_hash();
        let timesteps = self.schedule.ddim_timesteps(steps);

        let mut per_step = Vec::with_capacity(steps + 1);
        per_step.push(self.feature_grid_for(image, 0, steps, &hash));
        let mut prev: Option<usize> = None;
        for (i, &t) in timesteps.iter().enumerate() {
            latent.z = ddim_move(self, &latent.z, prev, Some(t))?;
            latent.timestep = t;
            prev = Some(t);
            per_step.push(self.feature_grid_for(image, i + 1, steps, &hash));
        }
        let stack = FeatureStack {
            image_id: image.id.clone(),
            per_step,
            fused: None,
            grid_shape: (gh, gw),
            total_steps: steps,
            extraction_site: self.params.extraction_site.clone(),
        };
        Ok((stack, latent))
    }

    fn sample_step_attention(&self, latent: &LatentState, layer_ids: &[usize]) -> Result<Vec<AttentionBundle>> {
        let (c, lh, lw) = latent.z.dim();
        if c != LATENT_CHANNELS {
            return Err(Error::Shape(format!("latent has {c} channels, expected {LATENT_CHANNELS}")));
        }
        layer_ids
            .iter()
            .map(|&id| {
                let w = self.layer(id)?;
                let pool = Self::effective_pool(w.pool, lh, lw);
                let (x, shape) = Self::pooled(&latent.z, pool);
                let u = Self::hidden(&x, w);
                Ok(AttentionBundle {
                    layer_id: id,
                    q: u.dot(&w.wq),
                    k: u.dot(&w.wk),
                    v: u.dot(&w.wv),
                    spatial_shape: shape,
                })
            })
            .collect()
    }

    fn attention_vjp(&self, latent: &LatentState, grads: &[BundleGrad]) -> Result<Array3<f64>> {
        let (c, lh, lw) = latent.z.dim();
        let mut dz = Array3::zeros((c, lh, lw));
        for g in grads {
            let w = self.layer(g.layer_id)?;
            let pool = Self::effective_pool(w.pool, lh, lw);
            let (x, (_, pw)) = Self::pooled(&latent.z, pool);
            if g.dq.nrows() != x.nrows() {
                return Err(Error::Shape(format!(
                    "gradient for layer {} has {} rows, layer has {}",
                    g.layer_id,
                    g.dq.nrows(),
                    x.nrows()
                )));
            }
            let u = Self::hidden(&x, w);
            let du = g.dq.dot(&w.wq.t()) + g.dk.dot(&w.wk.t()) + g.dv.dot(&w.wv.t());
            let dpre = du * u.mapv(|v| 1.0 - v * v);
            let dx = dpre.dot(&w.w1.slice(s![..c, ..]).t());
            let norm = (pool * pool) as f64;
            for ch in 0..c {
                for y in 0..lh {
                    for xx in 0..lw {
                        let cell = (y / pool) * pw + xx / pool;
                        dz[[ch, y, xx]] += dx[[cell, ch]] / norm;
                    }
                }
            }
        }
        Ok(dz)
    }
}

/// One deterministic DDIM move of `z` from timestep `from` to `to`
/// (`None` = clean end of the chain). Works in both directions.
pub fn ddim_move(den: &dyn Denoiser, z: &Array3<f64>, from: Option<usize>, to: Option<usize>) -> Result<Array3<f64>> {
    let sched = den.schedule();
    let (ab_from, ab_to) = (sched.alpha_bar(from), sched.alpha_bar(to));
    let x0 = match from {
        Some(t) => den.predict_x0(z, t)?,
        None => z.clone(),
    };
    let eps = if 1.0 - ab_from > 1e-12 {
        (z - &(&x0 * ab_from.sqrt())) / (1.0 - ab_from).sqrt()
    } else {
        Array3::zeros(z.raw_dim())
    };
    Ok(x0 * ab_to.sqrt() + eps * (1.0 - ab_to).sqrt())
}

/// Bilinearly upsampled Gaussian control grids, one field per channel.
fn smooth_field(rng: &mut ChaCha8Rng, channels: usize, h: usize, w: usize, ctrl: usize) -> Array3<f64> {
    let grid = Array3::from_shape_fn((channels, ctrl, ctrl), |_| {
        let g: f64 = StandardNormal.sample(rng);
        g
    });
    let mut out = Array3::zeros((channels, h, w));
    let scale = |i: usize, n: usize| -> (usize, usize, f64) {
        let f = if n > 1 { i as f64 * (ctrl - 1) as f64 / (n - 1) as f64 } else { 0.0 };
        let i0 = (f.floor() as usize).min(ctrl - 1);
        let i1 = (i0 + 1).min(ctrl - 1);
        (i0, i1, f - i0 as f64)
    };
    for y in 0..h {
        let (y0, y1, ty) = scale(y, h);
        for x in 0..w {
            let (x0, x1, tx) = scale(x, w);
            for c in 0..channels {
                out[[c, y, x]] = (1.0 - ty) * ((1.0 - tx) * grid[[c, y0, x0]] + tx * grid[[c, y0, x1]])
                    + ty * ((1.0 - tx) * grid[[c, y1, x0]] + tx * grid[[c, y1, x1]]);
            }
        }
    }
    out
}

/// Per-pixel gradient magnitude summed over channels.
fn gradient_magnitude(image: &ImageRecord) -> Array2<f64> {
    let (h, w, _) = image.pixels.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (xn, yn) = ((x + 1).min(w - 1), (y + 1).min(h - 1));
        (0..3)
            .map(|c| {
                let p = image.pixels[[y, x, c]];
                (image.pixels[[y, xn, c]] - p).abs() + (image.pixels[[yn, x, c]] - p).abs()
            })
            .sum()
    })
}

/// `[r, g, b, luma, texture]` per `stride x stride` cell, all in `[0, 1]`.
pub(crate) fn cell_descriptors(image: &ImageRecord, stride: usize) -> Array3<f64> {
    let rgb = image.pooled_channels(stride);
    let (_, gh, gw) = rgb.dim();
    let grad = gradient_magnitude(image);
    let mut out = Array3::zeros((DESCRIPTOR_DIMS, gh, gw));
    out.slice_mut(s![0..3, .., ..]).assign(&rgb);
    let norm = (stride * stride) as f64;
    for y in 0..gh {
        for x in 0..gw {
            out[[3, y, x]] = 0.299 * rgb[[0, y, x]] + 0.587 * rgb[[1, y, x]] + 0.114 * rgb[[2, y, x]];
            let tex: f64 = grad
                .slice(s![y * stride..(y + 1) * stride, x * stride..(x + 1) * stride])
                .sum()
                / norm;
            out[[4, y, x]] = (2.0 * tex).min(1.0);
        }
    }
    out
}

struct KernelBlock {
    anchors: Array2<f64>,
    sigma: f64,
    weight: f64,
}

impl KernelBlock {
    fn lattice(dims: usize, points: usize, sigma: f64, weight: f64) -> Self {
        let total = points.pow(dims as u32);
        let anchors = Array2::from_shape_fn((total, dims), |(i, d)| {
            let idx = (i / points.pow(d as u32)) % points;
            idx as f64 / (points - 1) as f64
        });
        Self { anchors, sigma, weight }
    }

    fn embed(&self, point: &[f64], out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        let mut norm = 0.0;
        for (o, a) in out.iter_mut().zip(self.anchors.outer_iter()) {
            let d2: f64 = a.iter().zip(point).map(|(a, p)| (a - p) * (a - p)).sum();
            *o = (-d2 * inv).exp();
            norm += *o * *o;
        }
        let scale = self.weight.sqrt() / norm.sqrt().max(1e-300);
        out.iter_mut().for_each(|o| *o *= scale);
    }
}

/// Patch-token provider: unit-norm concatenation of Gaussian-kernel
/// embeddings of patch color, sorted channel extremes and texture.
pub struct SyntheticSemantics {
    stride: usize,
    color: KernelBlock,
    extremes: KernelBlock,
    texture: KernelBlock,
}

impl SyntheticSemantics {
    pub fn new(stride: usize) -> Self {
        Self {
            stride,
            color: KernelBlock::lattice(3, 6, 0.15, 0.6),
            extremes: KernelBlock::lattice(2, 8, 0.12, 0.25),
            texture: KernelBlock::lattice(1, 8, 0.12, 0.15),
        }
    }

    pub fn token_dim(&self) -> usize {
        self.color.anchors.nrows() + self.extremes.anchors.nrows() + self.texture.anchors.nrows()
    }
}

impl SemanticProvider for SyntheticSemantics {
    fn patch_stride(&self) -> usize {
        self.stride
    }

    fn semantic_tokens(&self, image: &ImageRecord) -> Result<SemanticTokenGrid> {
        let (h, w) = (image.height(), image.width());
        if h % self.stride != 0 || w % self.stride != 0 {
            return Err(Error::Resolution {
                height: h,
                width: w,
                reason: format!("not divisible by patch stride {}", self.stride),
            });
        }
        let desc = cell_descriptors(image, self.stride);
        let (_, gh, gw) = desc.dim();
        let (na, nb) = (self.color.anchors.nrows(), self.extremes.anchors.nrows());
        let dim = self.token_dim();
        let mut tokens = Array3::zeros((gh, gw, dim));
        for y in 0..gh {
            for x in 0..gw {
                let rgb = [desc[[0, y, x]], desc[[1, y, x]], desc[[2, y, x]]];
                let hi = rgb.iter().cloned().fold(f64::MIN, f64::max);
                let lo = rgb.iter().cloned().fold(f64::MAX, f64::min);
                let mut tok = vec![0.0; dim];
                self.color.embed(&rgb, &mut tok[..na]);
                self.extremes.embed(&[hi, lo], &mut tok[na..na + nb]);
                self.texture.embed(&[desc[[4, y, x]]], &mut tok[na + nb..]);
                tokens.slice_mut(s![y, x, ..]).assign(&Array1::from(tok));
            }
        }
        Ok(SemanticTokenGrid {
            image_id: image.id.clone(),
            tokens,
            grid_shape: (gh, gw),
        })
    }
}

/// Depth cue: 3x3 box-blurred cell luminance (brighter reads as nearer).
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticDepth;

impl DepthProvider for SyntheticDepth {
    fn depth_features(&self, image: &ImageRecord, grid_stride: usize) -> Result<Array2<f64>> {
        let (h, w) = (image.height(), image.width());
        if grid_stride == 0 || h % grid_stride != 0 || w % grid_stride != 0 {
            return Err(Error::Resolution {
                height: h,
                width: w,
                reason: format!("not divisible by grid stride {grid_stride}"),
            });
        }
        let luma = image.luminance().insert_axis(Axis(0));
        let (gh, gw) = (h / grid_stride, w / grid_stride);
        let mut pooled = Array2::<f64>::zeros((gh, gw));
        let norm = (grid_stride * grid_stride) as f64;
        for y in 0..h {
            for x in 0..w {
                pooled[[y / grid_stride, x / grid_stride]] += luma[[0, y, x]] / norm;
            }
        }
        Ok(Array2::from_shape_fn((gh, gw), |(y, x)| {
            let mut acc = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let yy = (y as i64 + dy).clamp(0, gh as i64 - 1) as usize;
                    let xx = (x as i64 + dx).clamp(0, gw as i64 - 1) as usize;
                    acc += pooled[[yy, xx]];
                }
            }
            acc / 9.0
        }))
    }
}
