//! Procedural test images, including an annotated suite with known
//! semantic regions for clustering accuracy checks.

use ndarray::{Array2, Array3};

use crate::image::{ImageRecord, ImageRole};

fn record(id: &str, pixels: Array3<f64>) -> ImageRecord {
    ImageRecord::new(id, pixels.mapv(|v| v.clamp(0.0, 1.0)), ImageRole::Content).expect("pixels clamped")
}

/// Warm left half, cool right half.
pub fn two_tone(h: usize, w: usize) -> ImageRecord {
    let left = [0.8, 0.35, 0.2];
    let right = [0.2, 0.45, 0.8];
    record(
        "two-tone",
        Array3::from_shape_fn((h, w, 3), |(_, x, c)| if x < w / 2 { left[c] } else { right[c] }),
    )
}

/// Sky gradient over textured grass with a sun disc.
pub fn landscape(h: usize, w: usize) -> ImageRecord {
    let horizon = h * 5 / 8;
    let (sun_y, sun_x, sun_r) = (h as f64 * 0.22, w as f64 * 0.7, h.min(w) as f64 * 0.1);
    record(
        "landscape",
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            if (fy - sun_y).hypot(fx - sun_x) < sun_r {
                [1.0, 0.9, 0.45][c]
            } else if y < horizon {
                let t = y as f64 / horizon as f64;
                [0.35 + 0.3 * t, 0.55 + 0.25 * t, 0.95][c]
            } else {
                let stripe = if (x / 3 + y / 5) % 2 == 0 { 0.06 } else { -0.06 };
                [0.25, 0.6, 0.2][c] + stripe
            }
        }),
    )
}

/// Large magenta/yellow checkerboard.
pub fn checker(h: usize, w: usize) -> ImageRecord {
    let a = [0.85, 0.1, 0.75];
    let b = [0.95, 0.9, 0.1];
    record(
        "checker",
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| if (y / 32 + x / 32) % 2 == 0 { a[c] } else { b[c] }),
    )
}

/// Same structure, hue rotated by cycling the channels.
pub fn permute_channels(image: &ImageRecord) -> ImageRecord {
    let p = &image.pixels;
    let mut out = image.clone();
    out.id = format!("{}-permuted", image.id);
    out.pixels = Array3::from_shape_fn(p.dim(), |(y, x, c)| p[[y, x, (c + 1) % 3]]);
    out
}

/// Deterministic multi-region scene: horizontal bands of distinct colors.
pub fn banded(h: usize, w: usize, colors: &[[f64; 3]]) -> ImageRecord {
    let n = colors.len().max(1);
    record(
        "banded",
        Array3::from_shape_fn((h, w, 3), |(y, _, c)| colors[(y * n / h).min(n - 1)][c]),
    )
}

/// Unit directions orthogonal to the luminance weights, so moving along
/// them changes hue but not brightness.
const ISO_U: [f64; 3] = [0.891, -0.454, 0.0];
const ISO_V: [f64; 3] = [0.0775, 0.152, -0.9855];

/// Surface appearance of one annotated region.
#[derive(Debug, Clone, Copy)]
pub struct Material {
    pub base: [f64; 3],
    /// Amplitude of a fine two-pixel stripe pattern.
    pub texture: f64,
}

impl Material {
    const fn new(base: [f64; 3], texture: f64) -> Self {
        Self { base, texture }
    }

    /// A look-alike: same brightness and texture, hue shifted by `amount`.
    fn twin(&self, amount: f64) -> Self {
        let mut base = self.base;
        for (b, v) in base.iter_mut().zip(ISO_V) {
            *b += amount * v;
        }
        Self { base, ..*self }
    }

    /// Color at horizontal position `t` in `[0, 1]`; every material drifts
    /// in hue across the image by `SWEEP`.
    fn shade(&self, t: f64, y: usize, x: usize, c: usize) -> f64 {
        let stripe = if (x / 2 + y / 2) % 2 == 0 { self.texture } else { -self.texture };
        self.base[c] + SWEEP * (t - 0.5) * ISO_U[c] + stripe
    }
}

/// Image with its ground-truth region labels over the 32x32 clustering grid.
#[derive(Debug, Clone)]
pub struct AnnotatedFixture {
    pub image: ImageRecord,
    pub regions: Array2<usize>,
}

const SIDE: usize = 512;
const CELL: usize = 16;
const SWEEP: f64 = 0.3;
/// Hue offset between look-alike regions.
const TWIN: f64 = 0.18;

fn render(id: &str, layout: &Array2<usize>, materials: &[Material]) -> AnnotatedFixture {
    let pixels = Array3::from_shape_fn((SIDE, SIDE, 3), |(y, x, c)| {
        let m = &materials[layout[[y / CELL, x / CELL]]];
        m.shade((x as f64 + 0.5) / SIDE as f64, y, x, c)
    });
    AnnotatedFixture {
        image: record(id, pixels),
        regions: layout.clone(),
    }
}

fn layout(f: impl Fn(f64, f64) -> usize) -> Array2<usize> {
    let g = SIDE / CELL;
    Array2::from_shape_fn((g, g), |(y, x)| f((y as f64 + 0.5) / g as f64, (x as f64 + 0.5) / g as f64))
}

/// Ten 512x512 scenes with two to four annotated regions each. Every scene
/// holds at least one pair of look-alike regions, and every region drifts in
/// hue so it is over-segmented before merging.
pub fn annotated_suite() -> Vec<AnnotatedFixture> {
    let sky = Material::new([0.45, 0.62, 0.85], 0.0);
    let lake = sky.twin(TWIN);
    let grass = Material::new([0.35, 0.55, 0.25], 0.06);
    let moss = grass.twin(-TWIN);
    let sand = Material::new([0.8, 0.7, 0.5], 0.03);
    let dune = sand.twin(TWIN);
    let brick = Material::new([0.65, 0.3, 0.25], 0.08);
    let clay = brick.twin(-TWIN);
    let snow = Material::new([0.8, 0.84, 0.88], 0.0);
    let ice = snow.twin(TWIN);
    let night = Material::new([0.22, 0.2, 0.3], 0.0);
    let dusk = night.twin(-TWIN);

    vec![
        render(
            "lakeside",
            &layout(|y, _| if y < 0.4 { 0 } else if y < 0.75 { 1 } else { 2 }),
            &[sky, lake, grass],
        ),
        render(
            "meadow",
            &layout(|y, x| if y < 0.35 { 0 } else if x < 0.5 { 1 } else { 2 }),
            &[sky, grass, moss],
        ),
        render(
            "dunes",
            &layout(|y, x| if y < 0.45 - 0.15 * (x - 0.5).abs() { 0 } else if y < 0.7 { 1 } else { 2 }),
            &[sky, sand, dune],
        ),
        render(
            "house",
            &layout(|y, x| {
                if (0.3..0.7).contains(&x) && (0.35..0.75).contains(&y) {
                    2
                } else if y < 0.5 {
                    0
                } else {
                    1
                }
            }),
            &[sky, clay, brick],
        ),
        render(
            "glacier",
            &layout(|y, x| if y < 0.4 { 0 } else if y < 0.7 || x < 0.25 { 1 } else { 2 }),
            &[night, snow, ice],
        ),
        render(
            "evening",
            &layout(|y, _| if y < 0.35 { 0 } else if y < 0.65 { 1 } else { 2 }),
            &[night, dusk, snow],
        ),
        render(
            "portrait",
            &layout(|y, x| {
                if (y - 0.35).hypot(x - 0.5) < 0.2 {
                    1
                } else if y > 0.6 && (0.2..0.8).contains(&x) {
                    2
                } else {
                    0
                }
            }),
            &[sky, brick, clay],
        ),
        render(
            "garden",
            &layout(|y, x| {
                if y < 0.3 {
                    0
                } else if (x - 0.3).hypot(y - 0.65) < 0.2 {
                    2
                } else if (x - 0.75).hypot(y - 0.7) < 0.15 {
                    3
                } else {
                    1
                }
            }),
            &[sky, grass, moss, sand],
        ),
        render(
            "coast",
            &layout(|y, x| if y < 0.35 { 0 } else if x < 0.55 - 0.2 * (y - 0.35) { 1 } else { 2 }),
            &[sky, lake, sand],
        ),
        render(
            "desert",
            &layout(|y, x| if y < 0.3 { 0 } else if y < 0.3 + 0.6 * x { 1 } else { 2 }),
            &[sky, dune, sand],
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_layouts_match_images() {
        let suite = annotated_suite();
        assert_eq!(suite.len(), 10);
        for f in &suite {
            assert_eq!(f.image.height(), SIDE);
            assert_eq!(f.regions.dim(), (SIDE / CELL, SIDE / CELL));
            let n = f.regions.iter().max().unwrap() + 1;
            assert!((2..=4).contains(&n));
        }
    }

    #[test]
    fn permutation_cycles_channels() {
        let base = two_tone(16, 16);
        let p = permute_channels(&base);
        assert_eq!(p.pixels[[0, 0, 0]], base.pixels[[0, 0, 1]]);
    }
}
