//! Exact minimum enclosing circle (Welzl, iterative move-to-front form).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    pub fn point(p: (f64, f64)) -> Self {
        Self { cx: p.0, cy: p.1, r: 0.0 }
    }

    /// Circle with `a` and `b` on a diameter.
    pub fn diameter(a: (f64, f64), b: (f64, f64)) -> Self {
        let (cx, cy) = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
        Self {
            cx,
            cy,
            r: ((a.0 - cx).hypot(a.1 - cy)).max((b.0 - cx).hypot(b.1 - cy)),
        }
    }

    /// Circumcircle, or `None` for (near-)collinear points.
    pub fn circumcircle(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Option<Self> {
        // Translate to `a` for precision.
        let (bx, by) = (b.0 - a.0, b.1 - a.1);
        let (cx, cy) = (c.0 - a.0, c.1 - a.1);
        let d = 2.0 * (bx * cy - by * cx);
        if d.abs() < 1e-14 {
            return None;
        }
        let (b2, c2) = (bx * bx + by * by, cx * cx + cy * cy);
        let ux = (cy * b2 - by * c2) / d;
        let uy = (bx * c2 - cx * b2) / d;
        let center = (a.0 + ux, a.1 + uy);
        let r = [a, b, c]
            .iter()
            .map(|p| (p.0 - center.0).hypot(p.1 - center.1))
            .fold(0.0, f64::max);
        Some(Self {
            cx: center.0,
            cy: center.1,
            r,
        })
    }

    pub fn contains(&self, p: (f64, f64), eps: f64) -> bool {
        (p.0 - self.cx).hypot(p.1 - self.cy) <= self.r + eps
    }
}

const EPS: f64 = 1e-12;

fn three_point_circle(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Circle {
    Circle::circumcircle(a, b, c).unwrap_or_else(|| {
        // Collinear: the farthest pair spans the circle.
        [(a, b), (a, c), (b, c)]
            .into_iter()
            .map(|(p, q)| Circle::diameter(p, q))
            .max_by(|x, y| x.r.total_cmp(&y.r))
            .expect("three candidates")
    })
}

/// Smallest circle containing every point. Empty input yields `None`.
pub fn minimum_enclosing_circle(points: &[(f64, f64)]) -> Option<Circle> {
    let mut pts = points.to_vec();
    if pts.is_empty() {
        return None;
    }
    // Fixed shuffle keeps the expected linear running time deterministic.
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed));
    let mut c = Circle::point(pts[0]);
    for i in 1..pts.len() {
        if c.contains(pts[i], EPS) {
            continue;
        }
        c = Circle::point(pts[i]);
        for j in 0..i {
            if c.contains(pts[j], EPS) {
                continue;
            }
            c = Circle::diameter(pts[i], pts[j]);
            for k in 0..j {
                if !c.contains(pts[k], EPS) {
                    c = three_point_circle(pts[i], pts[j], pts[k]);
                }
            }
        }
    }
    Some(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_has_zero_radius() {
        let c = minimum_enclosing_circle(&[(0.3, 0.7)]).unwrap();
        assert_eq!((c.cx, c.cy, c.r), (0.3, 0.7, 0.0));
    }

    #[test]
    fn two_points_span_a_diameter() {
        let c = minimum_enclosing_circle(&[(0.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!((c.cx - 0.5).abs() < 1e-15 && (c.cy - 0.5).abs() < 1e-15 && (c.r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn right_triangle_uses_hypotenuse() {
        let c = minimum_enclosing_circle(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
        assert!((c.cx - 0.5).abs() < 1e-12 && (c.cy - 0.5).abs() < 1e-12);
        assert!((c.r - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn collinear_points() {
        let c = minimum_enclosing_circle(&[(0.0, 0.0), (0.5, 0.0), (2.0, 0.0)]).unwrap();
        assert!((c.cx - 1.0).abs() < 1e-12 && (c.r - 1.0).abs() < 1e-12);
        assert!(minimum_enclosing_circle(&[]).is_none());
    }
}
