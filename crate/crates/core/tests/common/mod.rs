//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylegallery_core::matching::{Circle, RegionDescriptor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// O(n^4) minimum enclosing circle: the smallest candidate through two or
/// three input points that contains every point.
pub fn brute_force_circle(points: &[(f64, f64)]) -> Circle {
    if points.len() == 1 {
        return Circle {
            cx: points[0].0,
            cy: points[0].1,
            r: 0.0,
        };
    }
    let covers = |cx: f64, cy: f64, r: f64| {
        points
            .iter()
            .all(|&(x, y)| (x - cx).hypot(y - cy) <= r * (1.0 + 1e-12) + 1e-12)
    };
    let mut best: Option<Circle> = None;
    let mut consider = |cx: f64, cy: f64, r: f64| {
        if best.is_none_or(|b| r < b.r) && covers(cx, cy, r) {
            best = Some(Circle { cx, cy, r });
        }
    };
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (points[i], points[j]);
            let (cx, cy) = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
            consider(cx, cy, (a.0 - cx).hypot(a.1 - cy));
            for &c in &points[j + 1..] {
                let d = 2.0 * (a.0 * (b.1 - c.1) + b.0 * (c.1 - a.1) + c.0 * (a.1 - b.1));
                if d.abs() < 1e-14 {
                    continue;
                }
                let sa = a.0 * a.0 + a.1 * a.1;
                let sb = b.0 * b.0 + b.1 * b.1;
                let sc = c.0 * c.0 + c.1 * c.1;
                let ux = (sa * (b.1 - c.1) + sb * (c.1 - a.1) + sc * (a.1 - b.1)) / d;
                let uy = (sa * (c.0 - b.0) + sb * (a.0 - c.0) + sc * (b.0 - a.0)) / d;
                consider(ux, uy, (a.0 - ux).hypot(a.1 - uy));
            }
        }
    }
    best.expect("some candidate covers all points")
}

/// Minimum over all injective row-to-column maps, summed in row order.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost[0].len()], 0.0, &mut best);
    best
}

pub fn random_descriptor(rng: &mut ChaCha8Rng, image: &str, id: usize) -> RegionDescriptor {
    let stat = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sem = rng
        .random_bool(0.9)
        .then(|| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect());
    RegionDescriptor {
        cluster_id: id,
        image_id: image.into(),
        stat_vec: stat,
        sem_vec: sem,
        circle: Circle {
            cx: rng.random_range(0.0..1.0),
            cy: rng.random_range(0.0..1.0),
            r: rng.random_range(0.01..0.7),
        },
        valid_token_count: 120,
        area: 30,
        thin_evidence: false,
    }
}
