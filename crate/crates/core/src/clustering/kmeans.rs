use ndarray::{Array2, Array3, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{pca_project, ClusterMask, ClusterOptConfig, Provenance};
use crate::error::Result;

pub const KMEANS_MAX_ITER: usize = 300;
/// Convergence tolerance on the largest centroid displacement.
pub const KMEANS_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub iterations: usize,
    /// Set when the data held fewer distinct points than requested clusters.
    pub degenerate: bool,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Seeded k-means++ followed by Lloyd iterations.
///
/// Seeding stops early once every point coincides with a chosen center, so
/// the result never holds duplicate centroids.
pub fn kmeans(data: &Array2<f64>, k: usize, seed: u64) -> KMeansResult {
    let (n, p) = data.dim();
    let k = k.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = data.outer_iter().map(|r| sq_dist(r, data.row(chosen[0]))).collect();
    let mut degenerate = false;
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            degenerate = true;
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        if d2[pick] == 0.0 {
            pick = d2.iter().rposition(|&w| w > 0.0).expect("total > 0");
        }
        chosen.push(pick);
        for (i, r) in data.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, data.row(pick)));
        }
    }

    let mut centroids = Array2::zeros((chosen.len(), p));
    for (j, &i) in chosen.iter().enumerate() {
        centroids.row_mut(j).assign(&data.row(i));
    }
    let mut labels = vec![0usize; n];
    let mut iterations = 0;
    for it in 0..KMEANS_MAX_ITER {
        iterations = it + 1;
        for (i, r) in data.outer_iter().enumerate() {
            labels[i] = nearest(r, &centroids).0;
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; centroids.nrows()];
        for (i, r) in data.outer_iter().enumerate() {
            sums.row_mut(labels[i]).scaled_add(1.0, &r);
            counts[labels[i]] += 1;
        }
        let mut shift: f64 = 0.0;
        for j in 0..centroids.nrows() {
            if counts[j] == 0 {
                continue;
            }
            let new = sums.row(j).mapv(|v| v / counts[j] as f64);
            shift = shift.max(sq_dist(new.view(), centroids.row(j)).sqrt());
            centroids.row_mut(j).assign(&new);
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    for (i, r) in data.outer_iter().enumerate() {
        labels[i] = nearest(r, &centroids).0;
    }
    KMeansResult {
        labels,
        centroids,
        iterations,
        degenerate,
    }
}

/// PCA-reduced k-means over the cells of a fused `C x h x w` feature grid.
pub fn initial_clusters(
    image_id: &str,
    fused: &Array3<f64>,
    cfg: &ClusterOptConfig,
    seed: u64,
) -> Result<ClusterMask> {
    let (c, h, w) = fused.dim();
    cfg.validate_for_channels(c)?;
    let rows = Array2::from_shape_fn((h * w, c), |(i, ch)| fused[[ch, i / w, i % w]]);
    let reduced = pca_project(&rows, cfg.pca_dims);
    let result = kmeans(&reduced, cfg.k_max, seed);

    // Collapse centroids that coincide (identical data rows).
    let nc = result.centroids.nrows();
    let mut alias: Vec<usize> = (0..nc).collect();
    for j in 0..nc {
        for i in 0..j {
            if alias[i] == i && sq_dist(result.centroids.row(i), result.centroids.row(j)) < 1e-18 {
                alias[j] = i;
                break;
            }
        }
    }
    let labels = Array2::from_shape_fn((h, w), |(y, x)| alias[result.labels[y * w + x]]);
    let mut mask = ClusterMask::from_labels(image_id, labels, Provenance::Auto);
    if result.degenerate {
        mask.warnings.push(format!(
            "only {} distinct feature cells for k_max = {}",
            mask.n_clusters, cfg.k_max
        ));
    }
    Ok(mask)
}
