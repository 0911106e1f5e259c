use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

/// Projects rows of `data` (`n x C`) onto their top `dims` principal axes.
///
/// Axis signs are fixed so each axis' largest-magnitude loading is positive,
/// which keeps the projection deterministic across platforms.
pub fn pca_project(data: &Array2<f64>, dims: usize) -> Array2<f64> {
    let (n, c) = data.dim();
    let dims = dims.min(c);
    if n == 0 || dims == 0 {
        return Array2::zeros((n, dims));
    }
    let mean = data.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = data - &mean;
    let cov = centered.t().dot(&centered) / n.max(1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(c, c, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut basis = Array2::zeros((c, dims));
    for (out_col, &k) in order.iter().take(dims).enumerate() {
        let col = eig.eigenvectors.column(k);
        let pivot = col
            .iter()
            .cloned()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..c {
            basis[[i, out_col]] = sign * col[i];
        }
    }
    centered.dot(&basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_dominant_axis() {
        // Points spread along (1, 1) with tiny orthogonal jitter.
        let data = Array2::from_shape_fn((50, 2), |(i, j)| {
            let t = i as f64 - 25.0;
            t + if j == 0 { 0.01 * (i % 3) as f64 } else { 0.0 }
        });
        let p = pca_project(&data, 1);
        let var: f64 = p.iter().map(|v| v * v).sum::<f64>() / 50.0;
        let total: f64 = (&data - &data.mean_axis(ndarray::Axis(0)).unwrap()).iter().map(|v| v * v).sum::<f64>() / 50.0;
        assert!(var / total > 0.999);
    }

    #[test]
    fn dims_are_capped_by_channels() {
        let data = Array2::from_shape_fn((5, 3), |(i, j)| (i * j) as f64);
        assert_eq!(pca_project(&data, 10).dim(), (5, 3));
    }
}
