use ndarray::Array2;

use super::{canonical_relabel, ClusterMask};
use crate::error::{Error, Result};

/// Fraction of expected regions recovered by the predicted mask.
///
/// An expected region counts as correct when some predicted cluster overlaps
/// it with IoU >= 0.5 and no other expected region claims that cluster.
pub fn classification_accuracy(predicted: &ClusterMask, expected: &Array2<usize>) -> Result<f64> {
    if expected.is_empty() {
        return Err(Error::Argument("annotation is empty".into()));
    }
    if expected.dim() != predicted.grid_shape() {
        return Err(Error::Shape(format!(
            "annotation grid {:?} differs from mask grid {:?}",
            expected.dim(),
            predicted.grid_shape()
        )));
    }
    let (expected, n_regions) = canonical_relabel(expected);
    let n_pred = predicted.n_clusters;
    let mut inter = Array2::<usize>::zeros((n_regions, n_pred));
    let mut region_area = vec![0usize; n_regions];
    let mut pred_area = vec![0usize; n_pred];
    for (&r, &p) in expected.iter().zip(predicted.labels.iter()) {
        inter[[r, p]] += 1;
        region_area[r] += 1;
        pred_area[p] += 1;
    }
    let claims: Vec<Option<usize>> = (0..n_regions)
        .map(|r| {
            (0..n_pred)
                .map(|p| {
                    let i = inter[[r, p]] as f64;
                    (i / (region_area[r] + pred_area[p] - inter[[r, p]]) as f64, p)
                })
                .filter(|&(iou, _)| iou >= 0.5)
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                .map(|(_, p)| p)
        })
        .collect();
    let correct = claims
        .iter()
        .filter(|c| match c {
            Some(p) => claims.iter().filter(|o| **o == Some(*p)).count() == 1,
            None => false,
        })
        .count();
    Ok(correct as f64 / n_regions as f64)
}
