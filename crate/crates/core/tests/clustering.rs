use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use proptest::prelude::*;
use stylegallery_core::backends::SemanticTokenGrid;
use stylegallery_core::clustering::{
    eliminate_isolated, enforce_k_max, initial_clusters, optimize_clusters, semantic_merge, ClusterMask,
    ClusterOptConfig, Provenance,
};
use stylegallery_core::fixtures::annotated_suite;
use stylegallery_core::pipeline::{prepare_image, threshold_sweep, PreparedImage};
use stylegallery_core::{PipelineConfig, Providers};

/// Each input cluster lands in exactly one output cluster.
fn is_coarsening(fine: &ClusterMask, coarse: &ClusterMask) -> bool {
    let mut map = BTreeMap::new();
    fine.labels
        .iter()
        .zip(coarse.labels.iter())
        .all(|(f, c)| *map.entry(*f).or_insert(*c) == *c)
}

fn components_at_least(mask: &ClusterMask, min_area: usize) -> bool {
    let (h, w) = mask.grid_shape();
    let mut seen = Array2::from_elem((h, w), false);
    for start in ndarray::indices((h, w)) {
        let start = (start.0, start.1);
        if seen[start] {
            continue;
        }
        let label = mask.labels[start];
        let mut stack = vec![start];
        seen[start] = true;
        let mut size = 0;
        while let Some((y, x)) = stack.pop() {
            size += 1;
            for (yy, xx) in [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)] {
                if yy < h && xx < w && !seen[[yy, xx]] && mask.labels[[yy, xx]] == label {
                    seen[[yy, xx]] = true;
                    stack.push((yy, xx));
                }
            }
        }
        if size < min_area && size < h * w {
            return false;
        }
    }
    true
}

fn prepared() -> Vec<(PreparedImage, Array2<usize>)> {
    let providers = Providers::synthetic(0);
    annotated_suite()
        .into_iter()
        .map(|f| (prepare_image(&providers, &f.image, 15).unwrap(), f.regions))
        .collect()
}

fn grid_strategy() -> impl Strategy<Value = (Array2<usize>, Array3<f64>)> {
    (2usize..10, 2usize..10, 1usize..7).prop_flat_map(|(h, w, k)| {
        (
            proptest::collection::vec(0..k, h * w),
            proptest::collection::vec(prop::array::uniform4(-1.0f64..1.0), k),
        )
            .prop_map(move |(labels, palette)| {
                let labels = Array2::from_shape_vec((h, w), labels).unwrap();
                let tokens = Array3::from_shape_fn((h, w, 4), |(y, x, d)| palette[labels[[y, x]]][d] + 1.5);
                (labels, tokens)
            })
    })
}

fn token_grid(tokens: Array3<f64>) -> SemanticTokenGrid {
    let (h, w, _) = tokens.dim();
    SemanticTokenGrid {
        image_id: "p".into(),
        tokens,
        grid_shape: (h, w),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_only_coarsens((labels, tokens) in grid_strategy(), threshold in 0.5f64..0.99) {
        let mask = ClusterMask::from_labels("p", labels, Provenance::Auto);
        let tokens = token_grid(tokens);
        let merged = semantic_merge(&mask, &tokens, threshold);
        prop_assert!(merged.is_partition());
        prop_assert!(merged.n_clusters <= mask.n_clusters);
        prop_assert!(is_coarsening(&mask, &merged));
    }

    #[test]
    fn isolated_elimination_is_monotone((labels, _) in grid_strategy(), min_area in 1usize..10) {
        let mask = ClusterMask::from_labels("p", labels, Provenance::Auto);
        let out = eliminate_isolated(&mask, min_area);
        prop_assert!(out.is_partition());
        prop_assert!(out.n_clusters <= mask.n_clusters);
        prop_assert!(components_at_least(&out, min_area));
        prop_assert_eq!(eliminate_isolated(&out, min_area).labels, out.labels);
    }

    #[test]
    fn k_max_cap_holds((labels, tokens) in grid_strategy(), k_max in 1usize..5) {
        let mask = ClusterMask::from_labels("p", labels, Provenance::Auto);
        let out = enforce_k_max(&mask, &token_grid(tokens), k_max);
        prop_assert!(out.n_clusters <= k_max.max(1));
        prop_assert!(is_coarsening(&mask, &out));
    }
}

#[test]
fn suite_masks_are_partitions_and_optimization_is_idempotent() {
    let cfg = ClusterOptConfig::default();
    for (prep, _) in prepared() {
        let init = initial_clusters(&prep.image_id, &prep.fused, &cfg, 0).unwrap();
        assert!(init.is_partition());
        assert!(init.n_clusters <= cfg.k_max);
        let merged = semantic_merge(&init, &prep.tokens, cfg.merge_threshold);
        assert!(is_coarsening(&init, &merged));
        let cleaned = eliminate_isolated(&merged, cfg.isolated_area);
        assert!(cleaned.n_clusters <= merged.n_clusters);
        assert!(components_at_least(&cleaned, cfg.isolated_area));

        let once = optimize_clusters(&init, prep.depth.as_ref(), &prep.tokens, &cfg).unwrap();
        let twice = optimize_clusters(&once, prep.depth.as_ref(), &prep.tokens, &cfg).unwrap();
        assert!(once.is_partition(), "{}", prep.image_id);
        assert!(once.n_clusters <= cfg.k_max);
        assert_eq!(once.labels, twice.labels, "{} {:?}", prep.image_id, once.warnings);
    }
}

#[test]
fn fragmented_external_mask_is_consolidated() {
    let (prep, _) = prepared().swap_remove(0);
    let (_, gh, gw) = prep.fused.dim();
    // 40 vertical strips at a finer resolution than the grid, plus unknown cells.
    let external = Array2::from_shape_fn((gh * 2, 80), |(y, x)| if (y + x) % 17 == 0 { None } else { Some(x / 2) });
    let cfg = ClusterOptConfig::default();
    let (initial, mask) = prep.cluster(&cfg, 0, Some(&external)).unwrap();
    assert_eq!(initial.provenance, Provenance::ExternalBase);
    assert!(initial.n_clusters > 10);
    assert_eq!(mask.grid_shape(), (gh, gw));
    assert!(mask.is_partition());
    assert!(mask.n_clusters <= cfg.k_max);
}

#[test]
fn threshold_sweep_peaks_at_default() {
    let providers = Providers::synthetic(0);
    let thresholds = [0.55, 0.65, 0.75, 0.85, 0.95];
    let points = threshold_sweep(&providers, &annotated_suite(), &PipelineConfig::default(), &thresholds).unwrap();
    let best = points.iter().max_by(|a, b| a.accuracy.total_cmp(&b.accuracy)).unwrap();
    assert_eq!(best.merge_threshold, 0.85);
    assert!(best.accuracy >= 0.9);
    for p in &points {
        assert!(p.merge_threshold == 0.85 || p.accuracy < best.accuracy);
    }
}
