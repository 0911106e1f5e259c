mod common;

use common::{brute_force_circle, random_descriptor, rng};
use proptest::prelude::*;
use rand::Rng;
use stylegallery_core::clustering::ClusterMask;
use stylegallery_core::fixtures::{annotated_suite, checker};
use stylegallery_core::matching::{
    match_gallery, minimum_enclosing_circle, pairwise_similarity, RegionDescriptor, SimilarityConfig,
};
use stylegallery_core::pipeline::{analyze_image, match_images};
use stylegallery_core::{PipelineConfig, Providers};

#[test]
fn enclosing_circle_matches_brute_force() {
    let mut r = rng(11);
    for case in 0..200 {
        let n = r.random_range(1..=40);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)))
            .collect();
        let fast = minimum_enclosing_circle(&pts).unwrap();
        let slow = brute_force_circle(&pts);
        assert!((fast.r - slow.r).abs() <= 1e-9, "case {case}: {fast:?} vs {slow:?}");
        assert!((fast.cx - slow.cx).abs() <= 1e-9 && (fast.cy - slow.cy).abs() <= 1e-9, "case {case}");
    }
}

#[test]
fn enclosing_circle_handles_degenerate_inputs() {
    assert!(minimum_enclosing_circle(&[]).is_none());
    let collinear = [(0.0, 0.0), (1.0, 1.0), (3.0, 3.0), (2.0, 2.0)];
    let c = minimum_enclosing_circle(&collinear).unwrap();
    assert!((c.cx - 1.5).abs() < 1e-12 && (c.r - 4.5f64.sqrt()).abs() < 1e-12);
    let dup = [(2.0, 1.0); 5];
    assert_eq!(minimum_enclosing_circle(&dup).unwrap().r, 0.0);
}

fn scaled(d: &RegionDescriptor, a: f64, b: f64, c: f64) -> RegionDescriptor {
    let mut out = d.clone();
    out.stat_vec.iter_mut().for_each(|v| *v *= a);
    if let Some(s) = out.sem_vec.as_mut() {
        s.iter_mut().for_each(|v| *v *= b);
    }
    out.circle.cx *= c;
    out.circle.cy *= c;
    out.circle.r *= c;
    out
}

fn assignments(c: &[RegionDescriptor], s: &[RegionDescriptor]) -> Vec<(usize, String, usize)> {
    match_gallery(c, s, &SimilarityConfig::default())
        .unwrap()
        .entries
        .into_iter()
        .map(|e| (e.content_cluster, e.style_image, e.style_cluster))
        .collect()
}

#[test]
fn positive_rescaling_never_changes_assignments() {
    let mut r = rng(5);
    for _ in 0..50 {
        let content: Vec<_> = (0..r.random_range(1..6)).map(|i| random_descriptor(&mut r, "c", i)).collect();
        let mut style = Vec::new();
        for img in 0..3 {
            for i in 0..r.random_range(1..5) {
                style.push(random_descriptor(&mut r, &format!("s{img}"), i));
            }
        }
        let base = assignments(&content, &style);
        let mut factor = || 10f64.powf(r.random_range(-2.0..2.0));
        let c2: Vec<_> = content.iter().map(|d| scaled(d, factor(), factor(), factor())).collect();
        let s2: Vec<_> = style.iter().map(|d| scaled(d, factor(), factor(), factor())).collect();
        assert_eq!(assignments(&c2, &s2), base);
    }
}

proptest! {
    #[test]
    fn similarity_is_symmetric_and_bounded(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let a = random_descriptor(&mut r, "a", 0);
        let b = random_descriptor(&mut r, "b", 0);
        let cfg = SimilarityConfig::default();
        let (ab, _) = pairwise_similarity(&a, &b, &cfg).unwrap();
        let (ba, _) = pairwise_similarity(&b, &a, &cfg).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.375 + 1e-9);
        let (aa, _) = pairwise_similarity(&a, &a, &cfg).unwrap();
        if a.sem_vec.is_some() {
            prop_assert!((aa - 1.375).abs() < 1e-9);
        }
    }
}

fn dominant_cluster(mask: &ClusterMask, region: &ndarray::Array2<usize>, label: usize) -> usize {
    let mut counts = vec![0usize; mask.n_clusters];
    for (&m, &g) in mask.labels.iter().zip(region.iter()) {
        if g == label {
            counts[m] += 1;
        }
    }
    (0..counts.len()).max_by_key(|&i| counts[i]).unwrap()
}

#[test]
fn sky_is_borrowed_from_the_gallery_image_that_has_one() {
    let providers = Providers::synthetic(0);
    let cfg = PipelineConfig::default();
    let suite = annotated_suite();
    let content = suite.iter().find(|f| f.image.id == "meadow").unwrap();
    let with_sky = suite.iter().find(|f| f.image.id == "coast").unwrap();
    let no_sky = checker(512, 512);

    let c = analyze_image(&providers, &content.image, &cfg, None).unwrap();
    let a = analyze_image(&providers, &no_sky, &cfg, None).unwrap();
    let b = analyze_image(&providers, &with_sky.image, &cfg, None).unwrap();
    let (table, _, _) = match_images(&c, &[a, b.clone()], &cfg, &[]).unwrap();

    let content_sky = dominant_cluster(&c.mask, &content.regions, 0);
    let e = table.entry(content_sky).unwrap();
    assert_eq!(e.style_image, "coast");
    let cells: Vec<usize> = b
        .mask
        .labels
        .iter()
        .zip(with_sky.regions.iter())
        .filter(|(&m, _)| m == e.style_cluster)
        .map(|(_, &g)| g)
        .collect();
    let in_sky = cells.iter().filter(|&&g| g == 0).count();
    assert!(2 * in_sky > cells.len(), "matched cluster is mostly outside the sky");
    assert_eq!(table.entries.len(), c.mask.n_clusters);
}
