use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::RegionDescriptor;
use crate::error::{Error, Result};

/// Weights of the statistical, semantic and positional dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub lambda_stat: f64,
    pub lambda_sem: f64,
    pub lambda_pos: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            lambda_stat: 0.25,
            lambda_sem: 1.0,
            lambda_pos: 0.125,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_stat, self.lambda_sem, self.lambda_pos];
        if w.iter().any(|&v| !(v >= 0.0)) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::Validation(format!(
                "similarity weights must be non-negative and not all zero, got {w:?}"
            )));
        }
        Ok(())
    }

    pub fn combine(&self, d: &PerDim) -> f64 {
        self.lambda_stat * d.s_stat + self.lambda_sem * d.s_sem + self.lambda_pos * d.s_pos
    }
}

/// Per-dimension cosine similarities; flagged dimensions contributed 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PerDim {
    pub s_stat: f64,
    pub s_sem: f64,
    pub s_pos: f64,
    #[serde(default)]
    pub sem_missing: bool,
    #[serde(default)]
    pub zero_norm: bool,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// Weighted sum of per-dimension cosine similarities.
pub fn pairwise_similarity(a: &RegionDescriptor, b: &RegionDescriptor, cfg: &SimilarityConfig) -> Result<(f64, PerDim)> {
    if a.stat_vec.len() != b.stat_vec.len() {
        return Err(Error::Shape(format!(
            "statistical vectors differ in length: {} vs {}",
            a.stat_vec.len(),
            b.stat_vec.len()
        )));
    }
    let mut d = PerDim::default();
    match cosine(&a.stat_vec, &b.stat_vec) {
        Some(s) => d.s_stat = s,
        None => d.zero_norm = true,
    }
    match (&a.sem_vec, &b.sem_vec) {
        (Some(x), Some(y)) => {
            if x.len() != y.len() {
                return Err(Error::Shape(format!("semantic vectors differ in length: {} vs {}", x.len(), y.len())));
            }
            match cosine(x, y) {
                Some(s) => d.s_sem = s,
                None => d.zero_norm = true,
            }
        }
        _ => d.sem_missing = true,
    }
    let pa = [a.circle.cx, a.circle.cy, a.circle.r];
    let pb = [b.circle.cx, b.circle.cy, b.circle.r];
    match cosine(&pa, &pb) {
        Some(s) => d.s_pos = s,
        None => d.zero_norm = true,
    }
    Ok((cfg.combine(&d), d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOrigin {
    Auto,
    UserOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub content_cluster: usize,
    pub style_image: String,
    pub style_cluster: usize,
    pub score: f64,
    pub per_dim: PerDim,
    pub origin: MatchOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MatchTable {
    pub entries: Vec<MatchEntry>,
}

impl MatchTable {
    pub fn entry(&self, content_cluster: usize) -> Option<&MatchEntry> {
        self.entries.iter().find(|e| e.content_cluster == content_cluster)
    }

    pub fn overrides(&self) -> Vec<Override> {
        self.entries
            .iter()
            .filter(|e| e.origin == MatchOrigin::UserOverride)
            .map(|e| Override {
                content_cluster: e.content_cluster,
                style_image: e.style_image.clone(),
                style_cluster: e.style_cluster,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Override {
    pub content_cluster: usize,
    pub style_image: String,
    pub style_cluster: usize,
}

/// `Greater` when candidate `a` should win over `b`.
fn rank(a: (f64, &PerDim, &RegionDescriptor), b: (f64, &PerDim, &RegionDescriptor)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.s_sem.total_cmp(&b.1.s_sem))
        .then_with(|| b.2.image_id.cmp(&a.2.image_id))
        .then_with(|| b.2.cluster_id.cmp(&a.2.cluster_id))
}

/// Maps each content cluster to its best-scoring style cluster pooled over
/// the whole gallery; style clusters may be reused.
pub fn match_gallery(
    content: &[RegionDescriptor],
    style: &[RegionDescriptor],
    cfg: &SimilarityConfig,
) -> Result<MatchTable> {
    cfg.validate()?;
    if content.is_empty() || style.is_empty() {
        return Err(Error::Argument("matching needs non-empty content and style region lists".into()));
    }
    let mut entries = Vec::with_capacity(content.len());
    for c in content {
        let mut best: Option<(f64, PerDim, &RegionDescriptor)> = None;
        for s in style {
            let (score, d) = pairwise_similarity(c, s, cfg)?;
            let better = match &best {
                None => true,
                Some((bs, bd, br)) => rank((score, &d, s), (*bs, bd, br)) == Ordering::Greater,
            };
            if better {
                best = Some((score, d, s));
            }
        }
        let (score, per_dim, s) = best.expect("style list is non-empty");
        entries.push(MatchEntry {
            content_cluster: c.cluster_id,
            style_image: s.image_id.clone(),
            style_cluster: s.cluster_id,
            score,
            per_dim,
            origin: MatchOrigin::Auto,
        });
    }
    Ok(MatchTable { entries })
}

/// Replaces the listed entries with user choices, recomputing their scores
/// for display.
pub fn apply_overrides(
    table: &MatchTable,
    overrides: &[Override],
    content: &[RegionDescriptor],
    style: &[RegionDescriptor],
    cfg: &SimilarityConfig,
) -> Result<MatchTable> {
    let mut out = table.clone();
    for o in overrides {
        let c = content
            .iter()
            .find(|d| d.cluster_id == o.content_cluster)
            .ok_or_else(|| Error::Validation(format!("unknown content cluster {}", o.content_cluster)))?;
        let s = style
            .iter()
            .find(|d| d.image_id == o.style_image && d.cluster_id == o.style_cluster)
            .ok_or_else(|| {
                Error::Validation(format!("unknown style cluster {} in image `{}`", o.style_cluster, o.style_image))
            })?;
        let entry = out
            .entries
            .iter_mut()
            .find(|e| e.content_cluster == o.content_cluster)
            .ok_or_else(|| Error::Validation(format!("content cluster {} is not in the table", o.content_cluster)))?;
        let (score, per_dim) = pairwise_similarity(c, s, cfg)?;
        *entry = MatchEntry {
            content_cluster: o.content_cluster,
            style_image: o.style_image.clone(),
            style_cluster: o.style_cluster,
            score,
            per_dim,
            origin: MatchOrigin::UserOverride,
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::Circle;

    fn desc(image: &str, id: usize, stat: Vec<f64>, sem: Option<Vec<f64>>, circle: (f64, f64, f64)) -> RegionDescriptor {
        RegionDescriptor {
            cluster_id: id,
            image_id: image.into(),
            stat_vec: stat,
            sem_vec: sem,
            circle: Circle {
                cx: circle.0,
                cy: circle.1,
                r: circle.2,
            },
            valid_token_count: 100,
            area: 10,
            thin_evidence: false,
        }
    }

    #[test]
    fn identical_descriptors_score_sum_of_weights() {
        let a = desc("c", 0, vec![1.0, 2.0], Some(vec![0.5, 0.1]), (0.4, 0.5, 0.2));
        let (score, d) = pairwise_similarity(&a, &a, &SimilarityConfig::default()).unwrap();
        assert!((score - 1.375).abs() < 1e-9);
        assert!(!d.sem_missing);
    }

    #[test]
    fn orthogonal_stat_and_sem_leave_position_only() {
        let a = desc("c", 0, vec![1.0, 0.0], Some(vec![0.0, 1.0]), (0.4, 0.5, 0.2));
        let b = desc("s", 0, vec![0.0, 1.0], Some(vec![1.0, 0.0]), (0.4, 0.5, 0.2));
        let (score, _) = pairwise_similarity(&a, &b, &SimilarityConfig::default()).unwrap();
        assert!((score - 0.125).abs() < 1e-12);
    }

    #[test]
    fn default_weights_ratio() {
        let c = SimilarityConfig::default();
        assert_eq!(c.lambda_stat / c.lambda_pos, 2.0);
        assert_eq!(c.lambda_sem / c.lambda_pos, 8.0);
    }

    #[test]
    fn missing_and_zero_vectors_are_flagged() {
        let a = desc("c", 0, vec![0.0, 0.0], None, (0.4, 0.5, 0.2));
        let b = desc("s", 0, vec![1.0, 0.0], Some(vec![1.0]), (0.4, 0.5, 0.2));
        let (score, d) = pairwise_similarity(&a, &b, &SimilarityConfig::default()).unwrap();
        assert!(d.sem_missing && d.zero_norm);
        assert!((score - 0.125).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_prefer_lower_ids() {
        let c = vec![desc("c", 0, vec![1.0, 0.0], Some(vec![1.0]), (0.5, 0.5, 0.1))];
        let s = vec![
            desc("b", 1, vec![1.0, 0.0], Some(vec![1.0]), (0.5, 0.5, 0.1)),
            desc("a", 3, vec![1.0, 0.0], Some(vec![1.0]), (0.5, 0.5, 0.1)),
            desc("a", 2, vec![1.0, 0.0], Some(vec![1.0]), (0.5, 0.5, 0.1)),
        ];
        let t = match_gallery(&c, &s, &SimilarityConfig::default()).unwrap();
        assert_eq!((t.entries[0].style_image.as_str(), t.entries[0].style_cluster), ("a", 2));
    }

    #[test]
    fn override_validation_and_precedence() {
        let c = vec![
            desc("c", 0, vec![1.0, 0.0], Some(vec![1.0, 0.0]), (0.5, 0.2, 0.1)),
            desc("c", 1, vec![0.0, 1.0], Some(vec![0.0, 1.0]), (0.5, 0.8, 0.1)),
        ];
        let s = vec![
            desc("s", 0, vec![1.0, 0.0], Some(vec![1.0, 0.0]), (0.5, 0.2, 0.1)),
            desc("s", 1, vec![0.0, 1.0], Some(vec![0.0, 1.0]), (0.5, 0.8, 0.1)),
        ];
        let cfg = SimilarityConfig::default();
        let t = match_gallery(&c, &s, &cfg).unwrap();
        assert_eq!(apply_overrides(&t, &[], &c, &s, &cfg).unwrap(), t);

        let ov = vec![Override {
            content_cluster: 0,
            style_image: "s".into(),
            style_cluster: 1,
        }];
        let t2 = apply_overrides(&t, &ov, &c, &s, &cfg).unwrap();
        assert_eq!(t2.entries[0].origin, MatchOrigin::UserOverride);
        assert_eq!(t2.entries[0].per_dim.s_sem, 0.0);
        assert_eq!(t2.entries[1], t.entries[1]);
        // Recompute, reapply: stable.
        let t3 = apply_overrides(&match_gallery(&c, &s, &cfg).unwrap(), &t2.overrides(), &c, &s, &cfg).unwrap();
        assert_eq!(t3, t2);

        let dangling = vec![Override {
            content_cluster: 0,
            style_image: "s".into(),
            style_cluster: 9,
        }];
        let err = apply_overrides(&t, &dangling, &c, &s, &cfg).unwrap_err().to_string();
        assert!(err.contains('9'));
    }
}
