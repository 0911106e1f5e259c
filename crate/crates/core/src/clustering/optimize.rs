use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use super::{resize_nearest, ClusterMask, ClusterOptConfig, Provenance};
use crate::backends::SemanticTokenGrid;
use crate::error::{Error, Result};

/// Cap on full optimization cycles before giving up on a fixed point.
pub const MAX_OPT_CYCLES: usize = 50;

type Cell = (usize, usize);

/// Per cluster: mean of the semantic tokens mapped into it, and how many.
pub fn cluster_semantics(mask: &ClusterMask, tokens: &SemanticTokenGrid) -> Vec<(Option<Array1<f64>>, usize)> {
    let (h, w) = mask.grid_shape();
    let (gh, gw) = tokens.grid_shape;
    let mut sums = vec![Array1::<f64>::zeros(tokens.dim()); mask.n_clusters];
    let mut counts = vec![0usize; mask.n_clusters];
    for ((y, x), &l) in mask.labels.indexed_iter() {
        let ty = ((2 * y + 1) * gh / (2 * h)).min(gh - 1);
        let tx = ((2 * x + 1) * gw / (2 * w)).min(gw - 1);
        sums[l] += &tokens.token(ty, tx);
        counts[l] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| if c == 0 { (None, 0) } else { (Some(s / c as f64), c) })
        .collect()
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> Option<f64> {
    let (na, nb) = (a.dot(a).sqrt(), b.dot(b).sqrt());
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(a.dot(b) / (na * nb))
    }
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }
}

fn relabel_with(mask: &ClusterMask, map: impl Fn(usize) -> usize) -> ClusterMask {
    let mut out = ClusterMask::from_labels(mask.image_id.clone(), mask.labels.mapv(map), mask.provenance);
    out.warnings = mask.warnings.clone();
    out
}

fn push_warning(mask: &mut ClusterMask, msg: String) {
    if !mask.warnings.contains(&msg) {
        mask.warnings.push(msg);
    }
}

/// Semantic merge: unite every cluster pair whose mean-token cosine
/// similarity reaches `threshold`, transitively, until no pair qualifies.
pub fn semantic_merge(mask: &ClusterMask, tokens: &SemanticTokenGrid, threshold: f64) -> ClusterMask {
    merge_constrained(mask, tokens, threshold, &[])
}

/// Semantic merge that never unites the clusters holding the two cells of
/// any `cannot_link` pair.
fn merge_constrained(
    mask: &ClusterMask,
    tokens: &SemanticTokenGrid,
    threshold: f64,
    cannot_link: &[(Cell, Cell)],
) -> ClusterMask {
    let mut cur = mask.clone();
    loop {
        let sems = cluster_semantics(&cur, tokens);
        for (l, (s, _)) in sems.iter().enumerate() {
            if s.is_none() {
                push_warning(&mut cur, format!("cluster {l} has no valid semantic tokens; left unmerged"));
            }
        }
        let n = cur.n_clusters;
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if let (Some(a), Some(b)) = (&sems[i].0, &sems[j].0) {
                    if let Some(sim) = cosine(a, b) {
                        if sim >= threshold {
                            pairs.push((sim, i, j));
                        }
                    }
                }
            }
        }
        if pairs.is_empty() {
            return cur;
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));

        let links: Vec<(usize, usize)> = cannot_link
            .iter()
            .map(|&(a, b)| (cur.labels[a], cur.labels[b]))
            .collect();
        let mut dsu = Dsu::new(n);
        let mut merged = false;
        for &(_, i, j) in &pairs {
            let (ri, rj) = (dsu.find(i), dsu.find(j));
            if ri == rj {
                continue;
            }
            let blocked = links.iter().any(|&(a, b)| {
                let (fa, fb) = (dsu.find(a), dsu.find(b));
                (fa == ri && fb == rj) || (fa == rj && fb == ri)
            });
            if !blocked {
                dsu.parent[rj.max(ri)] = ri.min(rj);
                merged = true;
            }
        }
        if !merged {
            return cur;
        }
        let roots: Vec<usize> = (0..n).map(|l| dsu.find(l)).collect();
        cur = relabel_with(&cur, |l| roots[l]);
    }
}

/// Depth-guided split: optimal 1-D 2-means on each cluster's depth values;
/// a cluster splits when its sub-means differ by more than `fraction` of the
/// global depth range. Returns the split mask and one representative cell
/// pair per split, which later merges must keep apart.
pub fn depth_split(mask: &ClusterMask, depth: &Array2<f64>, fraction: f64) -> (ClusterMask, Vec<(Cell, Cell)>) {
    let (h, w) = mask.grid_shape();
    let depth = if depth.dim() == (h, w) {
        depth.clone()
    } else {
        resize_nearest(depth, h, w)
    };
    let lo = depth.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = depth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return (mask.clone(), Vec::new());
    }
    let mut labels = mask.labels.clone();
    let mut next_label = mask.n_clusters;
    let mut links = Vec::new();
    for l in 0..mask.n_clusters {
        let cells = mask.cells(l);
        let mut vals: Vec<f64> = cells.iter().map(|&c| depth[c]).collect();
        vals.sort_by(f64::total_cmp);
        let n = vals.len();
        if n < 2 {
            continue;
        }
        let prefix: Vec<f64> = std::iter::once(0.0)
            .chain(vals.iter().scan(0.0, |s, v| {
                *s += v;
                Some(*s)
            }))
            .collect();
        let prefix2: Vec<f64> = std::iter::once(0.0)
            .chain(vals.iter().scan(0.0, |s, v| {
                *s += v * v;
                Some(*s)
            }))
            .collect();
        let sse = |a: usize, b: usize| {
            let cnt = (b - a) as f64;
            let s = prefix[b] - prefix[a];
            (prefix2[b] - prefix2[a]) - s * s / cnt
        };
        let best = (1..n)
            .filter(|&i| vals[i - 1] < vals[i])
            .map(|i| (sse(0, i) + sse(i, n), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some((_, i)) = best else { continue };
        let mean_lo = prefix[i] / i as f64;
        let mean_hi = (prefix[n] - prefix[i]) / (n - i) as f64;
        if mean_hi - mean_lo <= fraction * range {
            continue;
        }
        let cut = vals[i];
        let (mut rep_lo, mut rep_hi) = (None, None);
        for &c in &cells {
            if depth[c] >= cut {
                labels[c] = next_label;
                rep_hi.get_or_insert(c);
            } else {
                rep_lo.get_or_insert(c);
            }
        }
        next_label += 1;
        if let (Some(a), Some(b)) = (rep_lo, rep_hi) {
            links.push((a, b));
        }
    }
    let mut out = ClusterMask::from_labels(mask.image_id.clone(), labels, mask.provenance);
    out.warnings = mask.warnings.clone();
    (out, links)
}

fn components(labels: &Array2<usize>) -> Vec<Vec<Cell>> {
    let (h, w) = labels.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut comps = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if seen[[y, x]] {
                continue;
            }
            let l = labels[[y, x]];
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([(y, x)]);
            seen[[y, x]] = true;
            while let Some((cy, cx)) = queue.pop_front() {
                comp.push((cy, cx));
                for (ny, nx) in neighbors4(cy, cx, h, w) {
                    if !seen[[ny, nx]] && labels[[ny, nx]] == l {
                        seen[[ny, nx]] = true;
                        queue.push_back((ny, nx));
                    }
                }
            }
            comps.push(comp);
        }
    }
    comps
}

fn neighbors4(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = Cell> {
    let cand = [
        (y.wrapping_sub(1), x),
        (y + 1, x),
        (y, x.wrapping_sub(1)),
        (y, x + 1),
    ];
    cand.into_iter().filter(move |&(yy, xx)| yy < h && xx < w)
}

/// Reassigns every 4-connected component smaller than `min_area` cells to
/// the most frequent label on its boundary (ties to the lower label).
pub fn eliminate_isolated(mask: &ClusterMask, min_area: usize) -> ClusterMask {
    let (h, w) = mask.grid_shape();
    let mut labels = mask.labels.clone();
    for _ in 0..h * w {
        let mut changed = false;
        for comp in components(&labels) {
            if comp.len() >= min_area {
                continue;
            }
            let own = labels[comp[0]];
            let mut counts = std::collections::BTreeMap::new();
            for &(y, x) in &comp {
                for c in neighbors4(y, x, h, w) {
                    if labels[c] != own {
                        *counts.entry(labels[c]).or_insert(0usize) += 1;
                    }
                }
            }
            let target = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&l, _)| l);
            if let Some(t) = target {
                for &c in &comp {
                    labels[c] = t;
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut out = ClusterMask::from_labels(mask.image_id.clone(), labels, mask.provenance);
    out.warnings = mask.warnings.clone();
    out
}

/// Merges the most similar cluster pairs until at most `k_max` remain.
pub fn enforce_k_max(mask: &ClusterMask, tokens: &SemanticTokenGrid, k_max: usize) -> ClusterMask {
    let mut cur = mask.clone();
    while cur.n_clusters > k_max.max(1) {
        let sems = cluster_semantics(&cur, tokens);
        let n = cur.n_clusters;
        let mut best = (f64::NEG_INFINITY, 0, 1);
        for i in 0..n {
            for j in i + 1..n {
                let sim = match (&sems[i].0, &sems[j].0) {
                    (Some(a), Some(b)) => cosine(a, b).unwrap_or(-1.0),
                    _ => -1.0,
                };
                if sim > best.0 {
                    best = (sim, i, j);
                }
            }
        }
        let (_, i, j) = best;
        cur = relabel_with(&cur, |l| if l == j { i } else { l });
    }
    cur
}

/// One optimization cycle: semantic merge, depth-guided split with
/// constrained re-merge, isolated point elimination and the `k_max` cap.
fn optimize_cycle(
    cur: &ClusterMask,
    depth: Option<&Array2<f64>>,
    tokens: &SemanticTokenGrid,
    cfg: &ClusterOptConfig,
) -> ClusterMask {
    let mut next = semantic_merge(cur, tokens, cfg.merge_threshold);
    if let (Some(depth), true) = (depth, cfg.use_depth_split) {
        let (split, links) = depth_split(&next, depth, cfg.depth_split_fraction);
        next = merge_constrained(&split, tokens, cfg.merge_threshold, &links);
    }
    next = eliminate_isolated(&next, cfg.isolated_area);
    enforce_k_max(&next, tokens, cfg.k_max)
}

/// Repeats the optimization cycle until the labels stop changing. When the
/// cycle alternates between masks instead, the member with the fewest
/// clusters (then the smallest labels) is returned, so the result is the
/// same from any mask on that loop.
pub fn optimize_clusters(
    mask: &ClusterMask,
    depth: Option<&Array2<f64>>,
    tokens: &SemanticTokenGrid,
    cfg: &ClusterOptConfig,
) -> Result<ClusterMask> {
    cfg.validate()?;
    let mut history = vec![mask.clone()];
    for _ in 0..MAX_OPT_CYCLES {
        let cur = history.last().expect("non-empty");
        let next = optimize_cycle(cur, depth, tokens, cfg);
        if next.labels == cur.labels {
            let mut out = cur.clone();
            out.warnings = next.warnings;
            return Ok(out);
        }
        if let Some(start) = history.iter().position(|m| m.labels == next.labels) {
            let mut out = history[start..]
                .iter()
                .min_by(|a, b| {
                    a.n_clusters
                        .cmp(&b.n_clusters)
                        .then_with(|| a.labels.iter().cmp(b.labels.iter()))
                })
                .expect("cycle is non-empty")
                .clone();
            push_warning(&mut out, format!("cluster optimization alternates between {} masks", history.len() - start));
            return Ok(out);
        }
        history.push(next);
    }
    let mut out = history.pop().expect("non-empty");
    push_warning(&mut out, format!("cluster optimization did not settle within {MAX_OPT_CYCLES} cycles"));
    Ok(out)
}

/// Assigns unknown cells the label of the nearest known cell (breadth-first,
/// 4-connectivity).
pub fn fill_unknown(labels: &Array2<Option<usize>>) -> Result<Array2<usize>> {
    let (h, w) = labels.dim();
    let mut out = labels.clone();
    let mut queue: VecDeque<Cell> = labels
        .indexed_iter()
        .filter(|(_, l)| l.is_some())
        .map(|(c, _)| c)
        .collect();
    if queue.is_empty() {
        return Err(Error::Argument("external mask has no labeled cells".into()));
    }
    while let Some((y, x)) = queue.pop_front() {
        let l = out[[y, x]];
        for c in neighbors4(y, x, h, w) {
            if out[c].is_none() {
                out[c] = l;
                queue.push_back(c);
            }
        }
    }
    Ok(out.mapv(|l| l.expect("every cell reached")))
}

/// Brings an external label map (`None` = unknown) onto the clustering grid.
pub fn ingest_labels(image_id: &str, external: &Array2<Option<usize>>, grid: (usize, usize)) -> Result<ClusterMask> {
    let resized = resize_nearest(external, grid.0, grid.1);
    let filled = fill_unknown(&resized)?;
    Ok(ClusterMask::from_labels(image_id, filled, Provenance::ExternalBase))
}
