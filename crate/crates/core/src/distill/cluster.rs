//! Clustering of window embeddings.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    /// Agglomerative, Ward linkage, Euclidean distance.
    #[default]
    Ward,
    KMeans,
}

/// One agglomeration step: clusters `a` and `b` (ids below `n` are points,
/// id `n + i` is the cluster formed at step `i`) joined at Ward cost `height`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub assignments: Vec<usize>,
    /// Full merge record, in ascending height; empty for k-means.
    pub linkage: Vec<Merge>,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        self.assignments.iter().for_each(|&a| s[a] += 1);
        s
    }
}

pub fn cluster(points: &[Vec<f64>], k: usize, method: ClusterMethod, seed: u64) -> Result<ClusterModel> {
    check_input(points, k)?;
    match method {
        ClusterMethod::Ward => ward(points, k),
        ClusterMethod::KMeans => kmeans(points, k, seed),
    }
}

fn check_input(points: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let dim = points.first().map_or(0, Vec::len);
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::numerical("clustering input", "non-finite coordinate"));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
            if distinct.len() >= k {
                return Ok(());
            }
        }
    }
    Err(Error::DegenerateInput(format!(
        "need {k} distinct points, got {}",
        distinct.len()
    )))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Node {
    centroid: Vec<f64>,
    size: usize,
    id: usize,
}

fn ward_cost(a: &Node, b: &Node) -> f64 {
    let (na, nb) = (a.size as f64, b.size as f64);
    na * nb / (na + nb) * sq_dist(&a.centroid, &b.centroid)
}

/// Ward agglomeration by the nearest-neighbour chain algorithm, using the
/// centroid form of the Ward cost so memory stays linear in the point count.
/// Ties prefer the previous chain element, then the lowest slot.
pub fn ward_linkage(points: &[Vec<f64>]) -> Vec<Merge> {
    let n = points.len();
    let mut nodes: Vec<Option<Node>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Some(Node {
                centroid: p.clone(),
                size: 1,
                id: i,
            })
        })
        .collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut active = n;
    while active > 1 {
        if chain.is_empty() {
            chain.push(nodes.iter().position(Option::is_some).expect("active node"));
        }
        let top = *chain.last().expect("non-empty chain");
        let prev = chain.len().checked_sub(2).map(|i| chain[i]);
        let here = nodes[top].as_ref().expect("chain holds active nodes");
        let mut best = prev;
        let mut best_cost = prev.map_or(f64::INFINITY, |p| ward_cost(here, nodes[p].as_ref().expect("active")));
        for (j, node) in nodes.iter().enumerate() {
            if j == top || Some(j) == prev {
                continue;
            }
            if let Some(node) = node {
                let c = ward_cost(here, node);
                if c < best_cost {
                    best_cost = c;
                    best = Some(j);
                }
            }
        }
        let best = best.expect("at least two active nodes");
        if Some(best) == prev {
            chain.truncate(chain.len() - 2);
            let a = nodes[top].take().expect("active");
            let b = nodes[best].take().expect("active");
            let size = a.size + b.size;
            let centroid = a
                .centroid
                .iter()
                .zip(&b.centroid)
                .map(|(x, y)| (x * a.size as f64 + y * b.size as f64) / size as f64)
                .collect();
            merges.push(Merge {
                a: a.id.min(b.id),
                b: a.id.max(b.id),
                height: best_cost,
                size,
            });
            nodes[top.min(best)] = Some(Node {
                centroid,
                size,
                id: n + merges.len() - 1,
            });
            active -= 1;
        } else {
            chain.push(best);
        }
    }
    // Chain order is not height order; relabel after a stable sort so the
    // record reads bottom-up.
    let mut order: Vec<usize> = (0..merges.len()).collect();
    order.sort_by(|&x, &y| merges[x].height.total_cmp(&merges[y].height));
    let mut new_id = vec![0; merges.len()];
    for (pos, &old) in order.iter().enumerate() {
        new_id[old] = pos;
    }
    let remap = |id: usize| if id < n { id } else { n + new_id[id - n] };
    order
        .iter()
        .map(|&i| {
            let m = merges[i];
            let (a, b) = (remap(m.a), remap(m.b));
            Merge {
                a: a.min(b),
                b: a.max(b),
                ..m
            }
        })
        .collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cut a sorted linkage into `k` flat clusters. Labels are numbered by the
/// first point of each cluster.
pub fn cut(linkage: &[Merge], n: usize, k: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n + linkage.len()).collect();
    for (i, m) in linkage.iter().take(n.saturating_sub(k)).enumerate() {
        let id = n + i;
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[ra] = id;
        parent[rb] = id;
    }
    let mut labels = vec![usize::MAX; n];
    let mut root_label: Vec<(usize, usize)> = Vec::new();
    for (p, label) in labels.iter_mut().enumerate() {
        let r = find(&mut parent, p);
        *label = match root_label.iter().find(|(root, _)| *root == r) {
            Some(&(_, l)) => l,
            None => {
                root_label.push((r, root_label.len()));
                root_label.len() - 1
            }
        };
    }
    labels
}

fn ward(points: &[Vec<f64>], k: usize) -> Result<ClusterModel> {
    let linkage = ward_linkage(points);
    let assignments = cut(&linkage, points.len(), k);
    Ok(ClusterModel { k, assignments, linkage })
}

/// Lloyd iterations from a k-means++ start.
fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    let mut r = rng::stream(seed, "kmeans", 0);
    let n = points.len();
    let mut centers = vec![points[r.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut u = r.gen::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("k distinct points");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut assignments = vec![0; n];
    for _ in 0..300 {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&x, &y| sq_dist(p, &centers[x]).total_cmp(&sq_dist(p, &centers[y])))
                .expect("k > 0");
            changed |= *a != best;
            *a = best;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    if assignments.iter().collect::<std::collections::BTreeSet<_>>().len() < k {
        return Err(Error::EmptyCluster("k-means left a cluster empty".into()));
    }
    Ok(ClusterModel {
        k,
        assignments,
        linkage: Vec::new(),
    })
}

/// Fraction of points whose cluster's majority label equals their own label.
pub fn purity(assignments: &[usize], truth: &[usize]) -> f64 {
    let mut table: std::collections::BTreeMap<usize, std::collections::BTreeMap<usize, usize>> = Default::default();
    for (&a, &t) in assignments.iter().zip(truth) {
        *table.entry(a).or_default().entry(t).or_default() += 1;
    }
    let hits: usize = table.values().map(|row| row.values().max().copied().unwrap_or(0)).sum();
    hits as f64 / assignments.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub cooperation: usize,
    pub defection: usize,
    /// Both clusters had the same mean opponent reward.
    pub tie: bool,
}

/// The cluster whose samples give the opponent the higher mean reward is the
/// cooperation cluster. On a tie cluster 0 is chosen and a warning logged.
pub fn label_clusters(model: &ClusterModel, opponent_rewards: &[f64]) -> Result<ClusterLabels> {
    if model.k != 2 {
        return Err(Error::Config(format!("labelling needs 2 clusters, got {}", model.k)));
    }
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    for (&a, &r) in model.assignments.iter().zip(opponent_rewards) {
        sum[a] += r;
        count[a] += 1;
    }
    if count.contains(&0) {
        return Err(Error::EmptyCluster(format!("cluster sizes {count:?}")));
    }
    let mean = [sum[0] / count[0] as f64, sum[1] / count[1] as f64];
    let tie = mean[0] == mean[1];
    if tie {
        log::warn!("clusters have equal mean opponent reward {}; cluster 0 taken as cooperation", mean[0]);
    }
    let cooperation = if tie || mean[0] > mean[1] { 0 } else { 1 };
    Ok(ClusterLabels {
        cooperation,
        defection: 1 - cooperation,
        tie,
    })
}

/// Projection onto the top two principal components, by power iteration.
pub fn pca_2d(points: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = points[0].len();
    let mean: Vec<f64> = (0..dim).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();
    let mut comps: Vec<Vec<f64>> = Vec::new();
    for c in 0..2 {
        let mut v: Vec<f64> = (0..dim).map(|j| if j % 2 == c { 1.0 } else { 0.5 }).collect();
        for _ in 0..200 {
            let mut next = vec![0.0; dim];
            for row in &centered {
                let dot: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                next.iter_mut().zip(row).for_each(|(x, r)| *x += dot * r);
            }
            for prev in &comps {
                let dot: f64 = next.iter().zip(prev).map(|(a, b)| a * b).sum();
                next.iter_mut().zip(prev).for_each(|(x, p)| *x -= dot * p);
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                break;
            }
            v = next.into_iter().map(|x| x / norm).collect();
        }
        comps.push(v);
    }
    centered
        .iter()
        .map(|row| {
            let p = |c: &Vec<f64>| row.iter().zip(c).map(|(a, b)| a * b).sum();
            [p(&comps[0]), p(&comps[1])]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, Normal};

    fn blobs(per: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng::stream(seed, "blobs", 0);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..2 * per {
            let c = i % 2;
            let offset = if c == 0 { 0.0 } else { sep };
            pts.push((0..5).map(|d| noise.sample(&mut r) + if d == 0 { offset } else { 0.0 }).collect());
            truth.push(c);
        }
        (pts, truth)
    }

    /// Exhaustive Ward: at each step merge the pair with minimal cost.
    fn naive_ward_heights(points: &[Vec<f64>]) -> Vec<f64> {
        let mut nodes: Vec<Node> = points
            .iter()
            .enumerate()
            .map(|(i, p)| Node {
                centroid: p.clone(),
                size: 1,
                id: i,
            })
            .collect();
        let mut heights = Vec::new();
        while nodes.len() > 1 {
            let mut best = (0, 1, f64::INFINITY);
            for i in 0..nodes.len() {
                for j in i + 1..nodes.len() {
                    let c = ward_cost(&nodes[i], &nodes[j]);
                    if c < best.2 {
                        best = (i, j, c);
                    }
                }
            }
            let b = nodes.remove(best.1);
            let a = &mut nodes[best.0];
            let size = a.size + b.size;
            a.centroid = a
                .centroid
                .iter()
                .zip(&b.centroid)
                .map(|(x, y)| (x * a.size as f64 + y * b.size as f64) / size as f64)
                .collect();
            a.size = size;
            heights.push(best.2);
        }
        heights
    }

    #[test]
    fn separated_blobs_are_recovered_exactly() {
        let (pts, truth) = blobs(60, 10.0, 1);
        for method in [ClusterMethod::Ward, ClusterMethod::KMeans] {
            let m = cluster(&pts, 2, method, 0).unwrap();
            assert_eq!(purity(&m.assignments, &truth), 1.0, "{method:?}");
            assert_eq!(m.sizes(), vec![60, 60]);
        }
    }

    #[test]
    fn chain_heights_match_exhaustive_search() {
        let (pts, _) = blobs(15, 3.0, 2);
        let fast: Vec<f64> = ward_linkage(&pts).iter().map(|m| m.height).collect();
        let slow = naive_ward_heights(&pts);
        let mut slow_sorted = slow.clone();
        slow_sorted.sort_by(f64::total_cmp);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow_sorted) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b), "{a} vs {b}");
        }
    }

    #[test]
    fn two_distinct_points_become_singletons() {
        let m = cluster(&[vec![0.0, 1.0], vec![3.0, 1.0]], 2, ClusterMethod::Ward, 0).unwrap();
        assert_eq!(m.assignments, vec![0, 1]);
        let same = cluster(&[vec![1.0], vec![1.0], vec![1.0]], 2, ClusterMethod::Ward, 0);
        assert!(matches!(same, Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn labels_follow_mean_opponent_reward() {
        let m = ClusterModel {
            k: 2,
            assignments: vec![0, 0, 1, 1],
            linkage: Vec::new(),
        };
        let l = label_clusters(&m, &[0.0, 0.0, -2.0, -2.0]).unwrap();
        assert_eq!((l.cooperation, l.defection, l.tie), (0, 1, false));
        let l = label_clusters(&m, &[-2.0, -2.0, 1.0, 0.0]).unwrap();
        assert_eq!((l.cooperation, l.defection), (1, 0));
        let l = label_clusters(&m, &[1.0, -1.0, 0.0, 0.0]).unwrap();
        assert_eq!((l.cooperation, l.tie), (0, true));
    }

    #[test]
    fn pca_finds_the_spread_direction() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![0.1 * (i % 3) as f64, i as f64, 0.0]).collect();
        let proj = pca_2d(&pts);
        let spread = |k: usize| proj.iter().map(|p| p[k].abs()).fold(0.0, f64::max);
        assert!(spread(0) > 9.0 && spread(1) < 0.2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn partition_is_invariant_to_input_order(seed in 0u64..1000) {
            let (pts, _) = blobs(12, 4.0, seed);
            let base = cluster(&pts, 2, ClusterMethod::Ward, 0).unwrap().assignments;
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            perm.shuffle(&mut rng::stream(seed, "perm", 0));
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
            let got = cluster(&shuffled, 2, ClusterMethod::Ward, 0).unwrap().assignments;
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    prop_assert_eq!(base[perm[i]] == base[perm[j]], got[i] == got[j]);
                }
            }
        }
    }
}
