//! Set similarity and average-linkage agglomerative clustering of bins.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinSample, FeatureGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Overlap,
    Jaccard,
    Dice,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Overlap => "overlap",
            Metric::Jaccard => "jaccard",
            Metric::Dice => "dice",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlap" => Ok(Metric::Overlap),
            "jaccard" => Ok(Metric::Jaccard),
            "dice" => Ok(Metric::Dice),
            _ => Err(Error::InvalidParameter(format!("unknown metric {s:?}"))),
        }
    }
}

/// Size of the intersection of two ascending ID lists.
pub fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Similarity from set cardinalities. If either set is empty the similarity
/// is 0, unless both are, which counts as identical.
pub fn similarity_from_counts(metric: Metric, inter: usize, len_a: usize, len_b: usize) -> f64 {
    match (len_a, len_b) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let inter = inter as f64;
    match metric {
        Metric::Overlap => inter / len_a.min(len_b) as f64,
        Metric::Jaccard => inter / ((len_a + len_b) as f64 - inter),
        Metric::Dice => 2.0 * inter / (len_a + len_b) as f64,
    }
}

/// Similarity of two ascending ID sets, in `[0, 1]`.
pub fn set_similarity(metric: Metric, a: &[u32], b: &[u32]) -> f64 {
    similarity_from_counts(metric, intersection_size(a, b), a.len(), b.len())
}

/// Symmetric dissimilarity matrix with zero diagonal, stored as its strict
/// upper triangle in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    condensed: Vec<f64>,
}

impl DistanceMatrix {
    /// Wraps a condensed upper triangle (`n * (n - 1) / 2` entries).
    pub fn from_condensed(n: usize, condensed: Vec<f64>) -> Result<Self> {
        if condensed.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::InvalidParameter(format!(
                "condensed matrix for {n} points needs {} entries, got {}",
                n * n.saturating_sub(1) / 2,
                condensed.len()
            )));
        }
        Ok(Self { n, condensed })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut condensed = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                condensed.push(f(i, j));
            }
        }
        Self { n, condensed }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.condensed[self.slot(i, j)],
            std::cmp::Ordering::Greater => self.condensed[self.slot(j, i)],
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = if i < j { self.slot(i, j) } else { self.slot(j, i) };
        self.condensed[s] = v;
    }
}

/// How [`distance_matrix_using`] counts set intersections. All strategies give
/// the same exact counts; they differ only in cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intersection {
    /// AND + popcount over one bitset per bin; cost per pair ~ lines / 64.
    Bitset,
    /// Merge of the two sorted sets; cost per pair ~ set sizes.
    SortedMerge,
    /// Walks, for every line, the sampled bins containing it; total cost
    /// ~ sum over lines of (sampled bins containing it)^2.
    Inverted,
}

/// `1 - similarity` between every pair of sampled bins, counting
/// intersections with whichever strategy is estimated to be cheapest.
pub fn distance_matrix(sample: &BinSample, fg: &FeatureGrid, metric: Metric) -> DistanceMatrix {
    let sets: Vec<&[u32]> = sample.bin_indices.iter().map(|&b| fg.set(b as usize)).collect();
    let n = sets.len() as f64;
    let pairs = n * (n - 1.0) / 2.0;
    let words = fg.n_lines().div_ceil(64).max(1) as f64;
    let total_len: usize = sets.iter().map(|s| s.len()).sum();
    let mut postings = vec![0u64; fg.n_lines()];
    for &id in sets.iter().flat_map(|s| s.iter()) {
        postings[id as usize] += 1;
    }
    let inverted = postings.iter().map(|&p| (p * p) as f64 / 2.0).sum::<f64>() + pairs;
    let candidates = [
        (pairs * words, Intersection::Bitset),
        (pairs * 2.0 * total_len as f64 / n.max(1.0), Intersection::SortedMerge),
        (inverted, Intersection::Inverted),
    ];
    let strategy = candidates.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1;
    log::debug!("distance matrix for {} bins via {strategy:?}", sets.len());
    distance_matrix_using(sample, fg, metric, strategy)
}

pub fn distance_matrix_using(
    sample: &BinSample,
    fg: &FeatureGrid,
    metric: Metric,
    strategy: Intersection,
) -> DistanceMatrix {
    let sets: Vec<&[u32]> = sample.bin_indices.iter().map(|&b| fg.set(b as usize)).collect();
    let n = sets.len();
    let distance =
        |inter: usize, i: usize, j: usize| 1.0 - similarity_from_counts(metric, inter, sets[i].len(), sets[j].len());

    let rows: Vec<Vec<f64>> = match strategy {
        Intersection::Bitset => {
            let words = fg.n_lines().div_ceil(64).max(1);
            let mut bits = vec![0u64; n * words];
            for (i, s) in sets.iter().enumerate() {
                let row = &mut bits[i * words..(i + 1) * words];
                for &id in s.iter() {
                    row[id as usize / 64] |= 1u64 << (id % 64);
                }
            }
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let a = &bits[i * words..(i + 1) * words];
                    (i + 1..n)
                        .map(|j| {
                            let b = &bits[j * words..(j + 1) * words];
                            let inter: u32 = a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum();
                            distance(inter as usize, i, j)
                        })
                        .collect()
                })
                .collect()
        }
        Intersection::SortedMerge => (0..n)
            .into_par_iter()
            .map(|i| (i + 1..n).map(|j| 1.0 - set_similarity(metric, sets[i], sets[j])).collect())
            .collect(),
        Intersection::Inverted => {
            // CSR of line -> ascending sample positions containing it.
            let mut offsets = vec![0usize; fg.n_lines() + 1];
            for &id in sets.iter().flat_map(|s| s.iter()) {
                offsets[id as usize + 1] += 1;
            }
            for l in 0..fg.n_lines() {
                offsets[l + 1] += offsets[l];
            }
            let mut fill = offsets.clone();
            let mut members = vec![0u32; offsets[fg.n_lines()]];
            for (i, s) in sets.iter().enumerate() {
                for &id in s.iter() {
                    members[fill[id as usize]] = i as u32;
                    fill[id as usize] += 1;
                }
            }
            (0..n)
                .into_par_iter()
                .map_init(
                    || vec![0u32; n],
                    |counts, i| {
                        for &id in sets[i] {
                            let posting = &members[offsets[id as usize]..offsets[id as usize + 1]];
                            let after = posting.partition_point(|&j| j as usize <= i);
                            for &j in &posting[after..] {
                                counts[j as usize] += 1;
                            }
                        }
                        (i + 1..n)
                            .map(|j| {
                                let inter = std::mem::take(&mut counts[j]);
                                distance(inter as usize, i, j)
                            })
                            .collect()
                    },
                )
                .collect()
        }
    };
    DistanceMatrix { n, condensed: rows.concat() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    /// Number of leaves under the new node.
    pub size: usize,
}

/// Average-linkage merge tree. Leaves are nodes `0..n`; merge `m` creates
/// node `n + m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    /// Bin index of each leaf.
    pub leaves: Vec<u32>,
    pub merges: Vec<Merge>,
    pub linkage: Linkage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Average,
}

/// UPGMA over a dissimilarity matrix.
///
/// Clusters live in slots; merging slots `i < j` keeps the result in `i`.
/// Each step merges the closest pair of active slots, taking the
/// lexicographically smallest `(i, j)` among equal distances. Every slot
/// caches its nearest active neighbour to the right, so a step costs a scan of
/// the cache plus a rescan of the rows whose neighbour changed.
// Slots are parallel arrays, so index loops read best here.
#[allow(clippy::needless_range_loop)]
pub fn build_dendrogram(dmat: &DistanceMatrix) -> Result<Dendrogram> {
    let n = dmat.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 leaves, got {n}")));
    }
    let mut d = dmat.clone();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node = (0..n).collect::<Vec<_>>();
    let mut nn_dist = vec![f64::INFINITY; n];
    let mut nn_idx = vec![usize::MAX; n];

    let rescan = |d: &DistanceMatrix, active: &[bool], i: usize| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in i + 1..n {
            if active[j] {
                let v = d.get(i, j);
                if v < best.0 || best.1 == usize::MAX {
                    best = (v, j);
                }
            }
        }
        best
    };
    for i in 0..n {
        (nn_dist[i], nn_idx[i]) = rescan(&d, &active, i);
    }

    let mut merges = Vec::with_capacity(n - 1);
    let mut last_height = f64::NEG_INFINITY;
    for step in 0..n - 1 {
        let mut i = usize::MAX;
        for x in 0..n {
            if active[x] && nn_idx[x] != usize::MAX && (i == usize::MAX || nn_dist[x] < nn_dist[i]) {
                i = x;
            }
        }
        let j = nn_idx[i];
        // Monotone in exact arithmetic; clamp away rounding wobble.
        let height = nn_dist[i].max(last_height);
        last_height = height;
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for x in 0..n {
            if active[x] && x != i && x != j {
                let v = (si * d.get(i, x) + sj * d.get(j, x)) / (si + sj);
                d.set(i, x, v);
            }
        }
        active[j] = false;
        size[i] += size[j];
        merges.push(Merge { left: node[i], right: node[j], height, size: size[i] });
        node[i] = n + step;

        (nn_dist[i], nn_idx[i]) = rescan(&d, &active, i);
        for x in 0..n {
            if !active[x] || x == i || x > j {
                continue;
            }
            if nn_idx[x] == i || nn_idx[x] == j {
                (nn_dist[x], nn_idx[x]) = rescan(&d, &active, x);
            } else if x < i {
                let v = d.get(x, i);
                if v < nn_dist[x] || (v == nn_dist[x] && i < nn_idx[x]) {
                    nn_dist[x] = v;
                    nn_idx[x] = i;
                }
            }
        }
    }
    Ok(Dendrogram { leaves: (0..n as u32).collect(), merges, linkage: Linkage::Average })
}

impl Dendrogram {
    pub fn with_leaf_bins(mut self, bins: Vec<u32>) -> Self {
        assert_eq!(bins.len(), self.leaves.len(), "leaf count mismatch");
        self.leaves = bins;
        self
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> usize {
        2 * self.n_leaves() - 2
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.n_leaves()
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        node.checked_sub(self.n_leaves()).and_then(|m| self.merges.get(m)).map(|m| (m.left, m.right))
    }

    /// Merge height of an internal node.
    pub fn height(&self, node: usize) -> Option<f64> {
        node.checked_sub(self.n_leaves()).and_then(|m| self.merges.get(m)).map(|m| m.height)
    }

    /// Leaf positions under `node`, ascending.
    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            match self.children(x) {
                Some((l, r)) => {
                    stack.push(l);
                    stack.push(r);
                }
                None => out.push(x),
            }
        }
        out.sort_unstable();
        out
    }
}

/// A flat partition of the dendrogram's leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Clustering {
    /// Cluster index of each leaf.
    pub assignment: Vec<usize>,
    pub k: usize,
    /// Dendrogram node of each cluster.
    pub nodes: Vec<usize>,
}

impl Clustering {
    /// Canonical clustering for a set of dendrogram nodes covering every leaf
    /// exactly once. Clusters are numbered by decreasing size, ties broken by
    /// smallest leaf.
    pub fn from_nodes(dendro: &Dendrogram, nodes: &[usize]) -> Result<Self> {
        let n = dendro.n_leaves();
        let mut groups: Vec<(usize, Vec<usize>)> = nodes.iter().map(|&x| (x, dendro.leaves_under(x))).collect();
        groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.1[0].cmp(&b.1[0])));
        let mut assignment = vec![usize::MAX; n];
        for (c, (_, leaves)) in groups.iter().enumerate() {
            for &leaf in leaves {
                if assignment[leaf] != usize::MAX {
                    return Err(Error::InvalidParameter(format!("leaf {leaf} covered twice")));
                }
                assignment[leaf] = c;
            }
        }
        if assignment.contains(&usize::MAX) {
            return Err(Error::InvalidParameter("nodes do not cover every leaf".into()));
        }
        Ok(Self { assignment, k: groups.len(), nodes: groups.into_iter().map(|g| g.0).collect() })
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&l| self.assignment[l] == cluster).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &c in &self.assignment {
            s[c] += 1;
        }
        s
    }
}

/// Flat clustering with `k` clusters: the `k - 1` last (highest) merges are
/// undone.
pub fn cut_to_k(dendro: &Dendrogram, k: usize) -> Result<Clustering> {
    let n = dendro.n_leaves();
    if k < 1 || k > n {
        return Err(Error::InvalidParameter(format!("k must be in 1..={n}, got {k}")));
    }
    let kept = n - k;
    // Roots of the forest left after the first `kept` merges.
    let mut is_child = vec![false; n + kept];
    for m in &dendro.merges[..kept] {
        is_child[m.left] = true;
        is_child[m.right] = true;
    }
    let roots: Vec<usize> = (0..n + kept).filter(|&x| !is_child[x]).collect();
    Clustering::from_nodes(dendro, &roots)
}

/// Replaces one cluster by the two children of its dendrogram node.
pub fn split_cluster(c: &Clustering, dendro: &Dendrogram, cluster_id: usize) -> Result<Clustering> {
    let &node = c.nodes.get(cluster_id).ok_or(Error::UnknownCluster(cluster_id))?;
    let (l, r) = dendro.children(node).ok_or(Error::CannotSplit(cluster_id))?;
    let mut nodes: Vec<usize> = c.nodes.iter().copied().filter(|&x| x != node).collect();
    nodes.push(l);
    nodes.push(r);
    Clustering::from_nodes(dendro, &nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_examples() {
        assert_eq!(set_similarity(Metric::Overlap, &[1, 2], &[1, 2, 3]), 1.0);
        assert_eq!(set_similarity(Metric::Overlap, &[1, 2], &[3, 4]), 0.0);
        assert_eq!(set_similarity(Metric::Jaccard, &[1, 2], &[3, 4]), 0.0);
        assert_eq!(set_similarity(Metric::Jaccard, &[1, 2], &[2, 3]), 1.0 / 3.0);
        assert_eq!(set_similarity(Metric::Dice, &[1, 2], &[2, 3]), 0.5);
        assert_eq!(set_similarity(Metric::Overlap, &[1, 2], &[2, 3]), 0.5);
    }

    #[test]
    fn empty_set_rule() {
        for m in [Metric::Overlap, Metric::Jaccard, Metric::Dice] {
            assert_eq!(set_similarity(m, &[], &[]), 1.0);
            assert_eq!(set_similarity(m, &[], &[1]), 0.0);
            assert_eq!(set_similarity(m, &[4], &[]), 0.0);
        }
    }

    #[test]
    fn metric_parse() {
        assert_eq!("dice".parse::<Metric>().unwrap(), Metric::Dice);
        assert!("cosine".parse::<Metric>().is_err());
        assert_eq!(Metric::Jaccard.to_string(), "jaccard");
    }

    fn dm(n: usize, vals: &[f64]) -> DistanceMatrix {
        DistanceMatrix::from_condensed(n, vals.to_vec()).unwrap()
    }

    #[test]
    fn two_leaves() {
        let d = build_dendrogram(&dm(2, &[0.4])).unwrap();
        assert_eq!(d.merges, vec![Merge { left: 0, right: 1, height: 0.4, size: 2 }]);
    }

    fn three_leaf() -> Dendrogram {
        // d(0,1)=0.1, d(0,2)=0.5, d(1,2)=0.5
        build_dendrogram(&dm(3, &[0.1, 0.5, 0.5])).unwrap()
    }

    #[test]
    fn three_leaves_upgma() {
        let d = three_leaf();
        assert_eq!(d.merges[0], Merge { left: 0, right: 1, height: 0.1, size: 2 });
        assert_eq!(d.merges[1], Merge { left: 3, right: 2, height: 0.5, size: 3 });
        assert!(build_dendrogram(&dm(1, &[])).is_err());
    }

    #[test]
    fn ties_take_smallest_pair() {
        let d = build_dendrogram(&dm(4, &[0.2, 0.9, 0.9, 0.9, 0.9, 0.2])).unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 1));
        assert_eq!((d.merges[1].left, d.merges[1].right), (2, 3));
    }

    #[test]
    fn cuts() {
        let d = three_leaf();
        let one = cut_to_k(&d, 1).unwrap();
        assert_eq!(one.assignment, vec![0, 0, 0]);
        assert_eq!(one.nodes, vec![d.root()]);
        let all = cut_to_k(&d, 3).unwrap();
        assert_eq!(all.assignment, vec![0, 1, 2]);
        let two = cut_to_k(&d, 2).unwrap();
        assert_eq!(two.assignment, vec![0, 0, 1]);
        assert!(cut_to_k(&d, 0).is_err());
        assert!(cut_to_k(&d, 4).is_err());
    }

    #[test]
    fn splits() {
        let d = three_leaf();
        let one = cut_to_k(&d, 1).unwrap();
        let two = split_cluster(&one, &d, 0).unwrap();
        assert_eq!(two, cut_to_k(&d, 2).unwrap());
        assert!(matches!(split_cluster(&two, &d, 1), Err(Error::CannotSplit(1))));
        assert!(matches!(split_cluster(&two, &d, 7), Err(Error::UnknownCluster(7))));
    }

    #[test]
    fn distance_matrix_paths_agree() {
        use crate::ingest::{GridSpec, Transform};
        let spec = GridSpec::new(8, 8, Transform::IDENTITY).unwrap();
        // Small universe with large sets (bitset path) and a large universe
        // with small sets (merge path).
        for (n_lines, stride) in [(70usize, 1usize), (5000, 97)] {
            let sets: Vec<Vec<u32>> = (0..64)
                .map(|b| {
                    (0..n_lines)
                        .filter(|i| (i * 7 + b * 13) % (3 + b % 5) == 0 && i % stride == 0)
                        .map(|i| i as u32)
                        .collect()
                })
                .collect();
            let fg = FeatureGrid::from_sets(spec, 1.0, n_lines, sets).unwrap();
            let sample = BinSample { bin_indices: (0..64).collect(), seed: 0, min_density: 1, max_samples: 64 };
            for metric in [Metric::Overlap, Metric::Jaccard, Metric::Dice] {
                let m = distance_matrix(&sample, &fg, metric);
                for i in 0..64 {
                    assert_eq!(m.get(i, i), 0.0);
                    for j in 0..64 {
                        let want = if i == j { 0.0 } else { 1.0 - set_similarity(metric, fg.set(i), fg.set(j)) };
                        assert_eq!(m.get(i, j), want);
                    }
                }
            }
        }
    }
}
