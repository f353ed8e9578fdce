//! Cluster mean vectors, bin labelling and line-to-cluster filtering.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cluster::Clustering;
use crate::ingest::GridSpec;
use crate::raster::{BinSample, DensityGrid, FeatureGrid};

/// Per-cluster frequency of each line ID across the cluster's bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanVector {
    pub cluster_id: usize,
    /// Ascending `(line_id, frequency)` pairs; frequencies lie in `(0, 1]`.
    pub freq: Vec<(u32, f64)>,
    /// Number of member bins.
    pub support: usize,
}

impl MeanVector {
    pub fn get(&self, id: u32) -> f64 {
        self.freq.binary_search_by_key(&id, |&(i, _)| i).map_or(0.0, |pos| self.freq[pos].1)
    }

    /// Dense vector over line IDs `0..n_lines`.
    pub fn dense(&self, n_lines: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_lines];
        for &(i, f) in &self.freq {
            v[i as usize] = f;
        }
        v
    }
}

pub fn mean_vectors(clustering: &Clustering, sample: &BinSample, fg: &FeatureGrid) -> Vec<MeanVector> {
    assert_eq!(clustering.assignment.len(), sample.len(), "clustering is not over this sample");
    let mut counts = vec![vec![0u32; fg.n_lines()]; clustering.k];
    let mut support = vec![0usize; clustering.k];
    for (leaf, &c) in clustering.assignment.iter().enumerate() {
        support[c] += 1;
        for &id in fg.set(sample.bin_indices[leaf] as usize) {
            counts[c][id as usize] += 1;
        }
    }
    counts
        .into_iter()
        .zip(support)
        .enumerate()
        .map(|(cluster_id, (cnt, support))| {
            let freq = cnt
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(i, &n)| (i as u32, n as f64 / support as f64))
                .collect();
            MeanVector { cluster_id, freq, support }
        })
        .collect()
}

/// Squared distance between a bin's indicator vector and a mean vector,
/// summed only over the lines present in the bin.
pub fn bin_cluster_distance(set: &[u32], mean: &MeanVector) -> f64 {
    set.iter().map(|&i| (1.0 - mean.get(i)).powi(2)).sum()
}

fn dense_distance(set: &[u32], dense: &[f64]) -> f64 {
    set.iter().map(|&i| (1.0 - dense[i as usize]).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    pub spec: GridSpec,
    pub k: usize,
    /// Cluster of each bin; `None` for empty and below-threshold bins.
    pub labels: Vec<Option<u32>>,
}

impl ClusterMap {
    pub fn label(&self, bin: usize) -> Option<u32> {
        self.labels[bin]
    }
}

/// Labels every bin whose density reaches `min_density` with its nearest
/// cluster (lowest index on ties).
pub fn assign_bins(fg: &FeatureGrid, means: &[MeanVector], min_density: u32) -> ClusterMap {
    assert!(!means.is_empty(), "need at least one cluster");
    let dense: Vec<Vec<f64>> = means.iter().map(|m| m.dense(fg.n_lines())).collect();
    let threshold = min_density.max(1) as usize;
    let labels = (0..fg.bin_count())
        .into_par_iter()
        .map(|bin| {
            let set = fg.set(bin);
            if set.len() < threshold {
                return None;
            }
            let mut best = (f64::INFINITY, 0u32);
            for (c, d) in dense.iter().enumerate() {
                let dist = dense_distance(set, d);
                if dist < best.0 {
                    best = (dist, c as u32);
                }
            }
            Some(best.1)
        })
        .collect();
    ClusterMap { spec: *fg.spec(), k: means.len(), labels }
}

/// Line-to-cluster allocation with its density-weighted evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct LineAssignment {
    pub k: usize,
    pub cluster: Vec<Option<u32>>,
    /// Row-major `n_lines x k` table of summed bin densities.
    pub weights: Vec<u64>,
}

impl LineAssignment {
    pub fn n_lines(&self) -> usize {
        self.cluster.len()
    }

    pub fn weights_of(&self, line: usize) -> &[u64] {
        &self.weights[line * self.k..(line + 1) * self.k]
    }

    /// Lines assigned to `cluster` (`None` selects unassigned lines).
    pub fn lines_in(&self, cluster: Option<u32>) -> Vec<u32> {
        (0..self.cluster.len() as u32).filter(|&i| self.cluster[i as usize] == cluster).collect()
    }

    pub fn counts(&self) -> (Vec<usize>, usize) {
        let mut per = vec![0; self.k];
        let mut none = 0;
        for c in &self.cluster {
            match c {
                Some(c) => per[*c as usize] += 1,
                None => none += 1,
            }
        }
        (per, none)
    }

    /// CSV export `line_id,cluster_id,weight_0,...`. Unassigned lines carry
    /// `none` as their cluster.
    pub fn to_csv(&self, original_ids: Option<&[String]>) -> String {
        let mut out = String::from("line_id,cluster_id");
        for c in 0..self.k {
            let _ = write!(out, ",weight_{c}");
        }
        out.push('\n');
        for line in 0..self.n_lines() {
            match original_ids {
                Some(ids) => out.push_str(&ids[line]),
                None => {
                    let _ = write!(out, "{line}");
                }
            }
            match self.cluster[line] {
                Some(c) => {
                    let _ = write!(out, ",{c}");
                }
                None => out.push_str(",none"),
            }
            for w in self.weights_of(line) {
                let _ = write!(out, ",{w}");
            }
            out.push('\n');
        }
        out
    }
}

/// Assigns each line to the cluster whose bins it touches with the largest
/// summed density; ties go to the lowest index and lines touching no labelled
/// bin stay unassigned.
pub fn assign_lines(cmap: &ClusterMap, fg: &FeatureGrid, dg: &DensityGrid) -> LineAssignment {
    let (n, k) = (fg.n_lines(), cmap.k);
    let weights = (0..fg.bin_count())
        .into_par_iter()
        .fold(
            || vec![0u64; n * k],
            |mut acc, bin| {
                if let Some(c) = cmap.labels[bin] {
                    let d = dg.counts[bin] as u64;
                    for &id in fg.set(bin) {
                        acc[id as usize * k + c as usize] += d;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; n * k],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let cluster = (0..n)
        .map(|line| {
            let row = &weights[line * k..(line + 1) * k];
            let mut best: Option<(u64, u32)> = None;
            for (c, &w) in row.iter().enumerate() {
                if w > 0 && best.is_none_or(|(bw, _)| w > bw) {
                    best = Some((w, c as u32));
                }
            }
            best.map(|(_, c)| c)
        })
        .collect();
    LineAssignment { k, cluster, weights }
}
