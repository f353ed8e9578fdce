//! Brute-force reference implementations shared by the integration tests.
//! Each one follows the textbook definition directly, with no shortcuts.
#![allow(dead_code)]

use linehue::ingest::{GridSpec, LineKind, LineSet, Point};
use rand::Rng;

pub fn random_lineset(rng: &mut impl Rng, n_lines: usize, max_vertices: usize) -> LineSet {
    let chains = (0..n_lines)
        .map(|_| {
            let nv = rng.random_range(2..=max_vertices);
            (0..nv).map(|_| Point::new(rng.random_range(-3.0..7.0), rng.random_range(-1.0..2.0))).collect()
        })
        .collect();
    LineSet::from_vertices(chains, LineKind::Trajectory).unwrap()
}

fn seg_dist(q: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let ab = (b.0 - a.0, b.1 - a.1);
    let aq = (q.0 - a.0, q.1 - a.1);
    let l2 = ab.0 * ab.0 + ab.1 * ab.1;
    if l2 == 0.0 {
        return aq.0.hypot(aq.1);
    }
    let t = ((aq.0 * ab.0 + aq.1 * ab.1) / l2).clamp(0.0, 1.0);
    (q.0 - (a.0 + t * ab.0)).hypot(q.1 - (a.1 + t * ab.1))
}

/// Every (bin, line) pair: the line is in the bin's set iff some segment
/// passes strictly closer than `radius` to the bin centre.
pub fn brute_feature_sets(ls: &LineSet, spec: &GridSpec, radius: f64) -> Vec<Vec<u32>> {
    let lines: Vec<Vec<(f64, f64)>> = ls
        .lines()
        .iter()
        .map(|l| {
            l.vertices
                .iter()
                .map(|&p| {
                    let q = spec.transform.apply(p);
                    (q.x, q.y)
                })
                .collect()
        })
        .collect();
    let mut sets = Vec::with_capacity(spec.bin_count());
    for row in 0..spec.height {
        for col in 0..spec.width {
            let c = (col as f64 + 0.5, row as f64 + 0.5);
            let set = lines
                .iter()
                .enumerate()
                .filter(|(_, v)| v.windows(2).any(|w| seg_dist(c, w[0], w[1]) < radius))
                .map(|(i, _)| i as u32)
                .collect();
            sets.push(set);
        }
    }
    sets
}

/// One merge of the reference UPGMA: the two node ids (leaves `0..n`, merge
/// `m` creates node `n + m`) and the height.
#[derive(Debug, Clone, PartialEq)]
pub struct RefMerge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// UPGMA straight from the definition: cluster distance is the mean of all
/// leaf-to-leaf distances, recomputed from scratch at every step.
pub fn naive_upgma(d: &[Vec<f64>]) -> Vec<RefMerge> {
    let n = d.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    for step in 0..n.saturating_sub(1) {
        let mut best = (f64::INFINITY, 0, 0);
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let (cx, cy) = (&clusters[x].1, &clusters[y].1);
                let mut sum = 0.0;
                for &i in cx {
                    for &j in cy {
                        sum += d[i][j];
                    }
                }
                let avg = sum / (cx.len() * cy.len()) as f64;
                if avg < best.0 {
                    best = (avg, x, y);
                }
            }
        }
        let (h, x, y) = best;
        let (id_y, members_y) = clusters.remove(y);
        let (id_x, members_x) = clusters.remove(x);
        merges.push(RefMerge { a: id_x.min(id_y), b: id_x.max(id_y), height: h });
        clusters.push((n + step, [members_x, members_y].concat()));
    }
    merges
}

pub fn stress_oracle(theta: &[f64], delta: &[Vec<f64>]) -> f64 {
    let k = theta.len();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            if i < j {
                let raw = (theta[i] - theta[j]).abs() % std::f64::consts::TAU;
                let d = raw.min(std::f64::consts::TAU - raw);
                num += (d - delta[i][j]).powi(2);
                den += d * d;
            }
        }
    }
    (num / den).sqrt()
}

pub fn random_sorted_set(rng: &mut impl Rng, universe: u32, max_len: usize) -> Vec<u32> {
    let len = rng.random_range(0..=max_len);
    let mut v: Vec<u32> = (0..len).map(|_| rng.random_range(0..universe)).collect();
    v.sort_unstable();
    v.dedup();
    v
}
