//! Accuracy of a line assignment against ground-truth labels, under the best
//! one-to-one matching of clusters to labels.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Correctly matched lines over all evaluated lines.
    pub accuracy: f64,
    pub evaluated: usize,
    pub correct: usize,
    /// Evaluated lines without a cluster; always counted as errors.
    pub unassigned: usize,
    /// Label matched to each cluster.
    pub mapping: BTreeMap<String, String>,
    /// `confusion[cluster][label]` line counts.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

fn read_pairs(text: &str, what: &str) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() < 2 {
            return Err(Error::Malformed { line, message: format!("{what}: expected at least 2 fields") });
        }
        out.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(out)
}

fn is_unassigned(cluster: &str) -> bool {
    cluster.is_empty() || cluster.eq_ignore_ascii_case("none")
}

/// Compares an assignment CSV (`line_id,cluster_id,...`) with a labels CSV
/// (`line_id,label`). Lines whose label is in `exclude_labels` are ignored.
pub fn evaluate(assignment_csv: &str, labels_csv: &str, exclude_labels: &[&str]) -> Result<EvalReport> {
    let assigned = read_pairs(assignment_csv, "assignment")?;
    let labels: HashMap<String, String> = read_pairs(labels_csv, "labels")?.into_iter().collect();
    if assigned.len() != labels.len() {
        return Err(Error::IdMismatch(format!(
            "{} assigned lines but {} labelled lines",
            assigned.len(),
            labels.len()
        )));
    }

    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut label_set = BTreeSet::new();
    let (mut evaluated, mut unassigned) = (0, 0);
    for (id, cluster) in &assigned {
        let label = labels.get(id).ok_or_else(|| Error::IdMismatch(format!("line {id} has no label")))?;
        if exclude_labels.contains(&label.as_str()) {
            continue;
        }
        evaluated += 1;
        label_set.insert(label.clone());
        if is_unassigned(cluster) {
            unassigned += 1;
            continue;
        }
        *confusion.entry(cluster.clone()).or_default().entry(label.clone()).or_default() += 1;
    }

    let clusters: Vec<&String> = confusion.keys().collect();
    let label_list: Vec<&String> = label_set.iter().collect();
    let size = clusters.len().max(label_list.len());
    let mut mapping = BTreeMap::new();
    let mut correct = 0usize;
    if size > 0 {
        let mut weights = vec![vec![0i64; size]; size];
        for (r, c) in clusters.iter().enumerate() {
            for (col, l) in label_list.iter().enumerate() {
                weights[r][col] = confusion[*c].get(*l).copied().unwrap_or(0) as i64;
            }
        }
        let matched = max_weight_matching(&weights);
        correct = matched.iter().enumerate().map(|(r, &c)| weights[r][c]).sum::<i64>() as usize;
        for (r, &col) in matched.iter().enumerate() {
            if r < clusters.len() && col < label_list.len() {
                mapping.insert(clusters[r].clone(), label_list[col].clone());
            }
        }
    }
    let accuracy = if evaluated == 0 { 0.0 } else { correct as f64 / evaluated as f64 };
    Ok(EvalReport { accuracy, evaluated, correct, unassigned, mapping, confusion })
}

/// Hungarian algorithm on a square matrix: returns, for each row, the column
/// it is matched to so that the total weight is maximal.
pub fn max_weight_matching(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    let top = weights.iter().flatten().copied().max().unwrap_or(0);
    // Minimise top - w with 1-based potentials; column 0 is a sentinel.
    let cost = |i: usize, j: usize| top - weights[i - 1][j - 1];
    let (mut u, mut v) = (vec![0i64; n + 1], vec![0i64; n + 1]);
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let (mut delta, mut j1) = (i64::MAX, 0);
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
    }
    row_to_col
}
