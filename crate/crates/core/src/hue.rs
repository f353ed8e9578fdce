//! Placement of clusters on the hue circle.
//!
//! Cluster mean vectors are embedded on the unit circle by circular MDS: the
//! pairwise Euclidean distances between mean vectors are scaled linearly onto
//! `[0, pi]` and angles are fitted by gradient descent on the normalised
//! stress `sqrt(sum (delta - d)^2 / sum d^2)`, with `d` the arc distance.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::MeanVector;
use crate::error::{Error, Result};

/// Hue given to a lone cluster, in radians (250 degrees, a mid blue).
pub const DEFAULT_HUE: f64 = 250.0 * PI / 180.0;

pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// `theta_i - theta_j` wrapped into `(-pi, pi]`.
fn signed_difference(theta_i: f64, theta_j: f64) -> f64 {
    let d = (theta_i - theta_j).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Distance along the unit circle, in `[0, pi]`.
pub fn arc_distance(theta_i: f64, theta_j: f64) -> f64 {
    let d = (theta_i - theta_j).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

fn euclidean(a: &MeanVector, b: &MeanVector) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    let (fa, fb) = (&a.freq, &b.freq);
    while i < fa.len() || j < fb.len() {
        let (ka, kb) = (fa.get(i).map(|e| e.0), fb.get(j).map(|e| e.0));
        let diff = match (ka, kb) {
            (Some(x), Some(y)) if x == y => {
                i += 1;
                j += 1;
                fa[i - 1].1 - fb[j - 1].1
            }
            (Some(x), Some(y)) if x < y => {
                i += 1;
                fa[i - 1].1
            }
            (Some(_), None) => {
                i += 1;
                fa[i - 1].1
            }
            _ => {
                j += 1;
                fb[j - 1].1
            }
        };
        acc += diff * diff;
    }
    acc.sqrt()
}

/// Target arc distances: Euclidean distances between mean vectors, scaled so
/// the largest pair maps to `pi`.
pub fn target_arc_distances(means: &[MeanVector]) -> Vec<Vec<f64>> {
    let k = means.len();
    let mut raw = vec![vec![0.0; k]; k];
    let mut max = 0.0f64;
    for i in 0..k {
        for j in i + 1..k {
            let d = euclidean(&means[i], &means[j]);
            raw[i][j] = d;
            raw[j][i] = d;
            max = max.max(d);
        }
    }
    if k >= 2 && max == 0.0 {
        warn!("all cluster mean vectors coincide; hue targets are all zero");
        return raw;
    }
    for row in raw.iter_mut() {
        for v in row.iter_mut() {
            *v = (*v / max * PI).min(PI);
        }
    }
    raw
}

/// Normalised stress of an angle configuration. Returns `+inf` when every
/// realised distance is zero but some target is not.
pub fn circular_stress(theta: &[f64], delta: &[Vec<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..theta.len() {
        for j in i + 1..theta.len() {
            let d = arc_distance(theta[i], theta[j]);
            num += (delta[i][j] - d).powi(2);
            den += d * d;
        }
    }
    if den == 0.0 {
        if num == 0.0 {
            return 0.0;
        }
        warn!("all angles coincide; stress is undefined");
        return f64::INFINITY;
    }
    (num / den).sqrt()
}

/// Analytic gradient of [`circular_stress`] with respect to every angle.
///
/// With `A = sum (delta - d)^2`, `B = sum d^2` and `S = sqrt(A / B)`:
/// `dS/dt_k = (A'B - AB') / (2 S B^2)`, where `dd_ij/dt_i = sign(t_i - t_j)`
/// on the wrapped difference. Pairs sitting exactly at `d = 0` or `d = pi`
/// contribute nothing.
pub fn stress_gradient(theta: &[f64], delta: &[Vec<f64>]) -> Vec<f64> {
    let k = theta.len();
    let mut da = vec![0.0; k];
    let mut db = vec![0.0; k];
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..k {
        for j in i + 1..k {
            let diff = signed_difference(theta[i], theta[j]);
            let d = diff.abs();
            let resid = delta[i][j] - d;
            a += resid * resid;
            b += d * d;
            let g = if d == 0.0 || d == PI { 0.0 } else { diff.signum() };
            da[i] -= 2.0 * resid * g;
            da[j] += 2.0 * resid * g;
            db[i] += 2.0 * d * g;
            db[j] -= 2.0 * d * g;
        }
    }
    let s = if b > 0.0 { (a / b).sqrt() } else { 0.0 };
    if s == 0.0 || !s.is_finite() {
        return vec![0.0; k];
    }
    (0..k).map(|m| (da[m] * b - a * db[m]) / (2.0 * s * b * b)).collect()
}

// --- harmonic templates ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateKind {
    #[serde(rename = "i")]
    SmallI,
    V,
    L,
    I,
    T,
    Y,
    X,
    N,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 8] = [
        TemplateKind::SmallI,
        TemplateKind::V,
        TemplateKind::L,
        TemplateKind::I,
        TemplateKind::T,
        TemplateKind::Y,
        TemplateKind::X,
        TemplateKind::N,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::SmallI => "i",
            TemplateKind::V => "V",
            TemplateKind::L => "L",
            TemplateKind::I => "I",
            TemplateKind::T => "T",
            TemplateKind::Y => "Y",
            TemplateKind::X => "X",
            TemplateKind::N => "N",
        }
    }

    /// `(center, width)` of each sector in degrees, before rotation.
    pub fn sectors(self) -> &'static [(f64, f64)] {
        match self {
            TemplateKind::SmallI => &[(0.0, 18.0)],
            TemplateKind::V => &[(0.0, 93.6)],
            TemplateKind::L => &[(0.0, 18.0), (90.0, 79.2)],
            TemplateKind::I => &[(0.0, 18.0), (180.0, 18.0)],
            TemplateKind::T => &[(0.0, 180.0)],
            TemplateKind::Y => &[(0.0, 93.6), (180.0, 18.0)],
            TemplateKind::X => &[(0.0, 93.6), (180.0, 93.6)],
            TemplateKind::N => &[],
        }
    }

    /// Parses a template name; the empty string means no template.
    pub fn parse_optional(name: &str) -> Result<Option<TemplateKind>> {
        if name.is_empty() {
            Ok(None)
        } else {
            name.parse().map(Some)
        }
    }
}

impl FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateKind::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

/// A template placed at a rotation (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedTemplate {
    pub kind: TemplateKind,
    pub rotation: f64,
}

impl PlacedTemplate {
    /// Nearest angle inside the sector union, with the arc moved to reach it.
    pub fn project(&self, theta: f64) -> (f64, f64) {
        let mut best = (normalize_angle(theta), f64::INFINITY);
        for &(center, width) in self.kind.sectors() {
            let c = self.rotation + center.to_radians();
            let half = width.to_radians() / 2.0;
            let diff = signed_difference(theta, c);
            // The slack keeps projection idempotent on the sector edges.
            if diff.abs() <= half + 1e-12 {
                return (normalize_angle(theta), 0.0);
            }
            let moved = diff.abs() - half;
            if moved < best.1 {
                best = (normalize_angle(c + half * diff.signum()), moved);
            }
        }
        if best.1.is_infinite() {
            (normalize_angle(theta), 0.0)
        } else {
            best
        }
    }
}

/// Rotation (in whole degrees) minimising the total movement of the free
/// angles into the template; ties go to the smallest rotation.
pub fn best_rotation(kind: TemplateKind, theta: &[f64], fixed: &[Option<f64>]) -> PlacedTemplate {
    let mut best = PlacedTemplate { kind, rotation: 0.0 };
    let mut best_cost = f64::INFINITY;
    for deg in 0..360 {
        let placed = PlacedTemplate { kind, rotation: (deg as f64).to_radians() };
        let cost: f64 = theta.iter().zip(fixed).filter(|(_, f)| f.is_none()).map(|(&t, _)| placed.project(t).1).sum();
        if cost < best_cost {
            best_cost = cost;
            best = placed;
        }
    }
    best
}

// --- optimisation --------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct HueProblem {
    pub delta: Vec<Vec<f64>>,
    /// Pinned angle per cluster, normalised to `[0, 2pi)`.
    pub fixed: Vec<Option<f64>>,
    pub template: Option<TemplateKind>,
}

impl HueProblem {
    pub fn new(delta: Vec<Vec<f64>>) -> Result<Self> {
        let k = delta.len();
        for (i, row) in delta.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidParameter("delta must be square".into()));
            }
            if row[i] != 0.0 {
                return Err(Error::InvalidParameter("delta must have a zero diagonal".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=PI).contains(&v) || v != delta[j][i] {
                    return Err(Error::InvalidParameter(format!(
                        "delta[{i}][{j}] = {v} must be symmetric and within [0, pi]"
                    )));
                }
            }
        }
        Ok(Self { fixed: vec![None; k], delta, template: None })
    }

    pub fn with_fixed(mut self, fixed: Vec<Option<f64>>) -> Self {
        assert_eq!(fixed.len(), self.k());
        self.fixed = fixed.into_iter().map(|f| f.map(normalize_angle)).collect();
        self
    }

    pub fn with_template(mut self, template: Option<TemplateKind>) -> Self {
        self.template = template.filter(|t| *t != TemplateKind::N);
        self
    }

    pub fn k(&self) -> usize {
        self.delta.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HueAssignment {
    /// Angle per cluster in `[0, 2pi)`.
    pub theta: Vec<f64>,
    pub stress: f64,
}

impl HueAssignment {
    pub fn degrees(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t.to_degrees()).collect()
    }

    /// `{cluster_id: degrees}` export.
    pub fn to_json(&self) -> BTreeMap<String, f64> {
        self.degrees().into_iter().enumerate().map(|(i, d)| (i.to_string(), d)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HueOptions {
    pub seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once an accepted step lowers the stress by less than this.
    pub tol: f64,
}

impl Default for HueOptions {
    fn default() -> Self {
        Self { seed: 0, restarts: 10, max_iters: 2000, tol: 1e-9 }
    }
}

fn constrain(theta: &mut [f64], fixed: &[Option<f64>], template: Option<&PlacedTemplate>) {
    for (t, f) in theta.iter_mut().zip(fixed) {
        *t = match (f, template) {
            (Some(pin), _) => *pin,
            (None, Some(tpl)) => tpl.project(*t).0,
            (None, None) => normalize_angle(*t),
        };
    }
}

/// One gradient-descent run with backtracking line search. Returns the final
/// angles and the stress after every accepted step (starting with the initial
/// configuration), which never increases.
pub fn descend(
    problem: &HueProblem,
    init: &[f64],
    template: Option<&PlacedTemplate>,
    max_iters: usize,
    tol: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut theta = init.to_vec();
    constrain(&mut theta, &problem.fixed, template);
    let mut stress = circular_stress(&theta, &problem.delta);
    let mut trace = vec![stress];
    let mut step = 0.5;
    for _ in 0..max_iters {
        let mut grad = stress_gradient(&theta, &problem.delta);
        for (g, f) in grad.iter_mut().zip(&problem.fixed) {
            if f.is_some() {
                *g = 0.0;
            }
        }
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 < 1e-24 || !stress.is_finite() {
            break;
        }
        let mut accepted = None;
        while step > 1e-12 {
            let mut cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            constrain(&mut cand, &problem.fixed, template);
            let s = circular_stress(&cand, &problem.delta);
            // Armijo condition on the realised (projected) displacement.
            let decrease: f64 =
                theta.iter().zip(&cand).zip(&grad).map(|((t, c), g)| signed_difference(*t, *c) * g).sum();
            if s <= stress - 1e-4 * decrease.max(0.0) && s <= stress {
                accepted = Some((cand, s));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, s)) = accepted else { break };
        let improvement = stress - s;
        theta = cand;
        stress = s;
        trace.push(stress);
        step = (step * 2.0).min(4.0);
        if improvement < tol {
            break;
        }
    }
    (theta, trace)
}

/// Above this many clusters the search is scaled down so that total work
/// stays roughly that of a `FULL_SEARCH_K`-cluster problem; each descent step
/// costs O(k²).
const FULL_SEARCH_K: usize = 64;

fn search_budget(k: usize, opts: &HueOptions) -> (usize, usize) {
    if k <= FULL_SEARCH_K {
        return (opts.restarts.max(1), opts.max_iters);
    }
    let shrink = (k * k) as f64 / (FULL_SEARCH_K * FULL_SEARCH_K) as f64;
    let restarts = ((opts.restarts.max(1) as f64 / shrink).ceil() as usize).max(1);
    let iters = ((opts.max_iters as f64 / shrink).ceil() as usize).clamp(opts.max_iters.min(50), opts.max_iters);
    (restarts, iters)
}

fn random_start(problem: &HueProblem, seed: u64, restart: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    (0..problem.k()).map(|_| rng.random_range(0.0..TAU)).collect()
}

/// Fits hues by multi-start gradient descent, keeping the lowest-stress run
/// (lowest restart index on ties). Pinned clusters never move. With a
/// template, the unconstrained optimum is moved into the best-rotated
/// template and descent continues with every step projected into it.
pub fn optimize_hues(problem: &HueProblem, opts: &HueOptions) -> HueAssignment {
    let k = problem.k();
    if k == 0 {
        return HueAssignment { theta: Vec::new(), stress: 0.0 };
    }
    if k == 1 {
        return HueAssignment { theta: vec![problem.fixed[0].unwrap_or(DEFAULT_HUE)], stress: 0.0 };
    }
    if problem.fixed.iter().all(Option::is_some) {
        let theta: Vec<f64> = problem.fixed.iter().map(|f| f.unwrap()).collect();
        let stress = circular_stress(&theta, &problem.delta);
        return HueAssignment { theta, stress };
    }
    let (restarts, max_iters) = search_budget(k, opts);
    let runs: Vec<(Vec<f64>, f64)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let init = random_start(problem, opts.seed, r);
            let (theta, trace) = descend(problem, &init, None, max_iters, opts.tol);
            (theta, *trace.last().unwrap())
        })
        .collect();
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.1 < runs[best].1 {
            best = i;
        }
    }
    let (mut theta, mut stress) = runs.into_iter().nth(best).unwrap();

    if let Some(kind) = problem.template {
        let placed = best_rotation(kind, &theta, &problem.fixed);
        let (t, trace) = descend(problem, &theta, Some(&placed), max_iters, opts.tol);
        theta = t;
        stress = *trace.last().unwrap();
    }
    HueAssignment { theta, stress }
}

/// Moves every free angle of `assignment` to the nearest point of the named
/// template, rotated to minimise total movement. `""` and `"N"` leave the
/// assignment unchanged.
pub fn apply_harmonic_template(problem: &HueProblem, assignment: &HueAssignment, name: &str) -> Result<HueAssignment> {
    let kind = match TemplateKind::parse_optional(name)? {
        None | Some(TemplateKind::N) => return Ok(assignment.clone()),
        Some(kind) => kind,
    };
    let placed = best_rotation(kind, &assignment.theta, &problem.fixed);
    let mut theta = assignment.theta.clone();
    constrain(&mut theta, &problem.fixed, Some(&placed));
    let stress = circular_stress(&theta, &problem.delta);
    Ok(HueAssignment { theta, stress })
}
