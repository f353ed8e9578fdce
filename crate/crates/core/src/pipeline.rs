//! End-to-end pipeline: grid fitting, feature extraction, sampling,
//! clustering, assignment, hue fitting and rendering.
//!
//! The work splits into a [`Prepared`] stage (everything up to the dendrogram,
//! the expensive part) and a cheap [`derive`] stage driven by [`ViewParams`].
//! The interactive service keeps the first and reruns the second.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assign::{assign_bins, assign_lines, mean_vectors, ClusterMap, LineAssignment, MeanVector};
use crate::cluster::{build_dendrogram, cut_to_k, distance_matrix, split_cluster, Clustering, Dendrogram, Metric};
use crate::error::{Error, Result};
use crate::hue::{optimize_hues, target_arc_distances, HueAssignment, HueOptions, HueProblem, TemplateKind};
use crate::ingest::{fit_grid, GridSpec, LineKind, LineSet};
use crate::raster::{
    density_of, extract_feature_sets, load_or_extract, sample_bins, BinSample, DensityGrid, FeatureGrid,
    DEFAULT_MAX_SAMPLES, DEFAULT_MIN_DENSITY,
};
use crate::render::{render_cluster_lines, render_density, Image, RampParams, RenderOptions};

/// Grid resolution in bins, written `WxH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSize {
    pub width: u32,
    pub height: u32,
}

impl GridSize {
    pub fn default_for(kind: LineKind) -> Self {
        match kind {
            LineKind::Timeseries => GridSize { width: 512, height: 256 },
            LineKind::Trajectory => GridSize { width: 512, height: 512 },
        }
    }
}

impl fmt::Display for GridSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for GridSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("grid size must look like 512x256, got {s:?}"));
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        Ok(GridSize { width: w.trim().parse().map_err(|_| bad())?, height: h.trim().parse().map_err(|_| bad())? })
    }
}

impl TryFrom<String> for GridSize {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridSize> for String {
    fn from(g: GridSize) -> String {
        g.to_string()
    }
}

/// Every knob of a batch run. Unset optional fields take defaults that depend
/// on the dataset kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub bins: Option<GridSize>,
    pub preserve_aspect: bool,
    /// Feature extraction radius in bin units.
    pub radius: f64,
    /// Bins below this density stay unlabelled.
    pub min_density: u32,
    /// Density threshold for the clustering sample; defaults to `min_density`.
    pub sample_min_density: Option<u32>,
    /// Bin sample size handed to clustering.
    pub max_samples: usize,
    pub metric: Metric,
    pub k: usize,
    pub seed: u64,
    pub ramp: RampParams,
    /// Defaults to on for trajectories, off for time series.
    pub log_scale: Option<bool>,
    pub template: Option<TemplateKind>,
    /// Pixels per bin in rendered images.
    pub scale: u32,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub out: Option<PathBuf>,
    /// Reuse a feature-set sidecar file (the CLI keeps it next to the input).
    pub cache: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let hue = HueOptions::default();
        Self {
            bins: None,
            preserve_aspect: false,
            radius: 1.0,
            min_density: DEFAULT_MIN_DENSITY,
            sample_min_density: None,
            max_samples: DEFAULT_MAX_SAMPLES,
            metric: Metric::Overlap,
            k: 3,
            seed: 0,
            ramp: RampParams::default(),
            log_scale: None,
            template: None,
            scale: 1,
            restarts: hue.restarts,
            max_iters: hue.max_iters,
            tol: hue.tol,
            out: None,
            cache: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParameter(m));
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return fail(format!("radius must be positive, got {}", self.radius));
        }
        if self.min_density < 1 || self.sample_min_density == Some(0) {
            return fail("min_density must be at least 1".into());
        }
        if self.max_samples < 2 {
            return fail(format!("max_samples must be at least 2, got {}", self.max_samples));
        }
        if self.k < 1 {
            return fail("k must be at least 1".into());
        }
        if self.scale < 1 {
            return fail("scale must be at least 1".into());
        }
        if self.restarts < 1 {
            return fail("restarts must be at least 1".into());
        }
        let r = &self.ramp;
        if !(0.0..=100.0).contains(&r.l_lo) || !(0.0..=100.0).contains(&r.l_hi) || r.c_lo < 0.0 || r.c_hi < 0.0 {
            return fail("ramp luminance must lie in [0, 100] and chroma be non-negative".into());
        }
        Ok(())
    }

    pub fn grid_size(&self, kind: LineKind) -> GridSize {
        self.bins.unwrap_or_else(|| GridSize::default_for(kind))
    }

    pub fn log_scale_for(&self, kind: LineKind) -> bool {
        self.log_scale.unwrap_or(kind == LineKind::Trajectory)
    }

    pub fn sample_params(&self) -> SampleParams {
        SampleParams {
            min_density: self.sample_min_density.unwrap_or(self.min_density),
            max_samples: self.max_samples,
            seed: self.seed,
            metric: self.metric,
        }
    }

    pub fn hue_options(&self) -> HueOptions {
        HueOptions { seed: self.seed, restarts: self.restarts, max_iters: self.max_iters, tol: self.tol }
    }

    pub fn view(&self, kind: LineKind) -> ViewParams {
        ViewParams {
            k: self.k,
            splits: Vec::new(),
            pins: BTreeMap::new(),
            template: self.template,
            min_density: self.min_density,
            log_scale: self.log_scale_for(kind),
        }
    }
}

/// Parameters that shape the bin sample and dendrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleParams {
    pub min_density: u32,
    pub max_samples: usize,
    pub seed: u64,
    pub metric: Metric,
}

/// Everything up to and including the dendrogram.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: GridSpec,
    pub features: Arc<FeatureGrid>,
    pub density: DensityGrid,
    pub sample_params: SampleParams,
    pub sample: BinSample,
    pub dendrogram: Dendrogram,
}

/// Fits the grid and extracts feature sets, through the sidecar cache when
/// `cache_path` is given.
pub fn extract(ls: &LineSet, config: &PipelineConfig, cache_path: Option<&Path>) -> Result<(GridSpec, FeatureGrid)> {
    let size = config.grid_size(ls.kind());
    let spec = fit_grid(ls, size.width, size.height, config.preserve_aspect)?;
    let start = Instant::now();
    let fg = match cache_path {
        Some(path) => load_or_extract(path, ls, &spec, config.radius)?.0,
        None => extract_feature_sets(ls, &spec, config.radius)?,
    };
    log::debug!("feature extraction: {:.2?}", start.elapsed());
    Ok((spec, fg))
}

/// Samples bins and builds the dendrogram over already extracted features.
pub fn cluster_features(spec: GridSpec, features: Arc<FeatureGrid>, params: SampleParams) -> Result<Prepared> {
    let density = density_of(&features);
    let sample = sample_bins(&features, params.min_density, params.max_samples, params.seed)?;
    let dendrogram = dendrogram_for(&sample, &features, params.metric)?;
    Ok(Prepared { spec, features, density, sample_params: params, sample, dendrogram })
}

pub fn dendrogram_for(sample: &BinSample, fg: &FeatureGrid, metric: Metric) -> Result<Dendrogram> {
    let start = Instant::now();
    let dmat = distance_matrix(sample, fg, metric);
    log::debug!("distance matrix over {} bins: {:.2?}", sample.len(), start.elapsed());
    let start = Instant::now();
    let dendrogram = build_dendrogram(&dmat)?.with_leaf_bins(sample.bin_indices.clone());
    log::debug!("dendrogram: {:.2?}", start.elapsed());
    Ok(dendrogram)
}

pub fn prepare(ls: &LineSet, config: &PipelineConfig, cache_path: Option<&Path>) -> Result<Prepared> {
    config.validate()?;
    let (spec, fg) = extract(ls, config, cache_path)?;
    cluster_features(spec, Arc::new(fg), config.sample_params())
}

/// Cheap, interactive parameters applied on top of a [`Prepared`] stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewParams {
    pub k: usize,
    /// Dendrogram nodes split after the initial cut, in order.
    pub splits: Vec<usize>,
    /// Pinned hue in degrees, keyed by the dendrogram node of the cluster.
    pub pins: BTreeMap<usize, f64>,
    pub template: Option<TemplateKind>,
    /// Bins below this density stay unlabelled.
    pub min_density: u32,
    pub log_scale: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derived {
    pub clustering: Clustering,
    pub means: Vec<MeanVector>,
    pub cluster_map: ClusterMap,
    pub lines: LineAssignment,
    pub hue_problem: HueProblem,
    pub hues: HueAssignment,
}

impl Derived {
    /// Hue of each cluster in degrees, reporting pins exactly as given.
    pub fn hue_degrees(&self, view: &ViewParams) -> Vec<f64> {
        self.clustering
            .nodes
            .iter()
            .zip(&self.hues.theta)
            .map(|(node, t)| view.pins.get(node).map_or_else(|| t.to_degrees(), |&d| d.rem_euclid(360.0)))
            .collect()
    }
}

/// The initial cut followed by the recorded splits.
pub fn clustering_for(prep: &Prepared, view: &ViewParams) -> Result<Clustering> {
    let n = prep.dendrogram.n_leaves();
    if view.k < 1 || view.k > n {
        return Err(Error::InvalidParameter(format!("k must be in 1..={n}, got {}", view.k)));
    }
    let mut clustering = cut_to_k(&prep.dendrogram, view.k)?;
    for &node in &view.splits {
        let cid = clustering
            .nodes
            .iter()
            .position(|&x| x == node)
            .ok_or_else(|| Error::InvalidParameter(format!("node {node} is not a current cluster")))?;
        clustering = split_cluster(&clustering, &prep.dendrogram, cid)?;
    }
    Ok(clustering)
}

/// Labels bins against the cluster means and filters lines.
pub fn relabel(prep: &Prepared, means: &[MeanVector], min_density: u32) -> (ClusterMap, LineAssignment) {
    let cluster_map = assign_bins(&prep.features, means, min_density);
    let lines = assign_lines(&cluster_map, &prep.features, &prep.density);
    (cluster_map, lines)
}

/// Fits hues for the given clusters, honouring pins and the template.
pub fn fit_hues(
    clustering: &Clustering,
    means: &[MeanVector],
    view: &ViewParams,
    hue: &HueOptions,
) -> Result<(HueProblem, HueAssignment)> {
    let fixed = clustering.nodes.iter().map(|n| view.pins.get(n).map(|d| d.to_radians())).collect();
    let problem = HueProblem::new(target_arc_distances(means))?.with_fixed(fixed).with_template(view.template);
    let hues = optimize_hues(&problem, hue);
    Ok((problem, hues))
}

/// Everything downstream of a clustering.
pub fn derive_from(prep: &Prepared, clustering: Clustering, view: &ViewParams, hue: &HueOptions) -> Result<Derived> {
    let means = mean_vectors(&clustering, &prep.sample, &prep.features);
    let (cluster_map, lines) = relabel(prep, &means, view.min_density);
    let (hue_problem, hues) = fit_hues(&clustering, &means, view, hue)?;
    Ok(Derived { clustering, means, cluster_map, lines, hue_problem, hues })
}

/// Applies the cut, the splits and the pins, then reassigns bins and lines
/// and refits hues.
pub fn derive(prep: &Prepared, view: &ViewParams, hue: &HueOptions) -> Result<Derived> {
    derive_from(prep, clustering_for(prep, view)?, view, hue)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LegendEntry {
    pub hue_deg: f64,
    pub line_count: usize,
}

pub fn legend(derived: &Derived, view: &ViewParams) -> BTreeMap<String, LegendEntry> {
    let (counts, _) = derived.lines.counts();
    derived
        .hue_degrees(view)
        .into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (hue_deg, line_count))| (c.to_string(), LegendEntry { hue_deg, line_count }))
        .collect()
}

pub fn render_options(config: &PipelineConfig, view: &ViewParams) -> RenderOptions {
    RenderOptions { scale: config.scale, log_scale: view.log_scale, ramp: config.ramp }
}

pub fn render(prep: &Prepared, derived: &Derived, opts: &RenderOptions) -> Image {
    render_density(&prep.density, &derived.cluster_map, &derived.hues, opts)
}

pub fn render_lines_of(
    ls: &LineSet,
    prep: &Prepared,
    derived: &Derived,
    view: &ViewParams,
    cluster: Option<u32>,
    opts: &RenderOptions,
) -> Image {
    let hue = cluster.map_or(0.0, |c| derived.hue_degrees(view)[c as usize]);
    render_cluster_lines(ls, &derived.lines, cluster, &prep.spec, hue, opts)
}

/// The four files written by a batch run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub png: Vec<u8>,
    pub legend_json: String,
    pub assignment_csv: String,
    pub dendrogram_json: String,
}

pub const PNG_NAME: &str = "density.png";
pub const LEGEND_NAME: &str = "legend.json";
pub const ASSIGNMENT_NAME: &str = "assignment.csv";
pub const DENDROGRAM_NAME: &str = "dendrogram.json";

impl Artifacts {
    pub fn build(
        prep: &Prepared,
        derived: &Derived,
        view: &ViewParams,
        opts: &RenderOptions,
        original_ids: Option<&[String]>,
    ) -> Result<Self> {
        Ok(Self {
            png: render(prep, derived, opts).to_png()?,
            legend_json: serde_json::to_string_pretty(&legend(derived, view))?,
            assignment_csv: derived.lines.to_csv(original_ids),
            dendrogram_json: serde_json::to_string(&prep.dendrogram)?,
        })
    }

    /// Writes all four files into `dir`. If any write fails, files already
    /// written are removed.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let files: [(&str, &[u8]); 4] = [
            (PNG_NAME, &self.png),
            (LEGEND_NAME, self.legend_json.as_bytes()),
            (ASSIGNMENT_NAME, self.assignment_csv.as_bytes()),
            (DENDROGRAM_NAME, self.dendrogram_json.as_bytes()),
        ];
        let mut written = Vec::new();
        for (name, bytes) in files {
            let path = dir.join(name);
            if let Err(e) = std::fs::write(&path, bytes) {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e.into());
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Result of a full batch run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prepared: Prepared,
    pub view: ViewParams,
    pub derived: Derived,
}

pub fn run(ls: &LineSet, config: &PipelineConfig, cache_path: Option<&Path>) -> Result<RunOutput> {
    let prepared = prepare(ls, config, cache_path)?;
    let view = config.view(ls.kind());
    let derived = derive(&prepared, &view, &config.hue_options())?;
    Ok(RunOutput { prepared, view, derived })
}
