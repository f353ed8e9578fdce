//! Session state as immutable snapshots, and the mutations that move from one
//! snapshot to the next.
//!
//! A snapshot is a pure function of the dataset, the [`PipelineConfig`] and
//! the [`ViewParams`]; mutations take incremental shortcuts (reusing the
//! dendrogram, the clustering or the bin labels) but must land on the same
//! state a fresh run with the final parameters would produce.

use std::collections::BTreeMap;
use std::sync::Arc;

use linehue::cluster::{split_cluster, Clustering, Dendrogram, Metric};
use linehue::hue::TemplateKind;
use linehue::ingest::{LineKind, LineSet, ParsedLines};
use linehue::pipeline::{
    cluster_features, clustering_for, dendrogram_for, derive, derive_from, fit_hues, prepare, relabel, Derived,
    PipelineConfig, Prepared, ViewParams,
};
use linehue::raster::candidate_count;
use linehue::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Conflict,
    Unprocessable,
    TooLarge,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceError {
    pub kind: ErrorKind,
    pub message: String,
    pub hint: Option<String>,
}

impl ServiceError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), hint: None }
    }

    pub fn with_hint(mut self, hint: impl Into<String>) -> Self {
        self.hint = Some(hint.into());
        self
    }
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::UnknownCluster(_) => ErrorKind::NotFound,
            Error::CannotSplit(_) => ErrorKind::Conflict,
            Error::Io(_) | Error::Image(_) | Error::Cache(_) => ErrorKind::Internal,
            _ => ErrorKind::Unprocessable,
        };
        ServiceError::new(kind, e.to_string())
    }
}

pub type ServiceResult<T> = Result<T, ServiceError>;

/// An uploaded or generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub lineset: LineSet,
    pub original_ids: Vec<String>,
}

impl From<ParsedLines> for Dataset {
    fn from(p: ParsedLines) -> Self {
        Self { lineset: p.lineset, original_ids: p.original_ids }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsUpdate {
    pub min_density: Option<u32>,
    pub k: Option<usize>,
    pub metric: Option<Metric>,
    pub log_scale: Option<bool>,
}

/// Re-samples bins and rebuilds the dendrogram.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessRequest {
    pub min_density: Option<u32>,
    pub max_samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HueUpdate {
    pub cluster: usize,
    /// Required when pinning.
    pub degrees: Option<f64>,
    /// `false` releases the pin.
    #[serde(default = "default_true")]
    pub pinned: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateRequest {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Action {
    Params(ParamsUpdate),
    Preprocess(PreprocessRequest),
    Split { cluster: usize },
    Hue(HueUpdate),
    Template(TemplateRequest),
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub revision: u64,
    pub dataset: Arc<Dataset>,
    /// Sample, dendrogram and rendering settings. `k`, `min_density`,
    /// `log_scale` and `template` are kept in step with `view`.
    pub config: PipelineConfig,
    pub prepared: Arc<Prepared>,
    pub view: ViewParams,
    pub derived: Arc<Derived>,
}

fn validate_view_values(k: Option<usize>, min_density: Option<u32>) -> ServiceResult<()> {
    if k == Some(0) {
        return Err(ServiceError::new(ErrorKind::Unprocessable, "k must be at least 1"));
    }
    if min_density == Some(0) {
        return Err(ServiceError::new(ErrorKind::Unprocessable, "min_density must be at least 1"));
    }
    Ok(())
}

fn nothing_to_cluster(min_density: u32) -> ServiceError {
    ServiceError::new(ErrorKind::Unprocessable, format!("{} (min_density {min_density})", Error::NothingToCluster))
}

impl Snapshot {
    /// Runs the full pipeline with `config`.
    pub fn create(dataset: Dataset, config: PipelineConfig) -> ServiceResult<Self> {
        config.validate()?;
        let prepared = prepare(&dataset.lineset, &config, None)?;
        let view = config.view(dataset.lineset.kind());
        let derived = derive(&prepared, &view, &config.hue_options())?;
        Ok(Self {
            revision: 1,
            dataset: Arc::new(dataset),
            config,
            prepared: Arc::new(prepared),
            view,
            derived: Arc::new(derived),
        })
    }

    pub fn kind(&self) -> LineKind {
        self.dataset.lineset.kind()
    }

    /// The batch configuration equivalent to the current parameters. Together
    /// with [`Snapshot::view`] it reproduces this snapshot from scratch.
    pub fn batch_config(&self) -> PipelineConfig {
        self.config.clone()
    }

    pub fn apply(&self, action: &Action) -> ServiceResult<Snapshot> {
        match action {
            Action::Params(p) => self.update_params(p),
            Action::Preprocess(p) => self.preprocess(p),
            Action::Split { cluster } => self.split(*cluster),
            Action::Hue(h) => self.set_hue(h),
            Action::Template(t) => self.set_template(&t.name),
        }
    }

    fn next(&self) -> Snapshot {
        Snapshot { revision: self.revision + 1, ..self.clone() }
    }

    fn check_cluster(&self, cluster: usize) -> ServiceResult<usize> {
        self.derived
            .clustering
            .nodes
            .get(cluster)
            .copied()
            .ok_or_else(|| ServiceError::new(ErrorKind::NotFound, format!("unknown cluster {cluster}")))
    }

    fn rederive(&mut self, clustering: Clustering) -> ServiceResult<()> {
        // Pins belong to dendrogram nodes; drop the ones no longer shown.
        self.view.pins.retain(|node, _| clustering.nodes.contains(node));
        let derived = derive_from(&self.prepared, clustering, &self.view, &self.config.hue_options())?;
        self.derived = Arc::new(derived);
        Ok(())
    }

    fn refit_hues(&mut self) -> ServiceResult<()> {
        let d = &self.derived;
        let (hue_problem, hues) = fit_hues(&d.clustering, &d.means, &self.view, &self.config.hue_options())?;
        self.derived = Arc::new(Derived { hue_problem, hues, ..(**d).clone() });
        Ok(())
    }

    fn update_params(&self, p: &ParamsUpdate) -> ServiceResult<Snapshot> {
        validate_view_values(p.k, p.min_density)?;
        let metric = p.metric.unwrap_or(self.config.metric);
        let k = p.k.unwrap_or(self.view.k);
        let min_density = p.min_density.unwrap_or(self.view.min_density);
        let log_scale = p.log_scale.unwrap_or(self.view.log_scale);
        let (metric_changed, k_changed) = (metric != self.config.metric, k != self.view.k);
        let density_changed = min_density != self.view.min_density;
        if !metric_changed && !k_changed && !density_changed && log_scale == self.view.log_scale {
            return Ok(self.clone());
        }

        let n_leaves = self.prepared.dendrogram.n_leaves();
        if k > n_leaves {
            return Err(ServiceError::new(
                ErrorKind::Unprocessable,
                format!("k must be at most {n_leaves}, the number of sampled bins"),
            ));
        }
        if density_changed {
            let fg = &self.prepared.features;
            if candidate_count(fg, min_density) < 2 {
                return Err(nothing_to_cluster(min_density));
            }
            let stale =
                self.prepared.sample.bin_indices.iter().filter(|&&b| fg.len_of(b as usize) < min_density as usize);
            let stale = stale.count();
            if stale > 0 {
                return Err(ServiceError::new(
                    ErrorKind::Conflict,
                    format!("{stale} sampled bins fall below min_density {min_density}; the dendrogram is stale"),
                )
                .with_hint("POST /sessions/{id}/preprocess with the new min_density to re-sample"));
            }
        }

        let mut s = self.next();
        s.view.min_density = min_density;
        s.view.log_scale = log_scale;
        s.config.min_density = min_density;
        // The sample keeps the threshold it was drawn at until re-preprocessed.
        let sampled_at = s.prepared.sample.min_density;
        s.config.sample_min_density = (sampled_at != min_density).then_some(sampled_at);
        s.config.log_scale = Some(log_scale);
        if metric_changed {
            let dendrogram = dendrogram_for(&s.prepared.sample, &s.prepared.features, metric)?;
            let mut prepared = (*s.prepared).clone();
            prepared.dendrogram = dendrogram;
            prepared.sample_params.metric = metric;
            s.prepared = Arc::new(prepared);
            s.config.metric = metric;
            s.view.pins.clear();
        }
        if metric_changed || k_changed {
            s.view.k = k;
            s.config.k = k;
            s.view.splits.clear();
            let clustering = clustering_for(&s.prepared, &s.view)?;
            s.rederive(clustering)?;
        } else if density_changed {
            let (cluster_map, lines) = relabel(&s.prepared, &s.derived.means, min_density);
            s.derived = Arc::new(Derived { cluster_map, lines, ..(*s.derived).clone() });
        }
        Ok(s)
    }

    fn preprocess(&self, p: &PreprocessRequest) -> ServiceResult<Snapshot> {
        validate_view_values(None, p.min_density)?;
        let mut s = self.next();
        let min_density = p.min_density.unwrap_or(self.view.min_density);
        s.config.min_density = min_density;
        s.config.sample_min_density = Some(min_density);
        if let Some(m) = p.max_samples {
            s.config.max_samples = m;
        }
        if let Some(seed) = p.seed {
            s.config.seed = seed;
        }
        s.config.validate()?;
        if candidate_count(&s.prepared.features, min_density) < 2 {
            return Err(nothing_to_cluster(min_density));
        }
        let prepared = cluster_features(s.prepared.spec, Arc::clone(&s.prepared.features), s.config.sample_params())?;
        let n_leaves = prepared.dendrogram.n_leaves();
        s.prepared = Arc::new(prepared);
        s.view.min_density = min_density;
        s.view.k = s.view.k.min(n_leaves);
        s.config.k = s.view.k;
        s.view.splits.clear();
        s.view.pins.clear();
        let clustering = clustering_for(&s.prepared, &s.view)?;
        s.rederive(clustering)?;
        Ok(s)
    }

    fn split(&self, cluster: usize) -> ServiceResult<Snapshot> {
        let node = self.check_cluster(cluster)?;
        let clustering = split_cluster(&self.derived.clustering, &self.prepared.dendrogram, cluster).map_err(|e| {
            let mut err = ServiceError::from(e);
            err.message = format!("cluster {cluster} holds a single sampled bin and cannot be split");
            err
        })?;
        let mut s = self.next();
        s.view.splits.push(node);
        s.rederive(clustering)?;
        Ok(s)
    }

    fn set_hue(&self, h: &HueUpdate) -> ServiceResult<Snapshot> {
        let node = self.check_cluster(h.cluster)?;
        let mut s = self.next();
        if h.pinned {
            let degrees = h
                .degrees
                .filter(|d| d.is_finite())
                .ok_or_else(|| ServiceError::new(ErrorKind::Unprocessable, "pinning needs finite degrees"))?;
            s.view.pins.insert(node, degrees.rem_euclid(360.0));
        } else {
            s.view.pins.remove(&node);
        }
        s.refit_hues()?;
        Ok(s)
    }

    fn set_template(&self, name: &str) -> ServiceResult<Snapshot> {
        let template = TemplateKind::parse_optional(name)?;
        let mut s = self.next();
        s.view.template = template;
        s.config.template = template;
        s.refit_hues()?;
        Ok(s)
    }

    pub fn state(&self) -> StateView {
        StateView::build(&self.dataset, &self.config, &self.prepared, &self.view, &self.derived)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub id: usize,
    /// Dendrogram node the cluster corresponds to.
    pub node: usize,
    pub hue_deg: f64,
    pub pinned: bool,
    pub line_count: usize,
    pub bin_count: usize,
    pub sampled_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamsView {
    pub k: usize,
    pub min_density: u32,
    pub sample_min_density: u32,
    pub max_samples: usize,
    pub seed: u64,
    pub metric: Metric,
    pub log_scale: bool,
    pub template: Option<TemplateKind>,
    pub radius: f64,
    pub splits: Vec<usize>,
    pub pins: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridView {
    pub width: u32,
    pub height: u32,
}

/// Everything the UI needs about a session, apart from id and revision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateView {
    pub kind: LineKind,
    pub n_lines: usize,
    pub grid: GridView,
    pub params: ParamsView,
    pub clusters: Vec<ClusterSummary>,
    pub unassigned_lines: usize,
    pub stress: f64,
    pub dendrogram: Dendrogram,
}

impl StateView {
    pub fn build(
        dataset: &Dataset,
        config: &PipelineConfig,
        prepared: &Prepared,
        view: &ViewParams,
        derived: &Derived,
    ) -> Self {
        let (line_counts, unassigned_lines) = derived.lines.counts();
        let mut bin_counts = vec![0usize; derived.clustering.k];
        for label in derived.cluster_map.labels.iter().flatten() {
            bin_counts[*label as usize] += 1;
        }
        let sampled = derived.clustering.sizes();
        let clusters = derived
            .hue_degrees(view)
            .into_iter()
            .enumerate()
            .map(|(id, hue_deg)| {
                let node = derived.clustering.nodes[id];
                ClusterSummary {
                    id,
                    node,
                    hue_deg,
                    pinned: view.pins.contains_key(&node),
                    line_count: line_counts[id],
                    bin_count: bin_counts[id],
                    sampled_bins: sampled[id],
                }
            })
            .collect();
        StateView {
            kind: dataset.lineset.kind(),
            n_lines: dataset.lineset.len(),
            grid: GridView { width: prepared.spec.width, height: prepared.spec.height },
            params: ParamsView {
                k: view.k,
                min_density: view.min_density,
                sample_min_density: prepared.sample_params.min_density,
                max_samples: prepared.sample_params.max_samples,
                seed: prepared.sample_params.seed,
                metric: prepared.sample_params.metric,
                log_scale: view.log_scale,
                template: view.template,
                radius: config.radius,
                splits: view.splits.clone(),
                pins: view.pins.clone(),
            },
            clusters,
            unassigned_lines,
            stress: derived.hues.stress,
            dendrogram: prepared.dendrogram.clone(),
        }
    }
}
