use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::calibrate::{calibrate_anomaly, quantile};
use super::mil::{mil_forward, mil_train, MilConfig};
use super::prototype::{class_means, fit_prototypes, representation};
use super::windows::merge_windows;
use super::{ds_key, fingerprint, Calibration, Labeled, Method, SwitcherError, SwitcherModel};
use crate::embeddings::{cosine, FrameStore, Observation};
use crate::graph::{DsId, ModelState, PartId, TaskGraph, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SwitcherConfig {
    pub method: Method,
    pub calibration: Calibration,
    pub mil: MilConfig,
    /// Half-width, in steps, of the reference neighbourhood of the
    /// out-of-window novelty check.
    pub time_neighborhood: u32,
    /// Representation used by the out-of-window check.
    pub time_method: Method,
    /// Threshold quantile of the out-of-window check.
    pub time_percentile: f64,
    pub seed: u64,
}

impl Default for SwitcherConfig {
    fn default() -> Self {
        Self {
            method: Method::default(),
            calibration: Calibration::default(),
            mil: MilConfig::default(),
            time_neighborhood: 5,
            time_method: Method::PrototypeMean,
            time_percentile: 0.0,
            seed: 0,
        }
    }
}

/// Merged window of the decision states on one root part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub key: DsId,
    pub root: PartId,
    pub window: Window,
    pub members: Vec<DsId>,
    /// Union of the members' permitted parts, in order of first appearance.
    pub classes: Vec<PartId>,
}

pub fn clusters_for_part(graph: &TaskGraph, root: PartId) -> Vec<Cluster> {
    let rooted: Vec<_> = graph.ds_rooted_at(root).collect();
    merge_windows(rooted.iter().map(|d| d.window).collect())
        .into_iter()
        .map(|window| {
            let mut members: Vec<_> =
                rooted.iter().filter(|d| window.start <= d.window.start && d.window.end <= window.end).collect();
            members.sort_by_key(|d| d.id);
            let mut classes = Vec::new();
            for d in &members {
                for &p in &d.permitted {
                    if !classes.contains(&p) {
                        classes.push(p);
                    }
                }
            }
            let ids: Vec<DsId> = members.iter().map(|d| d.id).collect();
            Cluster { key: ds_key(&ids), root, window, members: ids, classes }
        })
        .collect()
}

/// Frames every permitted part recorded inside the cluster window, labelled
/// with the part that recorded them.
pub fn ds_training_set<'a>(
    graph: &TaskGraph,
    frames: &'a FrameStore,
    cluster: &Cluster,
) -> Result<Vec<Labeled<'a>>, SwitcherError> {
    let mut out = Vec::new();
    for &c in &cluster.classes {
        let part = graph.part(c)?;
        for trial in &part.trials {
            for (tau, step) in trial.timed(part.offset) {
                if cluster.window.contains(tau) {
                    out.push(Labeled::new(c, frames.get(&step.observation)?));
                }
            }
        }
    }
    Ok(out)
}

/// Fits and calibrates the estimator of one cluster.
pub fn train_cluster(
    graph: &TaskGraph,
    frames: &FrameStore,
    cluster: &Cluster,
    config: &SwitcherConfig,
) -> Result<SwitcherModel, SwitcherError> {
    let samples = ds_training_set(graph, frames, cluster)?;
    train_model(&samples, &cluster.classes, cluster.key, cluster.members.clone(), config)
}

/// Fits `config.method` on labeled samples, records its training accuracy
/// and calibrates the anomaly threshold.
pub fn train_model(
    samples: &[Labeled<'_>],
    classes: &[PartId],
    key: DsId,
    members: Vec<DsId>,
    config: &SwitcherConfig,
) -> Result<SwitcherModel, SwitcherError> {
    let (prototypes, mil, accuracy) = match config.method {
        Method::Mil => {
            let mil_cfg = MilConfig { seed: config.seed ^ (key.0 as u64).wrapping_mul(0x9E37_79B9), ..config.mil };
            let (head, report) = mil_train(samples, classes, &mil_cfg)?;
            let bags = samples
                .iter()
                .map(|s| Ok((s.label, mil_forward(&head, s.obs)?.bag)))
                .collect::<Result<Vec<_>, SwitcherError>>()?;
            (class_means(&bags, classes)?, Some(head), Some(report.train_accuracy))
        }
        m => (fit_prototypes(samples, classes, m, &config.calibration)?, None, None),
    };
    let mut model = SwitcherModel {
        ds_id: key,
        members,
        method: config.method,
        class_ids: classes.to_vec(),
        calibration: config.calibration,
        prototypes,
        mil,
        anomaly_threshold: None,
        trained_on: fingerprint(samples),
        train_samples: samples.len(),
        train_accuracy: accuracy,
    };
    if model.mil.is_none() {
        let correct = samples
            .iter()
            .map(|s| super::classify(&model, s.obs).map(|c| c.best == s.label))
            .collect::<Result<Vec<_>, _>>()?;
        model.train_accuracy = Some(correct.iter().filter(|&&c| c).count() as f64 / samples.len() as f64);
    }
    model.anomaly_threshold = Some(calibrate_anomaly(&model, samples)?);
    Ok(model)
}

/// Novelty check for task times outside decision windows: a frame is
/// compared against the part's own frames recorded near the same task time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDetector {
    pub part: PartId,
    pub method: Method,
    pub calibration: Calibration,
    pub neighborhood: u32,
    pub threshold: f64,
    references: Vec<(u32, Vec<f64>)>,
    source: (usize, usize),
}

impl TimeDetector {
    pub fn fit(
        graph: &TaskGraph,
        frames: &FrameStore,
        part: PartId,
        config: &SwitcherConfig,
    ) -> Result<Self, SwitcherError> {
        let p = graph.part(part)?;
        let method = match config.time_method {
            Method::Mil => Method::PrototypeMean,
            m => m,
        };
        let mut references = Vec::new();
        for trial in &p.trials {
            for (tau, step) in trial.timed(p.offset) {
                let obs = frames.get(&step.observation)?;
                references.push((tau, representation(obs, method, &config.calibration)?));
            }
        }
        let w = config.time_neighborhood;
        let mut scores = Vec::with_capacity(references.len());
        for (i, (t, f)) in references.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for (j, (u, g)) in references.iter().enumerate() {
                if i != j && t.abs_diff(*u) <= w {
                    best = best.max(cosine(f, g)?);
                }
            }
            if best.is_finite() {
                scores.push(best);
            }
        }
        let threshold = quantile(&scores, config.time_percentile).unwrap_or(f64::NEG_INFINITY);
        Ok(Self {
            part,
            method,
            calibration: config.calibration,
            neighborhood: w,
            threshold,
            references,
            source: source_of(graph, part),
        })
    }

    /// Best similarity to a reference within the neighbourhood of `tau`.
    pub fn score(&self, obs: &Observation, tau: u32) -> Result<Option<f64>, SwitcherError> {
        let f = representation(obs, self.method, &self.calibration)?;
        let mut best: Option<f64> = None;
        for (_, g) in self.references.iter().filter(|(t, _)| t.abs_diff(tau) <= self.neighborhood) {
            let s = cosine(&f, g)?;
            best = Some(best.map_or(s, |b| b.max(s)));
        }
        Ok(best)
    }

    pub fn reference_count(&self) -> usize {
        self.references.len()
    }
}

fn source_of(graph: &TaskGraph, part: PartId) -> (usize, usize) {
    graph.part(part).map(|p| (p.trials.len(), p.trials.iter().map(|t| t.steps.len()).sum())).unwrap_or((0, 0))
}

/// Trained estimators of a task, keyed by cluster key and by part.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelSet {
    pub models: BTreeMap<DsId, SwitcherModel>,
    pub detectors: BTreeMap<PartId, TimeDetector>,
}

impl ModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cluster model covering `tau` on `root`, with its cluster.
    pub fn lookup(&self, graph: &TaskGraph, root: PartId, tau: u32) -> Option<(Cluster, Option<&SwitcherModel>)> {
        clusters_for_part(graph, root).into_iter().find(|c| c.window.contains(tau)).map(|c| {
            let m = self.models.get(&c.key).filter(|m| m.members == c.members && m.class_ids == c.classes);
            (c, m)
        })
    }
}

/// Retrains every cluster whose members are not all ready (or whose
/// membership changed) and every detector whose part gained frames. Returns
/// the retrained cluster keys.
pub fn ensure_trained(
    models: &mut ModelSet,
    graph: &mut TaskGraph,
    frames: &FrameStore,
    config: &SwitcherConfig,
) -> Result<Vec<DsId>, SwitcherError> {
    let roots: Vec<PartId> = {
        let mut r: Vec<PartId> = graph.decision_states.iter().map(|d| d.root_part).collect();
        r.sort();
        r.dedup();
        r
    };
    let mut live = Vec::new();
    let mut retrained = Vec::new();
    for root in roots {
        for cluster in clusters_for_part(graph, root) {
            live.push(cluster.key);
            let ready =
                cluster.members.iter().all(|id| graph.ds(*id).map(|d| d.model == ModelState::Ready).unwrap_or(false));
            let current = models.models.get(&cluster.key).is_some_and(|m| {
                m.members == cluster.members && m.class_ids == cluster.classes && m.method == config.method
            });
            if ready && current {
                continue;
            }
            let model = train_cluster(graph, frames, &cluster, config)?;
            models.models.insert(cluster.key, model);
            for d in graph.decision_states.iter_mut().filter(|d| cluster.members.contains(&d.id)) {
                d.model = ModelState::Ready;
            }
            retrained.push(cluster.key);
        }
    }
    models.models.retain(|k, _| live.contains(k));
    models.detectors.retain(|p, _| graph.parts.contains_key(p));
    let parts: Vec<PartId> = graph.parts.keys().copied().collect();
    for part in parts {
        let stale = models.detectors.get(&part).is_none_or(|d| d.source != source_of(graph, part));
        if stale {
            models.detectors.insert(part, TimeDetector::fit(graph, frames, part, config)?);
        }
    }
    Ok(retrained)
}
