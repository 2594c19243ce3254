use serde::{Deserialize, Serialize};

use super::calibrate::anomaly_check;
use super::prototype::classify_among;
use super::{ModelSet, SwitcherError};
use crate::embeddings::Observation;
use crate::graph::{DsId, PartId, TaskGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Prediction {
    /// Estimated active part.
    pub part: PartId,
    pub anomalous: bool,
    pub anomaly_score: f64,
    pub threshold: f64,
    pub scores: Vec<(PartId, f64)>,
    /// Cluster key when `tau` lies inside a decision window of the active part.
    pub cluster: Option<DsId>,
}

/// Inside a decision window the cluster model picks among the eligible
/// permitted parts; outside, the active part is kept and only the
/// time-conditioned novelty check runs.
pub fn predict(
    models: &ModelSet,
    graph: &TaskGraph,
    active: PartId,
    tau: u32,
    obs: &Observation,
) -> Result<Prediction, SwitcherError> {
    if let Some((cluster, model)) = models.lookup(graph, active, tau) {
        let model = model.ok_or_else(|| SwitcherError::ModelNotReady(format!("{} is not trained", cluster.key)))?;
        let eligible = |p: PartId| graph.part(p).map(|s| s.is_eligible_at(tau)).unwrap_or(false);
        let scores = classify_among(model, obs, eligible)?;
        let (anomalous, score) = anomaly_check(model, obs)?;
        return Ok(Prediction {
            part: scores.best,
            anomalous,
            anomaly_score: score,
            threshold: model.anomaly_threshold.unwrap_or(f64::NEG_INFINITY),
            scores: scores.scores,
            cluster: Some(cluster.key),
        });
    }
    let detector = models
        .detectors
        .get(&active)
        .ok_or_else(|| SwitcherError::ModelNotReady(format!("no novelty reference for {active}")))?;
    let (anomalous, score) = match detector.score(obs, tau)? {
        Some(s) => (s < detector.threshold, s),
        None => (false, 1.0),
    };
    Ok(Prediction {
        part: active,
        anomalous,
        anomaly_score: score,
        threshold: detector.threshold,
        scores: vec![(active, score)],
        cluster: None,
    })
}
