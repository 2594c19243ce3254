//! Decision-state local state estimation and anomaly detection.
//!
//! Each cluster of overlapping decision-state windows on a root part gets
//! its own estimator, trained on the frames its permitted parts recorded
//! inside the window. Outside windows only a time-conditioned novelty check
//! against the active part's own trials runs.

mod calibrate;
mod gating;
mod mil;
mod model;
mod predict;
mod prototype;
mod training;
mod windows;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{EmbeddingError, Observation};
use crate::graph::{DsId, GraphError, PartId};

pub use calibrate::{anomaly_check, calibrate_anomaly, max_similarity, quantile};
pub use gating::{gate_patches, GatedPatches};
pub use mil::{
    mil_forward, mil_loss_and_grad, mil_train, MilConfig, MilForward, MilGradients, MilParams, MilTrainReport,
};
pub use model::{ClassScores, SwitcherModel};
pub use predict::{predict, Prediction};
pub use prototype::{class_means, classify, classify_among, fit_prototypes, representation};
pub use training::{
    clusters_for_part, ds_training_set, ensure_trained, train_cluster, train_model, Cluster, ModelSet, SwitcherConfig,
    TimeDetector,
};
pub use windows::cluster_windows;

#[derive(Debug, Error)]
pub enum SwitcherError {
    #[error("class {0} has no training samples")]
    InsufficientData(PartId),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("sample labelled {0} is not one of the model classes")]
    UnknownLabel(PartId),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("model not ready: {0}")]
    ModelNotReady(String),
    #[error("observation has no attention weights")]
    AttentionRequired,
    #[error("invalid model document: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PrototypeMean,
    #[default]
    PrototypeConcat,
    #[serde(alias = "attn")]
    AttnGated,
    Mil,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PrototypeMean, Method::PrototypeConcat, Method::AttnGated, Method::Mil];

    pub fn name(self) -> &'static str {
        match self {
            Method::PrototypeMean => "prototype-mean",
            Method::PrototypeConcat => "prototype-concat",
            Method::AttnGated => "attn-gated",
            Method::Mil => "mil",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prototype-mean" | "mean" => Ok(Method::PrototypeMean),
            "prototype-concat" | "concat" => Ok(Method::PrototypeConcat),
            "attn" | "attn-gated" => Ok(Method::AttnGated),
            "mil" => Ok(Method::Mil),
            other => Err(format!("unknown method {other}")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Gating {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadReduce {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Calibration {
    /// Training-score quantile used as the anomaly threshold, in (0, 1].
    pub percentile_keep: f64,
    /// Fraction of patches kept by hard gating, in (0, 1].
    pub attn_keep: f64,
    pub gating: Gating,
    pub head_reduce: HeadReduce,
    /// Exclude each sample from its own class prototype when calibrating.
    #[serde(default)]
    pub leave_one_out: bool,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            percentile_keep: 0.1,
            attn_keep: 0.2,
            gating: Gating::Hard,
            head_reduce: HeadReduce::Mean,
            leave_one_out: true,
        }
    }
}

/// One training frame with its class label (a part id).
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub label: PartId,
    pub obs: &'a Observation,
}

impl<'a> Labeled<'a> {
    pub fn new(label: PartId, obs: &'a Observation) -> Self {
        Self { label, obs }
    }
}

/// Stable fingerprint of a labelled training set.
pub fn fingerprint(samples: &[Labeled<'_>]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.label.0.to_le_bytes());
        match s.obs.meta.key {
            Some(k) => {
                h.update(k.part.0.to_le_bytes());
                h.update(k.trial.to_le_bytes());
                h.update(k.step.to_le_bytes());
            }
            None => {
                for v in s.obs.embeddings().iter().step_by(97) {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
    hex::encode(&h.finalize()[..16])
}

pub(crate) fn ds_key(members: &[DsId]) -> DsId {
    *members.iter().min().expect("clusters are non-empty")
}
