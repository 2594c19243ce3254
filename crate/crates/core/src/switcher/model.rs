use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mil::{mil_forward, MilParams};
use super::prototype::representation;
use super::{Calibration, Method, SwitcherError};
use crate::embeddings::{cosine, Observation};
use crate::graph::{DsId, PartId};

/// Estimator for one cluster of decision-state windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitcherModel {
    /// Key of the cluster: the smallest member id.
    pub ds_id: DsId,
    pub members: Vec<DsId>,
    pub method: Method,
    pub class_ids: Vec<PartId>,
    pub calibration: Calibration,
    /// One vector per class: the class prototype, or for MIL the mean bag
    /// representation used for anomaly scoring.
    pub prototypes: Vec<Vec<f64>>,
    pub mil: Option<MilParams>,
    pub anomaly_threshold: Option<f64>,
    pub trained_on: String,
    pub train_samples: usize,
    pub train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    /// `(part, score)` for every class in model order. Cosine similarity for
    /// prototype methods, posterior probability for MIL.
    pub scores: Vec<(PartId, f64)>,
    pub best: PartId,
}

impl SwitcherModel {
    /// Vector compared against the prototypes for anomaly scoring.
    pub fn features(&self, obs: &Observation) -> Result<Vec<f64>, SwitcherError> {
        match (&self.method, &self.mil) {
            (Method::Mil, Some(head)) => Ok(mil_forward(head, obs)?.bag),
            (Method::Mil, None) => Err(SwitcherError::ModelNotReady("MIL head missing".into())),
            (m, _) => representation(obs, *m, &self.calibration),
        }
    }

    pub fn class_scores(&self, obs: &Observation) -> Result<Vec<(PartId, f64)>, SwitcherError> {
        let scores: Vec<f64> = match (&self.method, &self.mil) {
            (Method::Mil, Some(head)) => mil_forward(head, obs)?.probs,
            _ => {
                let f = self.features(obs)?;
                self.prototypes.iter().map(|p| cosine(&f, p)).collect::<Result<_, _>>()?
            }
        };
        Ok(self.class_ids.iter().copied().zip(scores).collect())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ModelDoc::from(self)).expect("model documents serialize")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self, SwitcherError> {
        let doc: ModelDoc = serde_json::from_value(value).map_err(|e| SwitcherError::InvalidModel(e.to_string()))?;
        doc.try_into()
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ModelDoc {
    version: u32,
    ds_id: DsId,
    members: Vec<DsId>,
    method: Method,
    class_ids: Vec<PartId>,
    calibration: Calibration,
    dim: usize,
    prototypes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mil: Option<MilDoc>,
    anomaly_threshold: Option<f64>,
    trained_on: String,
    train_samples: usize,
    #[serde(default)]
    train_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct MilDoc {
    dim: usize,
    hidden: usize,
    classes: usize,
    w1: String,
    b1: String,
    w2: String,
    wc: String,
    bc: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(s: &str, expected: usize, what: &str) -> Result<Vec<f64>, SwitcherError> {
    let bytes = STANDARD.decode(s).map_err(|e| SwitcherError::InvalidModel(format!("{what}: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(SwitcherError::InvalidModel(format!("{what}: {} bytes, expected {}", bytes.len(), expected * 4)));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

impl From<&SwitcherModel> for ModelDoc {
    fn from(m: &SwitcherModel) -> Self {
        let slices = m.mil.as_ref().map(|h| (h, h.slices()));
        ModelDoc {
            version: MODEL_FORMAT_VERSION,
            ds_id: m.ds_id,
            members: m.members.clone(),
            method: m.method,
            class_ids: m.class_ids.clone(),
            calibration: m.calibration,
            dim: m.prototypes.first().map_or(0, Vec::len),
            prototypes: m.prototypes.iter().map(|p| encode(p)).collect(),
            mil: slices.map(|(h, s)| MilDoc {
                dim: h.dim(),
                hidden: h.hidden(),
                classes: h.classes(),
                w1: encode(s[0]),
                b1: encode(s[1]),
                w2: encode(s[2]),
                wc: encode(s[3]),
                bc: encode(s[4]),
            }),
            anomaly_threshold: m.anomaly_threshold,
            trained_on: m.trained_on.clone(),
            train_samples: m.train_samples,
            train_accuracy: m.train_accuracy,
        }
    }
}

impl TryFrom<ModelDoc> for SwitcherModel {
    type Error = SwitcherError;

    fn try_from(d: ModelDoc) -> Result<Self, SwitcherError> {
        if d.version != MODEL_FORMAT_VERSION {
            return Err(SwitcherError::InvalidModel(format!("unsupported model version {}", d.version)));
        }
        if d.prototypes.len() != d.class_ids.len() {
            return Err(SwitcherError::InvalidModel(format!(
                "{} prototypes for {} classes",
                d.prototypes.len(),
                d.class_ids.len()
            )));
        }
        let prototypes = d.prototypes.iter().map(|p| decode(p, d.dim, "prototype")).collect::<Result<Vec<_>, _>>()?;
        let mil = match d.mil {
            None => None,
            Some(h) => {
                let w1 = decode(&h.w1, h.hidden * h.dim, "w1")?;
                let wc = decode(&h.wc, h.classes * h.dim, "wc")?;
                Some(MilParams {
                    w1: Array2::from_shape_vec((h.hidden, h.dim), w1).expect("length checked"),
                    b1: Array1::from(decode(&h.b1, h.hidden, "b1")?),
                    w2: Array1::from(decode(&h.w2, h.hidden, "w2")?),
                    wc: Array2::from_shape_vec((h.classes, h.dim), wc).expect("length checked"),
                    bc: Array1::from(decode(&h.bc, h.classes, "bc")?),
                })
            }
        };
        if d.method == Method::Mil && mil.is_none() {
            return Err(SwitcherError::InvalidModel("MIL model without head".into()));
        }
        Ok(SwitcherModel {
            ds_id: d.ds_id,
            members: d.members,
            method: d.method,
            class_ids: d.class_ids,
            calibration: d.calibration,
            prototypes,
            mil,
            anomaly_threshold: d.anomaly_threshold,
            trained_on: d.trained_on,
            train_samples: d.train_samples,
            train_accuracy: d.train_accuracy,
        })
    }
}
