use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::datasets::{executed_parts, DsDataset, FrameSource, LabeledSample, Split};
use super::EvalError;
use crate::executor::{latch_update, LatchDecision, Rollout, Tally};
use crate::graph::{DsId, PartId};
use crate::switcher::{anomaly_check, classify, train_model, Labeled, Method, Prediction, SwitcherConfig};

/// True when the rollout executed exactly the expected part sequence.
pub fn decision_success(rollout: &Rollout, expected: &[PartId]) -> bool {
    executed_parts(rollout) == expected
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EvalConfig {
    pub switcher: SwitcherConfig,
    /// Votes needed to commit when deciding a whole test execution.
    pub latch_frames: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { switcher: SwitcherConfig::default(), latch_frames: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DsResult {
    pub ds: DsId,
    pub method: Method,
    pub classes: usize,
    pub train_frames: usize,
    pub test_frames: usize,
    /// Frame-level test accuracy.
    pub accuracy: Option<f64>,
    /// Fraction of test executions whose latched decision is correct.
    pub decision_accuracy: Option<f64>,
    pub train_accuracy: Option<f64>,
    /// Accuracy of in-distribution vs unfamiliar flags with a model trained
    /// on the root class alone.
    pub anomaly_accuracy: Option<f64>,
    pub insufficient_observability: bool,
    pub train_seconds: f64,
}

fn labeled<'a>(samples: &[&LabeledSample], frames: &FrameSource<'a>) -> Result<Vec<Labeled<'a>>, EvalError> {
    samples.iter().map(|s| Ok(Labeled { label: s.label, obs: frames.get(s.rollout, &s.key)? })).collect()
}

/// Decision for one execution: the latched commit, or the plurality of the
/// frame votes (lowest part id on ties) when nothing commits.
pub fn decide(predictions: &[PartId], m: u32) -> Option<PartId> {
    let mut tally = Tally { cluster: Some(DsId(0)), ..Tally::default() };
    for &p in predictions {
        let pred = Prediction {
            part: p,
            anomalous: false,
            anomaly_score: 1.0,
            threshold: 0.0,
            scores: vec![],
            cluster: Some(DsId(0)),
        };
        if let LatchDecision::Commit(j) = latch_update(&mut tally, &pred, m) {
            return Some(j);
        }
    }
    let mut counts: BTreeMap<PartId, usize> = BTreeMap::new();
    predictions.iter().for_each(|p| *counts.entry(*p).or_default() += 1);
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|(_, c)| *c == best).map(|(p, _)| p)
}

/// Trains `config.switcher.method` on the training frames of one window and
/// scores the test frames.
pub fn evaluate_ds(dataset: &DsDataset, frames: FrameSource<'_>, config: &EvalConfig) -> Result<DsResult, EvalError> {
    let train: Vec<&LabeledSample> = dataset.train().collect();
    let test: Vec<&LabeledSample> = dataset.test().collect();
    let mut result = DsResult {
        ds: dataset.ds,
        method: config.switcher.method,
        classes: dataset.classes.len(),
        train_frames: train.len(),
        test_frames: test.len(),
        accuracy: None,
        decision_accuracy: None,
        train_accuracy: None,
        anomaly_accuracy: None,
        insufficient_observability: dataset.insufficient_observability,
        train_seconds: 0.0,
    };
    let train_classes: Vec<PartId> =
        dataset.classes.iter().copied().filter(|c| train.iter().any(|s| s.label == *c)).collect();
    if train.is_empty() || train_classes.is_empty() {
        return Ok(result);
    }
    let started = Instant::now();
    let model =
        train_model(&labeled(&train, &frames)?, &train_classes, dataset.ds, vec![dataset.ds], &config.switcher)?;
    result.train_seconds = started.elapsed().as_secs_f64();
    result.train_accuracy = model.train_accuracy;

    if !test.is_empty() {
        let mut per_execution: BTreeMap<usize, (PartId, Vec<(u32, PartId)>)> = BTreeMap::new();
        let mut correct = 0;
        for s in &test {
            let best = classify(&model, frames.get(s.rollout, &s.key)?)?.best;
            correct += usize::from(best == s.label);
            per_execution.entry(s.rollout).or_insert_with(|| (s.label, Vec::new())).1.push((s.tau, best));
        }
        result.accuracy = Some(correct as f64 / test.len() as f64);
        let mut decided = 0;
        for (label, preds) in per_execution.values_mut() {
            preds.sort_by_key(|(t, _)| *t);
            let seq: Vec<PartId> = preds.iter().map(|(_, p)| *p).collect();
            decided += usize::from(decide(&seq, config.latch_frames) == Some(*label));
        }
        result.decision_accuracy = Some(decided as f64 / per_execution.len() as f64);
    }

    let root_train: Vec<&LabeledSample> = train.iter().copied().filter(|s| s.label == dataset.root).collect();
    let anomaly_test: Vec<&LabeledSample> = dataset.samples.iter().filter(|s| s.split == Split::Test).collect();
    if !root_train.is_empty() && !anomaly_test.is_empty() {
        let detector = train_model(
            &labeled(&root_train, &frames)?,
            &[dataset.root],
            dataset.ds,
            vec![dataset.ds],
            &config.switcher,
        )?;
        let mut right = 0;
        for s in &anomaly_test {
            let (flag, _) = anomaly_check(&detector, frames.get(s.rollout, &s.key)?)?;
            right += usize::from(flag == (s.label != dataset.root));
        }
        result.anomaly_accuracy = Some(right as f64 / anomaly_test.len() as f64);
    }
    Ok(result)
}
