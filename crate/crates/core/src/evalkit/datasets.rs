use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::embeddings::{EmbeddingError, FrameStore, Observation, SceneState, SyntheticEncoder};
use crate::executor::Rollout;
use crate::geometry::{lerp3, Pose};
use crate::graph::{DsId, FrameKey, PartId, TaskGraph, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyLabel {
    InDistribution,
    Ood,
}

/// How rollouts of one variant are divided between training and testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// The first ⌈R/2⌉ rollouts of each variant train, the rest test.
    #[default]
    Default,
    /// Training and test rollouts exchanged.
    Swapped,
}

impl SplitMode {
    pub fn split(self, position: usize, count: usize) -> Split {
        let train = position < count.div_ceil(2);
        match (self, train) {
            (SplitMode::Default, true) | (SplitMode::Swapped, false) => Split::Train,
            _ => Split::Test,
        }
    }
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Self::Default),
            "swapped" | "swap" => Ok(Self::Swapped),
            other => Err(format!("unknown split mode {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabeledSample {
    pub key: FrameKey,
    /// Rollout (or synthetic execution) the frame came from.
    pub rollout: usize,
    pub tau: u32,
    pub label: PartId,
    pub split: Split,
    pub camera: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnomalySample {
    pub key: FrameKey,
    pub rollout: usize,
    pub ds: Option<DsId>,
    pub label: AnomalyLabel,
    pub split: Split,
}

/// Frames of one decision window, labeled by the successor each rollout took.
#[derive(Debug, Clone, PartialEq)]
pub struct DsDataset {
    pub ds: DsId,
    pub root: PartId,
    pub window: Window,
    pub classes: Vec<PartId>,
    pub samples: Vec<LabeledSample>,
    /// Scene of each rollout index that contributed samples.
    pub scenes: BTreeMap<usize, SceneState>,
    /// Set when the deciding factor is out of view for most test frames.
    pub insufficient_observability: bool,
}

impl DsDataset {
    pub fn train(&self) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter().filter(|s| s.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter().filter(|s| s.split == Split::Test)
    }

    pub fn anomaly_samples(&self) -> Vec<AnomalySample> {
        self.samples
            .iter()
            .map(|s| AnomalySample {
                key: s.key,
                rollout: s.rollout,
                ds: Some(self.ds),
                label: if s.label == self.root { AnomalyLabel::InDistribution } else { AnomalyLabel::Ood },
                split: s.split,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Datasets {
    pub classification: Vec<DsDataset>,
    pub anomaly: Vec<AnomalySample>,
}

/// Where sample frames live: in the rollouts they were recorded in, or in
/// one store with globally unique keys.
#[derive(Debug, Clone, Copy)]
pub enum FrameSource<'a> {
    Rollouts(&'a [Rollout]),
    Store(&'a FrameStore),
}

impl<'a> FrameSource<'a> {
    pub fn get(&self, rollout: usize, key: &FrameKey) -> Result<&'a Observation, EmbeddingError> {
        match self {
            FrameSource::Rollouts(r) => r.get(rollout).ok_or(EmbeddingError::MissingFrame(*key))?.frames.get(key),
            FrameSource::Store(s) => s.get(key),
        }
    }
}

/// Parts active during a rollout, in order, without repeats.
pub fn executed_parts(rollout: &Rollout) -> Vec<PartId> {
    let mut out: Vec<PartId> = Vec::new();
    for t in &rollout.ticks {
        if out.last() != Some(&t.part) {
            out.push(t.part);
        }
    }
    out
}

/// Recorded frame of each task time (the last one when several ticks share it).
fn recorded_frames(rollout: &Rollout) -> BTreeMap<u32, (FrameKey, Pose)> {
    let mut out = BTreeMap::new();
    for t in &rollout.ticks {
        if rollout.frames.contains(&t.frame_key) {
            out.insert(t.tau, (t.frame_key, t.pose));
        }
    }
    out
}

/// Builds per-decision-state classification sets and the anomaly set. Each
/// rollout is labeled at a decision state by the permitted successor it
/// executed; rollouts that never reached the state are skipped. Rollouts are
/// split per label in input order, never by frame.
pub fn build_datasets(rollouts: &[Rollout], graph: &TaskGraph, mode: SplitMode) -> Result<Datasets, EvalError> {
    let parts: Vec<Vec<PartId>> = rollouts.iter().map(executed_parts).collect();
    for (r, seq) in parts.iter().enumerate() {
        if let Some(p) = seq.iter().find(|p| !graph.parts.contains_key(p)) {
            return Err(EvalError::Integrity(format!("rollout {r} references unknown part {p}")));
        }
    }
    let frames: Vec<_> = rollouts.iter().map(recorded_frames).collect();
    let mut out = Datasets::default();

    if graph.decision_states.is_empty() {
        for (r, f) in frames.iter().enumerate() {
            // a single part: everything seen so far is the known context
            let seq_len = f.len();
            for (i, (key, _)) in f.values().enumerate() {
                out.anomaly.push(AnomalySample {
                    key: *key,
                    rollout: r,
                    ds: None,
                    label: AnomalyLabel::InDistribution,
                    split: mode.split(i, seq_len),
                });
            }
        }
        return Ok(out);
    }

    for ds in &graph.decision_states {
        let labels: Vec<Option<PartId>> = parts
            .iter()
            .map(|seq| {
                let touched: Vec<PartId> = seq.iter().copied().filter(|p| ds.permitted.contains(p)).collect();
                touched.iter().copied().find(|p| *p != ds.root_part).or_else(|| touched.first().copied())
            })
            .collect();
        let mut per_label: BTreeMap<PartId, Vec<usize>> = BTreeMap::new();
        for (r, l) in labels.iter().enumerate() {
            if let Some(l) = l {
                per_label.entry(*l).or_default().push(r);
            }
        }
        let mut samples = Vec::new();
        let mut scenes = BTreeMap::new();
        for (label, rs) in &per_label {
            for (pos, &r) in rs.iter().enumerate() {
                let split = mode.split(pos, rs.len());
                for (&tau, &(key, camera)) in frames[r].range(ds.window.start..=ds.window.end) {
                    samples.push(LabeledSample { key, rollout: r, tau, label: *label, split, camera });
                }
                scenes.insert(r, rollouts[r].scene.clone());
            }
        }
        samples.sort_by_key(|s| (s.rollout, s.tau));
        let classes = ds.permitted.iter().copied().filter(|p| per_label.contains_key(p)).collect();
        let dataset = DsDataset {
            ds: ds.id,
            root: ds.root_part,
            window: ds.window,
            classes,
            samples,
            scenes,
            insufficient_observability: false,
        };
        out.anomaly.extend(dataset.anomaly_samples());
        out.classification.push(dataset);
    }
    Ok(out)
}

/// Scene object whose appearance carries a factor.
pub fn factor_object(factor: &str) -> &str {
    match factor {
        "cable" => "cable_end",
        other => other,
    }
}

/// Factors whose values differ between scenes of different classes.
pub fn deciding_factors(dataset: &DsDataset) -> Vec<String> {
    let mut by_class: BTreeMap<PartId, BTreeSet<usize>> = BTreeMap::new();
    for s in &dataset.samples {
        by_class.entry(s.label).or_default().insert(s.rollout);
    }
    let mut names: BTreeSet<String> = BTreeSet::new();
    for scene in dataset.scenes.values() {
        names.extend(scene.factors.keys().cloned());
    }
    names
        .into_iter()
        .filter(|name| {
            let values: Vec<BTreeSet<Option<&str>>> = by_class
                .values()
                .map(|rs| rs.iter().map(|r| dataset.scenes.get(r).and_then(|s| s.factor(name))).collect())
                .collect();
            values.iter().any(|a| values.iter().any(|b| a.is_disjoint(b)))
        })
        .collect()
}

/// Tags the dataset when, for most test frames (all frames without a test
/// split), no deciding object would be in view in any of the dataset's
/// scenes. Returns the observable fraction.
pub fn tag_observability(dataset: &mut DsDataset, encoder: &SyntheticEncoder) -> f64 {
    let factors = deciding_factors(dataset);
    let test: Vec<&LabeledSample> = dataset.test().collect();
    let pool: Vec<&LabeledSample> = if test.is_empty() { dataset.samples.iter().collect() } else { test };
    if pool.is_empty() || factors.is_empty() {
        return 1.0;
    }
    let visible = pool
        .iter()
        .filter(|s| {
            factors.iter().any(|f| {
                let object = factor_object(f);
                dataset.scenes.values().any(|scene| encoder.sees(scene, &s.camera, object))
            })
        })
        .count();
    let fraction = visible as f64 / pool.len() as f64;
    dataset.insufficient_observability = fraction < 0.5;
    fraction
}

/// Synthetic decision window: every execution follows the same camera path
/// (with small per-frame jitter) through one scene variant per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SyntheticDsSpec {
    /// One scene per class; class `i` is labeled `PartId(i + 1)`.
    pub variants: Vec<SceneState>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Frames per execution (the window length plus one).
    pub frames: usize,
    pub path_start: [f64; 3],
    pub path_end: [f64; 3],
    /// Uniform camera jitter per axis, meters.
    pub jitter: f64,
    pub seed: u64,
}

impl SyntheticDsSpec {
    pub fn new(variants: Vec<SceneState>, seed: u64) -> Self {
        Self {
            variants,
            train_per_class: 5,
            test_per_class: 5,
            frames: 11,
            path_start: [0.02, 0.04, 0.42],
            path_end: [0.04, 0.04, 0.38],
            jitter: 0.004,
            seed,
        }
    }
}

/// Renders the executions of a synthetic window into `store` and returns the
/// dataset. Keys are `(class, execution, frame)` and unique within the store.
pub fn synthetic_ds(spec: &SyntheticDsSpec, encoder: &SyntheticEncoder, store: &mut FrameStore) -> DsDataset {
    let mut samples = Vec::new();
    let mut scenes = BTreeMap::new();
    let per_class = spec.train_per_class + spec.test_per_class;
    let mut rollout = 0;
    for (c, variant) in spec.variants.iter().enumerate() {
        let label = PartId(c as u32 + 1);
        for e in 0..per_class {
            let split = if e < spec.train_per_class { Split::Train } else { Split::Test };
            let seed = spec.seed ^ ((c as u64) << 32 | e as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = variant.with_seed(seed);
            for k in 0..spec.frames {
                let s = if spec.frames > 1 { k as f64 / (spec.frames - 1) as f64 } else { 0.0 };
                let mut p = lerp3(&spec.path_start, &spec.path_end, s);
                if spec.jitter > 0.0 {
                    p.iter_mut().for_each(|v| *v += rng.random_range(-spec.jitter..spec.jitter));
                }
                let camera = Pose::looking_down(p);
                let key = FrameKey::new(label, e as u32, k as u32);
                store.insert(key, encoder.encode_scene(&scene, &camera));
                samples.push(LabeledSample { key, rollout, tau: k as u32, label, split, camera });
            }
            scenes.insert(rollout, scene);
            rollout += 1;
        }
    }
    DsDataset {
        ds: DsId(0),
        root: PartId(1),
        window: Window::from_length(0, spec.frames.saturating_sub(1) as u32),
        classes: (0..spec.variants.len()).map(|c| PartId(c as u32 + 1)).collect(),
        samples,
        scenes,
        insufficient_observability: false,
    }
}
