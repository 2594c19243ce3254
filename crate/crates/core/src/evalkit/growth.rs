use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::datasets::{synthetic_ds, DsDataset, FrameSource, SyntheticDsSpec};
use super::metrics::{evaluate_ds, EvalConfig};
use super::EvalError;
use crate::embeddings::{EncoderConfig, FrameStore, SceneState, SyntheticEncoder};
use crate::graph::PartId;
use crate::switcher::Method;

/// The eight variations of three binary visible factors. Variation `i` sets
/// the peg from bit 0, the door from bit 1 and the cable from bit 2, so the
/// first two differ only in the peg.
pub fn growth_variants() -> Vec<SceneState> {
    (0..8u32)
        .map(|i| {
            let peg = if i & 1 == 0 { "A" } else { "B" };
            let door = if i & 2 == 0 { "closed" } else { "open" };
            let cable = if i & 4 == 0 { "left" } else { "right" };
            SceneState::taskboard(&[("peg", peg), ("door", door), ("cable", cable)], 0).expect("valid factors")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct LabelGrowthConfig {
    pub min_classes: usize,
    pub max_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub methods: Vec<Method>,
    pub encoder: EncoderConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for LabelGrowthConfig {
    fn default() -> Self {
        Self {
            min_classes: 2,
            max_classes: 8,
            train_per_class: 5,
            test_per_class: 5,
            methods: vec![Method::PrototypeMean, Method::PrototypeConcat, Method::AttnGated],
            encoder: EncoderConfig::default(),
            eval: EvalConfig::default(),
            seed: 0x6C61_6265,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GrowthPoint {
    pub classes: usize,
    pub method: Method,
    /// Fraction of held-out executions decided correctly.
    pub decision_accuracy: f64,
    pub frame_accuracy: f64,
    pub train_accuracy: Option<f64>,
    pub seconds: f64,
}

fn restrict(dataset: &DsDataset, classes: usize) -> DsDataset {
    let keep = |p: &PartId| (p.0 as usize) <= classes;
    let mut out = dataset.clone();
    out.classes.retain(keep);
    out.samples.retain(|s| keep(&s.label));
    out.scenes.retain(|r, _| dataset.samples.iter().any(|s| s.rollout == *r && keep(&s.label)));
    out
}

/// Accuracy against the number of competing classes. All variations are
/// rendered once; class count `c` uses the first `c` of them.
pub fn label_growth(config: &LabelGrowthConfig) -> Result<Vec<GrowthPoint>, EvalError> {
    let variants = growth_variants();
    if config.min_classes < 2 || config.max_classes > variants.len() || config.min_classes > config.max_classes {
        return Err(EvalError::InvalidConfig(format!(
            "class counts {}..={} outside 2..={}",
            config.min_classes,
            config.max_classes,
            variants.len()
        )));
    }
    let encoder = SyntheticEncoder::new(config.encoder);
    let mut spec = SyntheticDsSpec::new(variants[..config.max_classes].to_vec(), config.seed);
    spec.train_per_class = config.train_per_class;
    spec.test_per_class = config.test_per_class;
    let mut store = FrameStore::new();
    let full = synthetic_ds(&spec, &encoder, &mut store);
    let mut out = Vec::new();
    for c in config.min_classes..=config.max_classes {
        let dataset = restrict(&full, c);
        for &method in &config.methods {
            let mut eval = config.eval.clone();
            eval.switcher.method = method;
            let started = Instant::now();
            let r = evaluate_ds(&dataset, FrameSource::Store(&store), &eval)?;
            out.push(GrowthPoint {
                classes: c,
                method,
                decision_accuracy: r.decision_accuracy.unwrap_or(0.0),
                frame_accuracy: r.accuracy.unwrap_or(0.0),
                train_accuracy: r.train_accuracy,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(out)
}

pub fn growth_csv(points: &[GrowthPoint]) -> String {
    let mut out = String::from("classes,method,decision_accuracy,frame_accuracy,train_accuracy,seconds\n");
    for p in points {
        let train = p.train_accuracy.map_or_else(String::new, |v| format!("{v:.6}"));
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{},{:.6}",
            p.classes, p.method, p.decision_accuracy, p.frame_accuracy, train, p.seconds
        );
    }
    out
}
