use super::gating::{gate_patches, gated_pool};
use super::{Calibration, ClassScores, Labeled, Method, SwitcherError, SwitcherModel};
use crate::embeddings::{pool, Observation, PoolMode};
use crate::graph::PartId;

/// Feature vector of one observation for the prototype methods.
pub fn representation(obs: &Observation, method: Method, calibration: &Calibration) -> Result<Vec<f64>, SwitcherError> {
    match method {
        Method::PrototypeMean => Ok(pool(obs, PoolMode::Mean)),
        Method::PrototypeConcat => Ok(pool(obs, PoolMode::Concat)),
        Method::AttnGated => {
            let gated = gate_patches(obs, calibration.gating, calibration.head_reduce, calibration.attn_keep)?;
            Ok(gated_pool(obs, calibration.gating, &gated))
        }
        Method::Mil => Err(SwitcherError::Shape("MIL features depend on a trained head".into())),
    }
}

pub(crate) fn check_samples(samples: &[Labeled<'_>], classes: &[PartId]) -> Result<(), SwitcherError> {
    let first = samples.first().ok_or(SwitcherError::EmptyTrainingSet)?;
    for s in samples {
        if !classes.contains(&s.label) {
            return Err(SwitcherError::UnknownLabel(s.label));
        }
        if !s.obs.same_shape(first.obs) {
            return Err(SwitcherError::Shape(format!(
                "sample {}x{} differs from {}x{}",
                s.obs.patches(),
                s.obs.dim(),
                first.obs.patches(),
                first.obs.dim()
            )));
        }
    }
    for &c in classes {
        if !samples.iter().any(|s| s.label == c) {
            return Err(SwitcherError::InsufficientData(c));
        }
    }
    Ok(())
}

/// Per-class mean of already computed feature vectors, in `classes` order.
pub fn class_means(features: &[(PartId, Vec<f64>)], classes: &[PartId]) -> Result<Vec<Vec<f64>>, SwitcherError> {
    classes
        .iter()
        .map(|&c| {
            let members: Vec<&Vec<f64>> = features.iter().filter(|(l, _)| *l == c).map(|(_, f)| f).collect();
            let first = members.first().ok_or(SwitcherError::InsufficientData(c))?;
            let mut mean = vec![0.0; first.len()];
            for f in &members {
                for (m, v) in mean.iter_mut().zip(f.iter()) {
                    *m += v;
                }
            }
            let n = members.len() as f64;
            Ok(mean.into_iter().map(|m| round_f32(m / n)).collect())
        })
        .collect()
}

/// Values are kept at single precision so that stored models reload exactly.
pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Fits one prototype per class.
pub fn fit_prototypes(
    samples: &[Labeled<'_>],
    classes: &[PartId],
    method: Method,
    calibration: &Calibration,
) -> Result<Vec<Vec<f64>>, SwitcherError> {
    check_samples(samples, classes)?;
    let features = samples
        .iter()
        .map(|s| Ok((s.label, representation(s.obs, method, calibration)?)))
        .collect::<Result<Vec<_>, SwitcherError>>()?;
    class_means(&features, classes)
}

pub fn classify(model: &SwitcherModel, obs: &Observation) -> Result<ClassScores, SwitcherError> {
    classify_among(model, obs, |_| true)
}

/// Scores every class and picks the best one among those `allowed` accepts.
/// Falls back to all classes when none is allowed.
pub fn classify_among(
    model: &SwitcherModel,
    obs: &Observation,
    allowed: impl Fn(PartId) -> bool,
) -> Result<ClassScores, SwitcherError> {
    let scores = model.class_scores(obs)?;
    let pick = |filter: &dyn Fn(PartId) -> bool| {
        scores.iter().filter(|(c, _)| filter(*c)).fold(None, |best: Option<(PartId, f64)>, &(c, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((c, s)),
        })
    };
    let best = pick(&allowed).or_else(|| pick(&|_| true)).expect("models have classes").0;
    Ok(ClassScores { scores, best })
}
