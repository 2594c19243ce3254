use super::{Labeled, SwitcherError, SwitcherModel};
use crate::embeddings::{cosine, Observation};

/// Linear-interpolation quantile: with the scores sorted ascending, level `q`
/// sits at fractional rank `q * (n - 1)`.
pub fn quantile(scores: &[f64], q: f64) -> Option<f64> {
    if scores.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Highest cosine similarity between `features` and any prototype.
pub fn max_similarity(features: &[f64], prototypes: &[Vec<f64>]) -> Result<f64, SwitcherError> {
    let mut best = f64::NEG_INFINITY;
    for p in prototypes {
        best = best.max(cosine(features, p)?);
    }
    Ok(best)
}

/// Anomaly threshold from the model's own training frames: the
/// `percentile_keep` quantile of their best prototype similarity. With
/// leave-one-out each frame is scored against a prototype of its class
/// computed without it.
pub fn calibrate_anomaly(model: &SwitcherModel, samples: &[Labeled<'_>]) -> Result<f64, SwitcherError> {
    if samples.is_empty() {
        return Err(SwitcherError::EmptyTrainingSet);
    }
    let features =
        samples.iter().map(|s| Ok((s.label, model.features(s.obs)?))).collect::<Result<Vec<_>, SwitcherError>>()?;
    let scores = if model.calibration.leave_one_out {
        let sums: Vec<(Vec<f64>, usize)> = model
            .class_ids
            .iter()
            .map(|&c| {
                let mut sum = vec![0.0; model.prototypes[0].len()];
                let mut n = 0;
                for (_, f) in features.iter().filter(|(l, _)| *l == c) {
                    sum.iter_mut().zip(f).for_each(|(a, b)| *a += b);
                    n += 1;
                }
                (sum, n)
            })
            .collect();
        features
            .iter()
            .map(|(label, f)| {
                let own = model.class_ids.iter().position(|c| c == label).ok_or(SwitcherError::UnknownLabel(*label))?;
                let (sum, n) = &sums[own];
                let mut best = f64::NEG_INFINITY;
                for (i, p) in model.prototypes.iter().enumerate() {
                    if i != own {
                        best = best.max(cosine(f, p)?);
                    }
                }
                if *n > 1 {
                    let held_out: Vec<f64> = sum.iter().zip(f).map(|(s, v)| (s - v) / (*n - 1) as f64).collect();
                    best = best.max(cosine(f, &held_out)?);
                } else if model.prototypes.len() == 1 {
                    best = best.max(cosine(f, &model.prototypes[own])?);
                }
                Ok(best)
            })
            .collect::<Result<Vec<_>, SwitcherError>>()?
    } else {
        features.iter().map(|(_, f)| max_similarity(f, &model.prototypes)).collect::<Result<Vec<_>, _>>()?
    };
    quantile(&scores, model.calibration.percentile_keep)
        .ok_or_else(|| SwitcherError::InvalidModel(format!("bad percentile {}", model.calibration.percentile_keep)))
}

/// `(is_anomalous, score)` for one frame against a calibrated model.
pub fn anomaly_check(model: &SwitcherModel, obs: &Observation) -> Result<(bool, f64), SwitcherError> {
    let threshold = model
        .anomaly_threshold
        .ok_or_else(|| SwitcherError::ModelNotReady(format!("{} has no anomaly threshold", model.ds_id)))?;
    let score = max_similarity(&model.features(obs)?, &model.prototypes)?;
    Ok((score < threshold, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tenth_percentile_of_eleven_points() {
        let s: Vec<f64> = (0..=10).rev().map(|i| i as f64 / 10.0).collect();
        assert!((quantile(&s, 0.1).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(quantile(&s, 0.0), Some(0.0));
        assert_eq!(quantile(&s, 1.0), Some(1.0));
        assert!((quantile(&[1.0, 2.0], 0.25).unwrap() - 1.25).abs() < 1e-12);
        assert_eq!(quantile(&[], 0.5), None);
    }

    proptest! {
        #[test]
        fn quantile_matches_counting_oracle(scores in proptest::collection::vec(-1.0f64..1.0, 1..40), q in 0.0f64..=1.0) {
            let t = quantile(&scores, q).unwrap();
            // at least ceil(q (n-1)) values lie strictly at or below t, and t is within the observed range
            let n = scores.len();
            let at_or_below = scores.iter().filter(|&&s| s <= t + 1e-12).count();
            prop_assert!(at_or_below as f64 >= (q * (n - 1) as f64).floor() + 1.0);
            let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(t >= min - 1e-12 && t <= max + 1e-12);
            // monotone in the level
            let t2 = quantile(&scores, (q + 0.1).min(1.0)).unwrap();
            prop_assert!(t2 >= t - 1e-12);
        }
    }
}
