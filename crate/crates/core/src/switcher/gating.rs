use super::{Gating, HeadReduce, SwitcherError};
use crate::embeddings::Observation;

/// Patch weights after attention gating. `kept` lists the patches with
/// non-zero weight in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedPatches {
    pub kept: Vec<usize>,
    pub weights: Vec<f64>,
}

fn saliency(obs: &Observation, reduce: HeadReduce) -> Result<Vec<f64>, SwitcherError> {
    if obs.attention().is_none() {
        return Err(SwitcherError::AttentionRequired);
    }
    let mut s = vec![
        match reduce {
            HeadReduce::Mean => 0.0,
            HeadReduce::Max => f64::NEG_INFINITY,
        };
        obs.patches()
    ];
    for h in 0..obs.heads() {
        let row = obs.attention_row(h).expect("attention checked above");
        for (acc, &a) in s.iter_mut().zip(row) {
            match reduce {
                HeadReduce::Mean => *acc += a as f64,
                HeadReduce::Max => *acc = acc.max(a as f64),
            }
        }
    }
    if reduce == HeadReduce::Mean {
        let n = obs.heads() as f64;
        s.iter_mut().for_each(|v| *v /= n);
    }
    Ok(s)
}

/// Number of patches hard gating keeps for a keep fraction.
pub(crate) fn kept_count(keep: f64, patches: usize) -> usize {
    // the small slack keeps products like 0.2 * 10 from rounding up to 3
    let n = (keep * patches as f64 - 1e-9).ceil() as usize;
    n.clamp(1, patches)
}

/// Reduces attention over heads to a per-patch saliency and gates on it.
/// Hard gating keeps the top `ceil(keep * patches)` patches (ties go to the
/// lower index) with uniform weight; soft gating weights every patch by its
/// normalised saliency.
pub fn gate_patches(
    obs: &Observation,
    gating: Gating,
    reduce: HeadReduce,
    keep: f64,
) -> Result<GatedPatches, SwitcherError> {
    let s = saliency(obs, reduce)?;
    let k = obs.patches();
    match gating {
        Gating::Hard => {
            let n = kept_count(keep, k);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            let mut kept = order[..n].to_vec();
            kept.sort_unstable();
            let mut weights = vec![0.0; k];
            for &i in &kept {
                weights[i] = 1.0 / n as f64;
            }
            Ok(GatedPatches { kept, weights })
        }
        Gating::Soft => {
            let total: f64 = s.iter().sum();
            let weights: Vec<f64> =
                if total > 0.0 { s.iter().map(|v| v / total).collect() } else { vec![1.0 / k as f64; k] };
            let kept = (0..k).filter(|&i| weights[i] > 0.0).collect();
            Ok(GatedPatches { kept, weights })
        }
    }
}

/// Pooled representation of the gated patches. Hard gating averages the kept
/// patches the same way mean pooling averages all of them.
pub(crate) fn gated_pool(obs: &Observation, gating: Gating, gated: &GatedPatches) -> Vec<f64> {
    match gating {
        Gating::Soft => crate::embeddings::weighted_pool(obs, &gated.weights),
        Gating::Hard => {
            let mut out = vec![0.0; obs.dim()];
            for &k in &gated.kept {
                for (o, &v) in out.iter_mut().zip(obs.patch(k)) {
                    *o += v as f64;
                }
            }
            let n = gated.kept.len() as f64;
            out.iter_mut().for_each(|o| *o /= n);
            out
        }
    }
}
