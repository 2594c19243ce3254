//! Attention-based multiple-instance classifier over the patch bag.
//!
//! e_k = w2 · tanh(W1 x_k + b1), a = softmax(e), bag = Σ a_k x_k,
//! p = softmax(Wc bag + bc).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prototype::{check_samples, round_f32};
use super::{Labeled, SwitcherError};
use crate::embeddings::Observation;
use crate::graph::PartId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MilConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MilConfig {
    fn default() -> Self {
        Self { hidden: 128, dropout: 0.1, learning_rate: 7e-5, weight_decay: 1e-3, epochs: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilParams {
    /// hidden × dim
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    /// classes × dim
    pub wc: Array2<f64>,
    pub bc: Array1<f64>,
}

pub type MilGradients = MilParams;

impl MilParams {
    /// Uniform fan-in initialisation.
    pub fn init(dim: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (dim as f64).sqrt();
        let b = 1.0 / (hidden as f64).sqrt();
        let mut u = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-s..s)).collect() };
        Self {
            w1: Array2::from_shape_vec((hidden, dim), u(hidden * dim, a)).expect("shape"),
            b1: Array1::from(u(hidden, a)),
            w2: Array1::from(u(hidden, b)),
            wc: Array2::from_shape_vec((classes, dim), u(classes * dim, a)).expect("shape"),
            bc: Array1::from(u(classes, a)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array1::zeros(self.w2.raw_dim()),
            wc: Array2::zeros(self.wc.raw_dim()),
            bc: Array1::zeros(self.bc.raw_dim()),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn classes(&self) -> usize {
        self.wc.nrows()
    }

    /// Parameter blocks in order w1, b1, w2, wc, bc.
    pub fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.wc.as_slice_mut().expect("standard layout"),
            self.bc.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn slices(&self) -> [&[f64]; 5] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.wc.as_slice().expect("standard layout"),
            self.bc.as_slice().expect("standard layout"),
        ]
    }

    fn round_f32(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = round_f32(*v));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilForward {
    pub attention: Vec<f64>,
    pub bag: Vec<f64>,
    pub probs: Vec<f64>,
}

fn softmax(v: &Array1<f64>) -> Array1<f64> {
    let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = v.mapv(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

pub(crate) fn patch_matrix(obs: &Observation) -> Array2<f64> {
    Array2::from_shape_vec((obs.patches(), obs.dim()), obs.embeddings().iter().map(|&v| v as f64).collect())
        .expect("observation shape")
}

pub fn mil_forward(params: &MilParams, obs: &Observation) -> Result<MilForward, SwitcherError> {
    if obs.dim() != params.dim() {
        return Err(SwitcherError::Shape(format!("observation dim {} vs head dim {}", obs.dim(), params.dim())));
    }
    let x = patch_matrix(obs);
    let (_, fwd) = forward_impl(params, x.view(), None);
    Ok(fwd)
}

/// Cross-entropy loss of one bag against class index `label`, and its
/// gradient with respect to every parameter (no dropout).
pub fn mil_loss_and_grad(
    params: &MilParams,
    obs: &Observation,
    label: usize,
) -> Result<(f64, MilGradients), SwitcherError> {
    if obs.dim() != params.dim() || label >= params.classes() {
        return Err(SwitcherError::Shape(format!(
            "bag dim {} label {label} vs head {}x{}",
            obs.dim(),
            params.dim(),
            params.classes()
        )));
    }
    Ok(loss_and_grad(params, patch_matrix(obs).view(), label, None))
}

struct Cache {
    h: Array2<f64>,
    hd: Array2<f64>,
    a: Array1<f64>,
    bag: Array1<f64>,
    probs: Array1<f64>,
}

fn forward_impl(p: &MilParams, x: ArrayView2<f64>, mask: Option<&Array2<f64>>) -> (Cache, MilForward) {
    let h = (x.dot(&p.w1.t()) + &p.b1).mapv(f64::tanh);
    let hd = match mask {
        Some(m) => &h * m,
        None => h.clone(),
    };
    let e = hd.dot(&p.w2);
    let a = softmax(&e);
    let bag = a.dot(&x);
    let probs = softmax(&(p.wc.dot(&bag) + &p.bc));
    let fwd = MilForward { attention: a.to_vec(), bag: bag.to_vec(), probs: probs.to_vec() };
    (Cache { h, hd, a, bag, probs }, fwd)
}

/// Cross-entropy loss of one bag and its gradient. `mask` is the (already
/// scaled) dropout mask applied to the tanh layer.
pub(crate) fn loss_and_grad(
    p: &MilParams,
    x: ArrayView2<f64>,
    label: usize,
    mask: Option<&Array2<f64>>,
) -> (f64, MilGradients) {
    let (c, _) = forward_impl(p, x, mask);
    let loss = -c.probs[label].max(1e-300).ln();
    let mut dlogits = c.probs.clone();
    dlogits[label] -= 1.0;
    let dwc = outer(&dlogits, &c.bag);
    let dbc = dlogits.clone();
    let dbag = p.wc.t().dot(&dlogits);
    let da = x.dot(&dbag);
    let mean = c.a.dot(&da);
    let de = &c.a * &(da - mean);
    let dw2 = c.hd.t().dot(&de);
    let mut dh = outer(&de, &p.w2);
    if let Some(m) = mask {
        dh = dh * m;
    }
    let dz = dh * c.h.mapv(|v| 1.0 - v * v);
    let dw1 = dz.t().dot(&x);
    let db1 = dz.sum_axis(Axis(0));
    let std = |a: Array2<f64>| a.as_standard_layout().into_owned();
    (loss, MilGradients { w1: std(dw1), b1: db1, w2: dw2, wc: std(dwc), bc: dbc })
}

fn outer(u: &Array1<f64>, v: &Array1<f64>) -> Array2<f64> {
    let uc = u.view().insert_axis(Axis(1));
    let vr = v.view().insert_axis(Axis(0));
    uc.dot(&vr)
}

struct AdamW {
    m: MilParams,
    v: MilParams,
    t: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, p: &mut MilParams, g: &MilGradients, lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let grads = g.slices();
        let ms = self.m.slices_mut();
        let vs = self.v.slices_mut();
        for (((pp, gg), mm), vv) in p.slices_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..pp.len() {
                pp[i] *= 1.0 - lr * wd;
                mm[i] = Self::BETA1 * mm[i] + (1.0 - Self::BETA1) * gg[i];
                vv[i] = Self::BETA2 * vv[i] + (1.0 - Self::BETA2) * gg[i] * gg[i];
                pp[i] -= lr * (mm[i] / c1) / ((vv[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MilTrainReport {
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
}

/// Trains a MIL head with one update per bag, visiting bags in a seeded
/// shuffled order every epoch.
pub fn mil_train(
    samples: &[Labeled<'_>],
    classes: &[PartId],
    config: &MilConfig,
) -> Result<(MilParams, MilTrainReport), SwitcherError> {
    check_samples(samples, classes)?;
    let dim = samples[0].obs.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MilParams::init(dim, config.hidden, classes.len(), &mut rng);
    let data: Vec<(Array2<f64>, usize)> = samples
        .iter()
        .map(|s| (patch_matrix(s.obs), classes.iter().position(|&c| c == s.label).expect("checked")))
        .collect();
    let mut opt = AdamW { m: params.zeros_like(), v: params.zeros_like(), t: 0 };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let keep = 1.0 - config.dropout;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (x, label) = &data[i];
            let mask = (config.dropout > 0.0).then(|| {
                Array2::from_shape_fn((x.nrows(), config.hidden), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            });
            let (loss, grads) = loss_and_grad(&params, x.view(), *label, mask.as_ref());
            total += loss;
            opt.step(&mut params, &grads, config.learning_rate, config.weight_decay);
        }
        history.push(total / data.len() as f64);
    }
    params.round_f32();
    let correct = data
        .iter()
        .filter(|(x, label)| {
            let (_, fwd) = forward_impl(&params, x.view(), None);
            argmax(&fwd.probs) == *label
        })
        .count();
    Ok((params, MilTrainReport { loss_history: history, train_accuracy: correct as f64 / data.len() as f64 }))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::SourceMeta;

    fn random_obs(rng: &mut ChaCha8Rng, k: usize, d: usize, shift: f32) -> Observation {
        let v: Vec<f32> =
            (0..k * d).map(|i| rng.random_range(-1.0..1.0f32) + if i % d == 0 { shift } else { 0.0 }).collect();
        Observation::new(k, d, v, None, SourceMeta::default()).unwrap()
    }

    #[test]
    fn attention_and_probabilities_normalise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MilParams::init(5, 4, 3, &mut rng);
        let o = random_obs(&mut rng, 7, 5, 0.0);
        let f = mil_forward(&p, &o).unwrap();
        assert!((f.attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((f.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // the bag is the attention-weighted patch sum
        for j in 0..5 {
            let direct: f64 = (0..7).map(|k| f.attention[k] * o.patch(k)[j] as f64).sum();
            assert!((direct - f.bag[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = MilParams::init(4, 3, 3, &mut rng);
        let x = patch_matrix(&random_obs(&mut rng, 5, 4, 0.0));
        let mask = Array2::from_shape_fn((5, 3), |(i, j)| if (i + j) % 4 == 0 { 0.0 } else { 1.0 / 0.9 });
        for m in [None, Some(&mask)] {
            let (_, g) = loss_and_grad(&p, x.view(), 1, m);
            let analytic: Vec<f64> = g.slices().iter().flat_map(|s| s.iter().copied()).collect();
            let mut idx = 0;
            for block in 0..5 {
                let len = p.slices()[block].len();
                for i in 0..len {
                    let h = 1e-6;
                    let orig = p.slices()[block][i];
                    p.slices_mut()[block][i] = orig + h;
                    let (lp, _) = loss_and_grad(&p, x.view(), 1, m);
                    p.slices_mut()[block][i] = orig - h;
                    let (lm, _) = loss_and_grad(&p, x.view(), 1, m);
                    p.slices_mut()[block][i] = orig;
                    let numeric = (lp - lm) / (2.0 * h);
                    let a = analytic[idx];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                    assert!(rel < 1e-5 || (a - numeric).abs() < 1e-9, "block {block} index {i}: {a} vs {numeric}");
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn training_separates_shifted_bags_and_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs: Vec<Observation> =
            (0..12).map(|i| random_obs(&mut rng, 6, 8, if i % 2 == 0 { 2.0 } else { -2.0 })).collect();
        let samples: Vec<Labeled> =
            obs.iter().enumerate().map(|(i, o)| Labeled::new(PartId((i % 2) as u32), o)).collect();
        let cfg = MilConfig { hidden: 8, epochs: 60, learning_rate: 1e-2, ..Default::default() };
        let (p, report) = mil_train(&samples, &[PartId(0), PartId(1)], &cfg).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
        assert!(report.loss_history.last().unwrap() < &report.loss_history[0]);
        let (q, _) = mil_train(&samples, &[PartId(0), PartId(1)], &cfg).unwrap();
        assert_eq!(p, q);
    }
}
